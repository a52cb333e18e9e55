#![no_main]

use libfuzzer_sys::fuzz_target;
use tnbma::pipeline::parse_model_document;

fuzz_target!(|data: &str| {
    if let Ok(doc) = parse_model_document(data) {
        // Accepted documents survive a round trip.
        let text = doc.to_json().unwrap();
        assert_eq!(parse_model_document(&text).unwrap(), doc);
    }
});
