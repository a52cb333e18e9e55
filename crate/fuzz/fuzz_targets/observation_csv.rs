#![no_main]

use libfuzzer_sys::fuzz_target;
use tnbma::pipeline::parse_observations;

fuzz_target!(|data: &[u8]| {
    if let Ok(table) = parse_observations(data, "fuzz.csv") {
        assert!(table.values().flatten().all(|v| *v > 0.0 && v.is_finite()));
    }
});
