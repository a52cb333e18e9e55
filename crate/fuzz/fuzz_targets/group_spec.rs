#![no_main]

use libfuzzer_sys::fuzz_target;
use tnbma::bma::GroupSpec;

fuzz_target!(|data: &str| {
    if let Ok(spec) = GroupSpec::parse(data) {
        let again = GroupSpec::parse(&spec.to_string()).unwrap();
        assert_eq!(again, spec);
    }
});
