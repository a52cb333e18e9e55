#![no_main]

use libfuzzer_sys::fuzz_target;
use tnbma::bma::GroupSpec;
use tnbma::pipeline::{parse_forecasts, Dataset, ObservationTable};

fuzz_target!(|data: &[u8]| {
    let spec = GroupSpec::parse("hres:1,eps:3,gefs:2").unwrap();
    if let Ok(table) = parse_forecasts(data, "fuzz.csv", &spec) {
        // Parsed tables must assemble without panicking.
        let _ = Dataset::assemble(&spec, &table, &ObservationTable::new());
    }
});
