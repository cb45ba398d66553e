#![no_main]

use libfuzzer_sys::fuzz_target;
use ser_core::corpus::{Domain, DomainDataset, FieldMapping, Split};

fuzz_target!(|data: &[u8]| {
    let Ok(ds) = DomainDataset::parse(data, Domain::Target, &FieldMapping::default()) else {
        return;
    };
    assert!(!ds.is_empty());
    if let Ok(split) = ds.split(7) {
        let total: usize = [Split::Train, Split::Validation, Split::Test]
            .into_iter()
            .map(|s| split.ids_in(s).len())
            .sum();
        assert_eq!(total, split.len());
    }
});
