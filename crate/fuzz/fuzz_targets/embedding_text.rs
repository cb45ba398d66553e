#![no_main]

use libfuzzer_sys::fuzz_target;
use ser_core::corpus::EmbeddingTable;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = EmbeddingTable::parse(data) {
        let back = EmbeddingTable::parse(t.to_text().as_bytes()).expect("own output parses");
        assert_eq!(t, back);
    }
});
