#![no_main]

use libfuzzer_sys::fuzz_target;
use ser_core::corpus::FieldMapping;
use ser_core::variant::Variant;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    let _ = s.parse::<FieldMapping>();
    if let Ok(v) = s.parse::<Variant>() {
        assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
    }
});
