#![no_main]

use libfuzzer_sys::fuzz_target;
use ser_core::checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = checkpoint::decode(data) {
        let again = checkpoint::encode(&ck.model, &ck.vocab_hash, &ck.run_config);
        let ck2 = checkpoint::decode(&again).expect("re-encoded checkpoint decodes");
        assert_eq!(again, checkpoint::encode(&ck2.model, &ck2.vocab_hash, &ck2.run_config));
    }
});
