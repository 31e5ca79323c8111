#![no_main]

use cellsbi_inference::neural::{decode, to_bytes};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(est) = decode(data) {
        let bytes = to_bytes(&est);
        assert_eq!(decode(&bytes).expect("re-decode"), est);
    }
});
