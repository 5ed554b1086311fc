#![no_main]

use libfuzzer_sys::fuzz_target;
use xl3m::backend::wire::decode_info;

fuzz_target!(|data: &[u8]| {
    if let Ok(info) = decode_info(data) {
        assert!(info.validate().is_ok());
    }
});
