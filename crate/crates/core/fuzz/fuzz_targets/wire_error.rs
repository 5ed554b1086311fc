#![no_main]

use libfuzzer_sys::fuzz_target;
use xl3m::backend::wire::decode_error;

fuzz_target!(|data: &[u8]| {
    let _ = decode_error(data, 5000, 4096).to_string();
});
