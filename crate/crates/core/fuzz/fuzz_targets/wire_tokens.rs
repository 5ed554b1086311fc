#![no_main]

use libfuzzer_sys::fuzz_target;
use xl3m::backend::wire::decode_tokens;

fuzz_target!(|data: &[u8]| {
    let _ = decode_tokens(data);
});
