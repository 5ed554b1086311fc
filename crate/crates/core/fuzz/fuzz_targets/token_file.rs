#![no_main]

use libfuzzer_sys::fuzz_target;
use xl3m::tokens::parse_token_file;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_token_file(text);
    }
});
