#![no_main]

use libfuzzer_sys::fuzz_target;
use xl3m::eval::qa::{parse_qa_jsonl, parse_qa_line};

fuzz_target!(|data: &[u8]| {
    let _ = parse_qa_jsonl(data);
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_qa_line(text);
    }
});
