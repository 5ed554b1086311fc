#![no_main]

use libfuzzer_sys::fuzz_target;
use xl3m::backend::wire::decode_score;

// First byte picks the expected vocabulary size.
fuzz_target!(|data: &[u8]| {
    let Some((&v, body)) = data.split_first() else { return };
    let vocab = v as usize % 16 + 1;
    if let Ok(dist) = decode_score(body, vocab) {
        let h = dist.entropy();
        assert!(h >= 0.0 && h <= (vocab as f64).ln() + 1e-9, "entropy {h} for vocab {vocab}");
    }
});
