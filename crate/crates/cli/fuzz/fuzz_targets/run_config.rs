#![no_main]

use libfuzzer_sys::fuzz_target;
use xl3m_cli::RunConfig;

// Anything that parses must survive a dump and reload unchanged.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::from_json(text) {
        let again = RunConfig::from_json(&cfg.to_json()).expect("dumped config parses");
        assert_eq!(format!("{cfg:?}"), format!("{again:?}"));
        let _ = cfg.pipeline().validate();
    }
});
