#![no_main]

use etnmpc::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::parse(text) {
        // anything accepted must survive a round trip unchanged
        let again = RunConfig::parse(&cfg.to_text()).expect("serialized config must parse");
        assert_eq!(again, cfg);
    }
});
