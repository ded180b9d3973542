#![no_main]

use etnmpc::config::{parse_region_block, region_block};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(region) = parse_region_block(text) {
        let again = parse_region_block(&region_block(&region)).expect("written block must parse");
        assert_eq!(again, region);
    }
});
