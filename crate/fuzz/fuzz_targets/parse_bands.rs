#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(bands) = redfa::io::parse_bands(text) {
        for b in bands {
            assert!(b.lo <= b.hi);
        }
    }
});
