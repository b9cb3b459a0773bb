#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(cfg) = redfa::io::RunConfig::from_toml_str(text) {
        let _ = cfg.validate();
        let _ = cfg.hash();
    }
});
