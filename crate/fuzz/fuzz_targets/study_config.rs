#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let _ = redfa::synth::StudyConfig::from_toml_str(text);
});
