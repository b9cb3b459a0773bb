#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((names, m)) = redfa::io::spectra::read_numeric_table(data) {
        assert_eq!(m.ncols(), names.len());
    }
});
