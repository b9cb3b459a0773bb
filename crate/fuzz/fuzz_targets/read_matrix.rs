#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((labels, m)) = redfa::io::tables::read_matrix_csv(data) {
        assert_eq!(m.nrows(), labels.len());
        assert!(m.iter().all(|v| v.is_finite()));
    }
});
