#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((labels, clusters)) = redfa::io::tables::read_partition_csv(data) {
        assert_eq!(labels.len(), clusters.len());
    }
});
