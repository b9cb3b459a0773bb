#![no_main]

use libfuzzer_sys::fuzz_target;
use redfa::io::{default_bands, ingest_reader, IngestOptions};

// The first byte picks the options; the rest is the CSV.
fuzz_target!(|data: &[u8]| {
    let Some((&flags, body)) = data.split_first() else {
        return;
    };
    let opts = IngestOptions {
        group_by: (flags & 1 != 0).then(|| "diet".to_string()),
        bands: if flags & 2 != 0 { default_bands() } else { Vec::new() },
        label_map: [("a".to_string(), "b".to_string())].into_iter().collect(),
        transpose: flags & 4 != 0,
    };
    if let Ok(ing) = ingest_reader(body, &opts) {
        for g in &ing.groups {
            assert!(g.data.n() >= 2);
            assert_eq!(g.rows.len(), g.data.n());
        }
    }
});
