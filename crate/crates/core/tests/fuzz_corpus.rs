//! Replays the checked-in fuzz corpora through the same entry points as the fuzz
//! targets, so parser regressions show up in a plain test run.

use std::fs;
use std::path::{Path, PathBuf};

use redfa::io::{default_bands, ingest_reader, parse_bands, IngestOptions, RunConfig};
use redfa::synth::StudyConfig;

fn corpus(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .map(|p| {
            let bytes = fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "empty corpus for {target}");
    out
}

#[test]
fn ingest_spectra_corpus() {
    let mut accepted = 0;
    for (_, bytes) in corpus("ingest_spectra") {
        let Some((&flags, body)) = bytes.split_first() else {
            continue;
        };
        let opts = IngestOptions {
            group_by: (flags & 1 != 0).then(|| "diet".to_string()),
            bands: if flags & 2 != 0 { default_bands() } else { Vec::new() },
            label_map: [("a".to_string(), "b".to_string())].into_iter().collect(),
            transpose: flags & 4 != 0,
        };
        if let Ok(ing) = ingest_reader(body, &opts) {
            accepted += 1;
            assert!(ing.groups.iter().all(|g| g.rows.len() == g.data.n()));
        }
    }
    assert!(accepted >= 2);
}

#[test]
fn text_corpora() {
    for (path, bytes) in corpus("parse_bands") {
        let text = String::from_utf8_lossy(&bytes);
        let name = path.file_name().unwrap().to_str().unwrap();
        assert_eq!(parse_bands(&text).is_ok(), name == "defaults", "{name}");
    }
    for (path, bytes) in corpus("run_config") {
        let cfg = RunConfig::from_toml_str(&String::from_utf8_lossy(&bytes));
        assert!(cfg.is_ok(), "{}: {:?}", path.display(), cfg.err());
    }
    for (path, bytes) in corpus("study_config") {
        let name = path.file_name().unwrap().to_str().unwrap();
        let cfg = StudyConfig::from_toml_str(&String::from_utf8_lossy(&bytes));
        assert_eq!(cfg.is_ok(), name == "toy", "{name}");
    }
}

#[test]
fn table_corpora() {
    for (path, bytes) in corpus("read_partition") {
        let name = path.file_name().unwrap().to_str().unwrap();
        assert_eq!(
            redfa::io::tables::read_partition_csv(&bytes[..]).is_ok(),
            name == "ok",
            "{name}"
        );
    }
    for (path, bytes) in corpus("read_matrix") {
        let name = path.file_name().unwrap().to_str().unwrap();
        assert_eq!(
            redfa::io::tables::read_matrix_csv(&bytes[..]).is_ok(),
            name == "ok",
            "{name}"
        );
    }
    for (path, bytes) in corpus("numeric_table") {
        let name = path.file_name().unwrap().to_str().unwrap();
        assert_eq!(
            redfa::io::spectra::read_numeric_table(&bytes[..]).is_ok(),
            name == "toy",
            "{name}"
        );
    }
}
