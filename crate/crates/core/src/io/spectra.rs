//! Spectra CSV ingestion.
//!
//! Rows are samples. Header cells that parse as numbers are wavenumbers; every other
//! column is a label column. With `transpose`, rows are wavenumbers instead: the
//! first column holds the wavenumber and each further column is one sample.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::bands::{excluded, Band};
use crate::error::{Error, Result};
use crate::model::DataMatrix;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestOptions {
    pub group_by: Option<String>,
    pub bands: Vec<Band>,
    /// Renames group values before splitting, e.g. merging two diets into one.
    pub label_map: BTreeMap<String, String>,
    pub transpose: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    /// Group value, or `None` when no group-by column was given.
    pub name: Option<String>,
    /// Centered spectra of the group's rows.
    pub data: DataMatrix,
    /// Input row (sample) indices, 0-based, in file order.
    pub rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub groups: Vec<Group>,
    pub n_samples: usize,
    pub spectral_columns: usize,
    pub excluded_columns: usize,
}

fn parse_header_number(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_cell(s: &str, line: usize, column: usize) -> Result<f64> {
    let t = s.trim();
    t.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parse {
            line,
            column,
            message: format!("`{t}` is not a finite number"),
        })
}

fn records<R: Read>(reader: R) -> Result<Vec<(usize, csv::StringRecord)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| match e.position() {
            Some(pos) => Error::Parse {
                line: pos.line() as usize,
                column: 0,
                message: e.to_string(),
            },
            None => Error::Csv(e),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        out.push((line, rec));
    }
    Ok(out)
}

pub fn ingest_csv(path: &Path, opts: &IngestOptions) -> Result<Ingested> {
    let file = std::fs::File::open(path)?;
    ingest_reader(std::io::BufReader::new(file), opts)
}

pub fn ingest_reader<R: Read>(reader: R, opts: &IngestOptions) -> Result<Ingested> {
    let recs = records(reader)?;
    let (columns, values, label_cols) = if opts.transpose {
        if opts.group_by.is_some() {
            return Err(Error::Usage("group-by is not available with transposed input".into()));
        }
        transposed(&recs)?
    } else {
        row_major(&recs)?
    };
    let spectral_columns = columns.len();
    let keep: Vec<usize> = (0..spectral_columns)
        .filter(|&c| !excluded(&opts.bands, columns[c].1))
        .collect();
    if keep.is_empty() {
        return Err(Error::Usage(
            "every spectral column falls inside an exclusion band".into(),
        ));
    }
    let labels: Vec<String> = keep.iter().map(|&c| columns[c].0.clone()).collect();
    let n_samples = values.len();

    let mut by_group: BTreeMap<Option<String>, Vec<usize>> = BTreeMap::new();
    match &opts.group_by {
        None => {
            by_group.insert(None, (0..n_samples).collect());
        }
        Some(col) => {
            let idx = label_cols
                .iter()
                .position(|(name, _)| name == col)
                .ok_or_else(|| Error::Usage(format!("group-by column `{col}` not found")))?;
            for (row, value) in label_cols[idx].1.iter().enumerate() {
                let mapped = opts.label_map.get(value).unwrap_or(value).clone();
                by_group.entry(Some(mapped)).or_default().push(row);
            }
        }
    }
    let mut groups = Vec::with_capacity(by_group.len());
    for (name, rows) in by_group {
        if rows.len() < 2 {
            return Err(Error::Usage(format!(
                "group {} has {} sample(s); at least two are needed",
                name.as_deref().unwrap_or("<all>"),
                rows.len()
            )));
        }
        let m = DMatrix::from_fn(rows.len(), keep.len(), |i, j| values[rows[i]][keep[j]]);
        groups.push(Group {
            name,
            data: DataMatrix::new(m, labels.clone())?.center(),
            rows,
        });
    }
    Ok(Ingested {
        groups,
        n_samples,
        spectral_columns,
        excluded_columns: spectral_columns - keep.len(),
    })
}

type Parsed = (Vec<(String, f64)>, Vec<Vec<f64>>, Vec<(String, Vec<String>)>);

fn row_major(recs: &[(usize, csv::StringRecord)]) -> Result<Parsed> {
    let Some((_, header)) = recs.first() else {
        return Err(Error::Usage("input has no header row".into()));
    };
    let mut spectral = Vec::new();
    let mut label_idx = Vec::new();
    for (c, cell) in header.iter().enumerate() {
        match parse_header_number(cell) {
            Some(w) => spectral.push((c, cell.to_string(), w)),
            None => label_idx.push((c, cell.to_string())),
        }
    }
    if spectral.is_empty() {
        return Err(Error::Usage("no numeric wavenumber columns in the header".into()));
    }
    let mut values = Vec::with_capacity(recs.len() - 1);
    let mut labels: Vec<(String, Vec<String>)> = label_idx.iter().map(|(_, n)| (n.clone(), Vec::new())).collect();
    for (line, rec) in &recs[1..] {
        if rec.len() != header.len() {
            return Err(Error::Parse {
                line: *line,
                column: rec.len().min(header.len()) + 1,
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        let mut row = Vec::with_capacity(spectral.len());
        for (c, _, _) in &spectral {
            row.push(parse_cell(&rec[*c], *line, c + 1)?);
        }
        values.push(row);
        for (slot, (c, _)) in labels.iter_mut().zip(&label_idx) {
            slot.1.push(rec[*c].to_string());
        }
    }
    if values.is_empty() {
        return Err(Error::Usage("input has no data rows".into()));
    }
    let columns = spectral.into_iter().map(|(_, s, w)| (s, w)).collect();
    Ok((columns, values, labels))
}

fn transposed(recs: &[(usize, csv::StringRecord)]) -> Result<Parsed> {
    let Some((_, header)) = recs.first() else {
        return Err(Error::Usage("input has no header row".into()));
    };
    let n = header.len().saturating_sub(1);
    if n == 0 {
        return Err(Error::Usage("transposed input has no sample columns".into()));
    }
    let mut columns = Vec::new();
    let mut values = vec![Vec::with_capacity(recs.len() - 1); n];
    for (line, rec) in &recs[1..] {
        if rec.len() != header.len() {
            return Err(Error::Parse {
                line: *line,
                column: rec.len().min(header.len()) + 1,
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        let w = parse_header_number(&rec[0]).ok_or_else(|| Error::Parse {
            line: *line,
            column: 1,
            message: format!("`{}` is not a wavenumber", &rec[0]),
        })?;
        columns.push((rec[0].to_string(), w));
        for (i, v) in values.iter_mut().enumerate() {
            v.push(parse_cell(&rec[i + 1], *line, i + 2)?);
        }
    }
    if columns.is_empty() {
        return Err(Error::Usage("transposed input has no wavenumber rows".into()));
    }
    Ok((columns, values, Vec::new()))
}

/// Reads a numeric table with a header row of names, one column per variable.
pub fn read_numeric_table<R: Read>(reader: R) -> Result<(Vec<String>, DMatrix<f64>)> {
    let recs = records(reader)?;
    let Some((_, header)) = recs.first() else {
        return Err(Error::Usage("table has no header row".into()));
    };
    let names: Vec<String> = header.iter().map(str::to_string).collect();
    let rows = recs.len() - 1;
    let mut m = DMatrix::zeros(rows, names.len());
    for (i, (line, rec)) in recs[1..].iter().enumerate() {
        if rec.len() != names.len() {
            return Err(Error::Parse {
                line: *line,
                column: rec.len().min(names.len()) + 1,
                message: format!("expected {} fields, found {}", names.len(), rec.len()),
            });
        }
        for (j, cell) in rec.iter().enumerate() {
            m[(i, j)] = parse_cell(cell, *line, j + 1)?;
        }
    }
    Ok((names, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::bands::default_bands;

    const SAMPLE: &str = "\
# two diets
id,diet,1000,1600,2000
a,GRS,1.0,9.0,2.0
b,TMR,2.0,9.5,4.0
c,CLV,3.0,9.0,6.0
d,TMR,5.0,8.0,1.0
";

    #[test]
    fn splits_groups_and_drops_bands() {
        let opts = IngestOptions {
            group_by: Some("diet".into()),
            bands: default_bands(),
            label_map: [("GRS", "Pasture"), ("CLV", "Pasture")]
                .iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
            transpose: false,
        };
        let ing = ingest_reader(SAMPLE.as_bytes(), &opts).unwrap();
        assert_eq!(ing.spectral_columns, 3);
        assert_eq!(ing.excluded_columns, 1);
        assert_eq!(ing.groups.len(), 2);
        assert_eq!(ing.groups.iter().map(|g| g.data.n()).sum::<usize>(), 4);
        let pasture = &ing.groups[0];
        assert_eq!(pasture.name.as_deref(), Some("Pasture"));
        assert_eq!(pasture.rows, vec![0, 2]);
        assert_eq!(pasture.data.labels(), &["1000".to_string(), "2000".to_string()]);
        assert_eq!(pasture.data.values()[(0, 0)], -1.0);
        assert!(pasture.data.is_centered());
    }

    #[test]
    fn no_bands_keeps_everything() {
        let ing = ingest_reader(SAMPLE.as_bytes(), &IngestOptions::default()).unwrap();
        assert_eq!(ing.groups.len(), 1);
        assert_eq!(ing.groups[0].data.p(), 3);
        assert_eq!(ing.groups[0].data.n(), 4);
    }

    #[test]
    fn bad_cell_reports_position() {
        let text = "diet,1000,1100\nx,1.0,2.0\ny,oops,3.0\n";
        match ingest_reader(text.as_bytes(), &IngestOptions::default()) {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (3, 2)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn singleton_group_is_a_usage_error() {
        let text = "diet,1000\na,1\na,2\nb,3\n";
        let opts = IngestOptions {
            group_by: Some("diet".into()),
            ..Default::default()
        };
        assert!(matches!(ingest_reader(text.as_bytes(), &opts), Err(Error::Usage(_))));
        let missing = IngestOptions {
            group_by: Some("breed".into()),
            ..Default::default()
        };
        assert!(matches!(ingest_reader(text.as_bytes(), &missing), Err(Error::Usage(_))));
    }

    #[test]
    fn transposed_input_matches_row_major() {
        let rows = "1000,1100,1200\n1,2,3\n4,6,5\n0,1,1\n";
        let cols = "wavenumber,s1,s2,s3\n1000,1,4,0\n1100,2,6,1\n1200,3,5,1\n";
        let a = ingest_reader(rows.as_bytes(), &IngestOptions::default()).unwrap();
        let b = ingest_reader(
            cols.as_bytes(),
            &IngestOptions {
                transpose: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(a.groups[0].data, b.groups[0].data);
    }

    #[test]
    fn numeric_table() {
        let (names, m) = read_numeric_table("fat,protein\n1.5,3\n2,4e-1\n".as_bytes()).unwrap();
        assert_eq!(names, vec!["fat", "protein"]);
        assert_eq!(m[(1, 1)], 0.4);
        assert!(read_numeric_table("a\nx\n".as_bytes()).is_err());
    }
}
