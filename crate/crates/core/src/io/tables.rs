//! Result tables. Every file starts with a `#` provenance line; numbers are written
//! in shortest round-trip scientific notation.

use std::fs;
use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::Partition;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
}

impl Provenance {
    pub fn header_line(&self) -> String {
        format!(
            "# redfa {} seed={} config={}\n",
            env!("CARGO_PKG_VERSION"),
            self.seed,
            self.config_hash
        )
    }
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Renders a table with a provenance line and a header row.
pub fn render_table(prov: &Provenance, header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = prov.header_line();
    let join = |cells: &mut dyn Iterator<Item = String>| cells.collect::<Vec<_>>().join(",");
    out.push_str(&join(&mut header.iter().map(|h| csv_field(h))));
    out.push('\n');
    for row in rows {
        out.push_str(&join(&mut row.iter().map(|c| csv_field(c))));
        out.push('\n');
    }
    out
}

pub fn write_table(path: &Path, prov: &Provenance, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    fs::write(path, render_table(prov, header, rows))?;
    Ok(())
}

pub fn write_matrix_csv(path: &Path, prov: &Provenance, labels: &[String], m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != labels.len() || m.ncols() != labels.len() {
        return Err(Error::Internal("matrix and labels disagree in size".into()));
    }
    let mut header = vec!["variable"];
    header.extend(labels.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = (0..m.nrows())
        .map(|i| {
            std::iter::once(labels[i].clone())
                .chain(m.row(i).iter().map(|&v| fmt_f64(v)))
                .collect()
        })
        .collect();
    write_table(path, prov, &header, &rows)
}

pub fn write_partition_csv(path: &Path, prov: &Provenance, labels: &[String], partition: &Partition) -> Result<()> {
    let canon = partition.canonical();
    let rows: Vec<Vec<String>> = labels
        .iter()
        .zip(canon.assignment())
        .map(|(l, &c)| vec![l.clone(), (c + 1).to_string()])
        .collect();
    write_table(path, prov, &["variable", "cluster"], &rows)
}

fn reader_records<R: Read>(reader: R) -> Result<Vec<(usize, csv::StringRecord)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        out.push((line, rec));
    }
    Ok(out)
}

/// Reads a square labelled matrix written by [`write_matrix_csv`].
pub fn read_matrix_csv<R: Read>(reader: R) -> Result<(Vec<String>, DMatrix<f64>)> {
    let recs = reader_records(reader)?;
    let Some((_, header)) = recs.first() else {
        return Err(Error::InvalidInput("matrix file is empty".into()));
    };
    let labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let p = labels.len();
    if recs.len() - 1 != p {
        return Err(Error::InvalidInput(format!(
            "matrix has {p} columns but {} rows",
            recs.len() - 1
        )));
    }
    let mut m = DMatrix::zeros(p, p);
    for (i, (line, rec)) in recs[1..].iter().enumerate() {
        if rec.len() != p + 1 {
            return Err(Error::Parse {
                line: *line,
                column: rec.len().min(p + 1) + 1,
                message: format!("expected {} fields, found {}", p + 1, rec.len()),
            });
        }
        if rec[0] != labels[i] {
            return Err(Error::Parse {
                line: *line,
                column: 1,
                message: format!("row label `{}` does not match column `{}`", &rec[0], labels[i]),
            });
        }
        for j in 0..p {
            m[(i, j)] = rec[j + 1]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    line: *line,
                    column: j + 2,
                    message: format!("`{}` is not a finite number", &rec[j + 1]),
                })?;
        }
    }
    Ok((labels, m))
}

/// Reads `variable,cluster` rows; clusters come back 0-based.
pub fn read_partition_csv<R: Read>(reader: R) -> Result<(Vec<String>, Vec<usize>)> {
    let recs = reader_records(reader)?;
    if recs.is_empty() {
        return Err(Error::InvalidInput("partition file is empty".into()));
    }
    let mut labels = Vec::with_capacity(recs.len() - 1);
    let mut clusters = Vec::with_capacity(recs.len() - 1);
    for (line, rec) in &recs[1..] {
        if rec.len() != 2 {
            return Err(Error::Parse {
                line: *line,
                column: rec.len().min(2) + 1,
                message: format!("expected 2 fields, found {}", rec.len()),
            });
        }
        let c: usize = rec[1].parse().ok().filter(|&c| c >= 1).ok_or_else(|| Error::Parse {
            line: *line,
            column: 2,
            message: format!("`{}` is not a positive cluster number", &rec[1]),
        })?;
        labels.push(rec[0].to_string());
        clusters.push(c - 1);
    }
    if labels.is_empty() {
        return Err(Error::InvalidInput("partition file has no rows".into()));
    }
    Ok((labels, clusters))
}
