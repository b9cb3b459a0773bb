//! Wavenumber intervals excluded before analysis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed interval `[lo, hi]`, written `[lo, hi]` in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Config(format!("band [{lo}, {hi}] needs finite lo < hi")));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

impl TryFrom<[f64; 2]> for Band {
    type Error = Error;

    fn try_from(v: [f64; 2]) -> Result<Self> {
        Band::new(v[0], v[1])
    }
}

impl From<Band> for [f64; 2] {
    fn from(b: Band) -> Self {
        [b.lo, b.hi]
    }
}

/// Noisy regions of mid-infrared milk spectra (cm⁻¹).
pub fn default_bands() -> Vec<Band> {
    vec![
        Band { lo: 1592.0, hi: 1720.0 },
        Band { lo: 2996.0, hi: 3698.0 },
        Band { lo: 3818.0, hi: 5010.0 },
    ]
}

pub fn excluded(bands: &[Band], x: f64) -> bool {
    bands.iter().any(|b| b.contains(x))
}

/// Parses one band per line as `lo,hi` or `lo hi`. Blank lines and `#` comments
/// are ignored.
pub fn parse_bands(text: &str) -> Result<Vec<Band>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        let err = |column: usize, message: String| Error::Parse {
            line: idx + 1,
            column,
            message,
        };
        if fields.len() != 2 {
            return Err(err(1, format!("expected two numbers, found {}", fields.len())));
        }
        let num = |i: usize| {
            fields[i]
                .parse::<f64>()
                .map_err(|_| err(i + 1, format!("`{}` is not a number", fields[i])))
        };
        let (lo, hi) = (num(0)?, num(1)?);
        let band = Band::new(lo, hi).map_err(|_| err(1, format!("band [{lo}, {hi}] needs lo < hi")))?;
        out.push(band);
    }
    Ok(out)
}
