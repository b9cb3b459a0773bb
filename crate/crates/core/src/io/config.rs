//! Run configuration for the analysis workflow.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::bands::{default_bands, Band};
use super::spectra::IngestOptions;
use crate::error::{Error, Result};
use crate::model::{DataMatrix, Hyperparameters};
use crate::sampler::SamplerConfig;
use crate::select::init::{default_g_max, DEFAULT_K_MAX};
use crate::select::{MomentScale, SearchOptions};

/// Prior settings; unset values fall back to the defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperOverrides {
    pub sigma_lambda: Option<f64>,
    pub alpha: Option<f64>,
    pub alpha_z: Option<f64>,
}

impl HyperOverrides {
    pub fn resolve(&self, data: &DataMatrix) -> Result<Hyperparameters> {
        Hyperparameters::from_data(
            data,
            self.sigma_lambda.unwrap_or(Hyperparameters::DEFAULT_SIGMA_LAMBDA),
            self.alpha.unwrap_or(Hyperparameters::DEFAULT_ALPHA),
            self.alpha_z.unwrap_or(Hyperparameters::DEFAULT_ALPHA_Z),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: PathBuf,
    pub group_by: Option<String>,
    pub bands: Vec<Band>,
    pub label_map: BTreeMap<String, String>,
    pub transpose: bool,
    pub hyper: HyperOverrides,
    pub sampler: SamplerConfig,
    pub k_max: usize,
    /// Defaults to `min(p, 30)`.
    pub g_max: Option<usize>,
    pub search: SearchOptions,
    pub moment_scale: MomentScale,
    /// Output directory; not part of the configuration hash.
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::new(),
            group_by: None,
            bands: default_bands(),
            label_map: BTreeMap::new(),
            transpose: false,
            hyper: HyperOverrides::default(),
            sampler: SamplerConfig::default(),
            k_max: DEFAULT_K_MAX,
            g_max: None,
            search: SearchOptions::default(),
            moment_scale: MomentScale::Log,
            out: PathBuf::new(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input.as_os_str().is_empty() {
            return Err(Error::Config("input path is empty".into()));
        }
        if self.out.as_os_str().is_empty() {
            return Err(Error::Config("output directory is empty".into()));
        }
        if self.k_max == 0 || self.g_max == Some(0) {
            return Err(Error::Config("k_max and g_max must be at least 1".into()));
        }
        for b in &self.bands {
            Band::new(b.lo, b.hi)?;
        }
        self.sampler.validate()
    }

    pub fn ingest_options(&self) -> IngestOptions {
        IngestOptions {
            group_by: self.group_by.clone(),
            bands: self.bands.clone(),
            label_map: self.label_map.clone(),
            transpose: self.transpose,
        }
    }

    pub fn g_max_for(&self, p: usize) -> usize {
        self.g_max.unwrap_or_else(|| default_g_max(p)).min(p)
    }

    /// SHA-256 of the configuration with the output directory cleared.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        config_hash(&c)
    }
}

/// Hex SHA-256 of the JSON serialization of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("configuration serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}
