//! Run configuration: one JSON file with a section per stage. Missing keys
//! take their defaults, unknown keys are rejected.

use std::path::{Path, PathBuf};

use cal_core::diagnostics::Thresholds;
use cal_core::eval::EvalConfig;
use cal_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Embedding TSV, or a `CALEMB1` file written by `ingest`.
    pub embeddings: PathBuf,
    pub associations: PathBuf,
    #[serde(default)]
    pub mapping_file: Option<PathBuf>,
    /// Skip the first line of the embedding TSV.
    #[serde(default)]
    pub header: bool,
    /// `null` keeps the raw columns (rows are still L2-normalized).
    #[serde(default = "default_pca")]
    pub pca_components: Option<usize>,
    #[serde(default = "default_channel")]
    pub confidence_channel: String,
    #[serde(default = "default_confidence")]
    pub confidence_min: u16,
    /// Threshold for cross-boundary statistics in the dataset summary.
    #[serde(default = "default_cb")]
    pub cb_threshold: f64,
}

fn default_pca() -> Option<usize> {
    Some(50)
}
fn default_channel() -> String {
    "combined_score".into()
}
fn default_confidence() -> u16 {
    900
}
fn default_cb() -> f64 {
    0.2
}

/// Evaluation negatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NegativeConfig {
    pub multiplier: usize,
    pub cap: usize,
    pub seed: u64,
    /// Also score against degree-matched negatives.
    pub degree_matched: bool,
}

impl Default for NegativeConfig {
    fn default() -> Self {
        Self {
            multiplier: 5,
            cap: 50_000,
            seed: 42,
            degree_matched: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub split_fraction: f64,
    pub split_seed: u64,
    pub shuffle_seed: u64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            split_fraction: 0.7,
            split_seed: 11,
            shuffle_seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub confidence: Vec<u16>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            confidence: vec![400, 700, 900],
        }
    }
}

fn default_seeds() -> Vec<u64> {
    cal_core::multi_seed::DEFAULT_SEEDS.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub negatives: NegativeConfig,
    #[serde(default)]
    pub diagnostics: Thresholds,
    #[serde(default)]
    pub ablation: AblationConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    /// Seeds for multi-seed runs.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

impl RunConfig {
    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::ConfigFile {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`; relative data paths are taken relative to its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_json(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.data.resolve_paths(base);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if let Some(k) = self.data.pca_components {
            if k == 0 {
                return Err(CliError::Config("pca_components must be positive".into()));
            }
        }
        if self.negatives.multiplier == 0 || self.negatives.cap == 0 {
            return Err(CliError::Config("negative multiplier and cap must be positive".into()));
        }
        if !(self.ablation.split_fraction > 0.0 && self.ablation.split_fraction < 1.0) {
            return Err(CliError::Config("split_fraction must lie in (0, 1)".into()));
        }
        if self.eval.n_quantiles == 0 {
            return Err(CliError::Config("n_quantiles must be positive".into()));
        }
        Ok(())
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the resolved config.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

impl DataConfig {
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.embeddings);
        fix(&mut self.associations);
        if let Some(m) = self.mapping_file.as_mut() {
            fix(m);
        }
    }

    pub fn inputs(&self) -> Vec<&Path> {
        let mut v = vec![self.embeddings.as_path(), self.associations.as_path()];
        if let Some(m) = &self.mapping_file {
            v.push(m);
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_missing_sections() {
        let cfg = RunConfig::from_json(r#"{"data": {"embeddings": "e.tsv", "associations": "a.txt"}}"#, Path::new("x"))
            .unwrap();
        assert_eq!(cfg.train.batch_size, 512);
        assert_eq!(cfg.data.pca_components, Some(50));
        assert_eq!(cfg.negatives.cap, 50_000);
        assert_eq!(cfg.seeds, vec![42, 123, 456]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = r#"{"data": {"embeddings": "e", "associations": "a"}, "train": {"epochz": 3}}"#;
        assert!(matches!(RunConfig::from_json(bad, Path::new("x")), Err(CliError::ConfigFile { .. })));
        let bad = r#"{"data": {"embeddings": "e", "associations": "a"}, "extra": 1}"#;
        assert!(RunConfig::from_json(bad, Path::new("x")).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let text = r#"{"data": {"embeddings": "e", "associations": "a"}}"#;
        let a = RunConfig::from_json(text, Path::new("x")).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.train.seed = 7;
        assert_ne!(a.hash(), b.hash());
    }
}
