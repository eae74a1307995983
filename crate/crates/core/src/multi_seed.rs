//! Repeating train and eval over several seeds.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig, EvalReport};
use crate::trainer::{fit, TrainConfig, TrainLog};
use crate::types::{EmbeddingSet, PairSet};

/// Seeds used when none are given.
pub const DEFAULT_SEEDS: [u64; 3] = [42, 123, 456];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator); 0 for a single value.
    pub sd: f64,
    pub n: usize,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n < 2 {
            0.0
        } else {
            libm::sqrt(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64)
        };
        Some(Self { mean, sd, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub overall_auc: Option<f64>,
    pub cb_auc: Option<f64>,
    /// Set when training or evaluation failed for this seed.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiSeedSummary {
    pub runs: Vec<SeedOutcome>,
    pub overall_auc: Option<MeanSd>,
    pub cb_auc: Option<MeanSd>,
}

impl MultiSeedSummary {
    /// Aggregates successful runs; failed seeds stay listed with their error.
    pub fn from_runs(runs: Vec<SeedOutcome>) -> Self {
        let overall: Vec<f64> = runs.iter().filter_map(|r| r.overall_auc).collect();
        let cb: Vec<f64> = runs.iter().filter_map(|r| r.cb_auc).collect();
        Self {
            overall_auc: MeanSd::of(&overall),
            cb_auc: MeanSd::of(&cb),
            runs,
        }
    }
}

/// Trains and evaluates one seed.
#[allow(clippy::too_many_arguments)]
pub fn run_seed(
    train_pairs: &PairSet,
    embeddings: &EmbeddingSet,
    eval_pos: &PairSet,
    eval_neg: &PairSet,
    degrees: Option<&[u32]>,
    config: &TrainConfig,
    eval_config: &EvalConfig,
    seed: u64,
) -> Result<(TrainLog, EvalReport)> {
    let mut cfg = config.clone();
    cfg.seed = seed;
    let (model, log) = fit(train_pairs, embeddings, &cfg, &mut |_| {})?;
    let report = evaluate(&model, embeddings, eval_pos, eval_neg, degrees, eval_config)?;
    Ok((log, report))
}

/// Runs every seed in turn. A failing seed is recorded and the rest still run.
#[allow(clippy::too_many_arguments)]
pub fn train_multi_seed(
    train_pairs: &PairSet,
    embeddings: &EmbeddingSet,
    eval_pos: &PairSet,
    eval_neg: &PairSet,
    degrees: Option<&[u32]>,
    config: &TrainConfig,
    eval_config: &EvalConfig,
    seeds: &[u64],
) -> Result<MultiSeedSummary> {
    if seeds.len() < 2 {
        return Err(Error::Config("multi-seed runs need at least two seeds".into()));
    }
    let runs = seeds
        .iter()
        .map(|&seed| match run_seed(train_pairs, embeddings, eval_pos, eval_neg, degrees, config, eval_config, seed) {
            Ok((_, r)) => SeedOutcome {
                seed,
                overall_auc: Some(r.overall_auc),
                cb_auc: r.cb_auc,
                error: None,
            },
            Err(e) => SeedOutcome {
                seed,
                overall_auc: None,
                cb_auc: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    Ok(MultiSeedSummary::from_runs(runs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_sd() {
        let m = MeanSd::of(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.mean, 2.0);
        assert_eq!(m.sd, 1.0);
        assert_eq!(MeanSd::of(&[0.5, 0.5, 0.5]).unwrap().sd, 0.0);
        assert!(MeanSd::of(&[]).is_none());
    }
}
