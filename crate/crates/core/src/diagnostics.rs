//! Pre-flight checks on a dataset and the verdict of the shuffled ablation.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{auc, EvalReport};
use crate::rng::SeededRng;
use crate::sampler::sample_eval_negatives;
use crate::types::{AssociationGraph, EmbeddingSet, PairIndex, PairSet};

pub const CHECK_COSINE_AUC: &str = "cosine_auc";
pub const CHECK_COSINE_FRACTION: &str = "positive_cosine_fraction";
pub const CHECK_PAIRS_PER_ENTITY: &str = "pairs_per_entity";
pub const CHECK_SHUFFLED: &str = "shuffled_ablation";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Warn,
    Fail,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Warn => "warn",
            Verdict::Fail => "fail",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Warn when cosine alone separates positives better than this.
    pub cosine_auc: f64,
    /// Warn when more than this share of positives has cosine above 0.5.
    pub positive_cosine_fraction: f64,
    /// Warn when entities average more pairs than this.
    pub pairs_per_entity: f64,
    /// Warn when the reference beats the shuffled model by less than this.
    pub shuffled_margin: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            cosine_auc: 0.85,
            positive_cosine_fraction: 0.5,
            pairs_per_entity: 50.0,
            shuffled_margin: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub verdict: Verdict,
    pub explanation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub cosine_baseline_auc: f64,
    pub positive_cosine_frac_above_half: f64,
    /// Mean pairs per entity that appears in at least one pair.
    pub entity_to_pair_ratio: f64,
    pub verdicts: BTreeMap<String, Check>,
    /// Reference AUC minus shuffled AUC, once the ablation has run.
    pub shuffled_delta: Option<f64>,
}

impl DiagnosticReport {
    /// The most severe verdict recorded.
    pub fn worst(&self) -> Verdict {
        self.verdicts.values().map(|c| c.verdict).max().unwrap_or(Verdict::Pass)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &str> {
        self.verdicts
            .iter()
            .filter(|(_, c)| c.verdict == Verdict::Warn)
            .map(|(k, _)| k.as_str())
    }

    pub fn record_shuffled(&mut self, outcome: &ShuffledOutcome) {
        self.shuffled_delta = Some(outcome.delta);
        self.verdicts.insert(
            CHECK_SHUFFLED.to_string(),
            Check {
                verdict: outcome.verdict,
                explanation: outcome.explanation.clone(),
            },
        );
    }
}

/// Cheap checks that need no training. Negatives are drawn like the
/// evaluation negatives (5 per positive, at most 50,000) from `seed`,
/// excluding every graph edge.
pub fn preflight(
    embeddings: &EmbeddingSet,
    positives: &PairSet,
    graph: &AssociationGraph,
    thresholds: &Thresholds,
    seed: u64,
) -> Result<DiagnosticReport> {
    if positives.is_empty() {
        return Err(Error::EmptyData("no positive pairs to diagnose".into()));
    }
    let n = embeddings.len();
    let exclude = PairIndex::new(n, graph.edges().iter().map(|e| (e.a, e.b)).chain(positives.iter()));
    let negatives = sample_eval_negatives(positives, &exclude, n, 5, 50_000, &mut SeededRng::new(seed))?;
    let pos_cos: alloc::vec::Vec<f64> = positives.iter().map(|(a, b)| embeddings.cosine(a, b)).collect();
    let neg_cos: alloc::vec::Vec<f64> = negatives.iter().map(|(a, b)| embeddings.cosine(a, b)).collect();
    let cosine_auc = auc(&pos_cos, &neg_cos)?;
    let frac = pos_cos.iter().filter(|&&c| c > 0.5).count() as f64 / pos_cos.len() as f64;
    let touched = positives.entities().len();
    let ratio = 2.0 * positives.len() as f64 / touched as f64;

    let mut verdicts = BTreeMap::new();
    let auc_check = if cosine_auc > thresholds.cosine_auc {
        Check {
            verdict: Verdict::Warn,
            explanation: format!(
                "cosine AUC {cosine_auc:.3} > {:.2}: cosine captures most of the signal, expect little gain",
                thresholds.cosine_auc
            ),
        }
    } else {
        Check {
            verdict: Verdict::Pass,
            explanation: format!("cosine AUC {cosine_auc:.3} <= {:.2}", thresholds.cosine_auc),
        }
    };
    verdicts.insert(CHECK_COSINE_AUC.to_string(), auc_check);
    let frac_check = if frac > thresholds.positive_cosine_fraction {
        Check {
            verdict: Verdict::Warn,
            explanation: format!(
                "{:.1}% of positives have cosine > 0.5 (limit {:.0}%): in-batch negatives will be near-duplicates, use random negatives",
                100.0 * frac,
                100.0 * thresholds.positive_cosine_fraction
            ),
        }
    } else {
        Check {
            verdict: Verdict::Pass,
            explanation: format!("{:.1}% of positives have cosine > 0.5", 100.0 * frac),
        }
    };
    verdicts.insert(CHECK_COSINE_FRACTION.to_string(), frac_check);
    let ratio_check = if ratio > thresholds.pairs_per_entity {
        Check {
            verdict: Verdict::Warn,
            explanation: format!(
                "{ratio:.1} pairs per entity > {:.0}: degree confounding is likely, run the shuffled ablation",
                thresholds.pairs_per_entity
            ),
        }
    } else {
        Check {
            verdict: Verdict::Pass,
            explanation: format!("{ratio:.1} pairs per entity"),
        }
    };
    verdicts.insert(CHECK_PAIRS_PER_ENTITY.to_string(), ratio_check);

    Ok(DiagnosticReport {
        cosine_baseline_auc: cosine_auc,
        positive_cosine_frac_above_half: frac,
        entity_to_pair_ratio: ratio,
        verdicts,
        shuffled_delta: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShuffledOutcome {
    pub verdict: Verdict,
    /// Reference AUC minus shuffled AUC.
    pub delta: f64,
    pub explanation: String,
}

/// Compares a model trained on the real pairing with one trained on a
/// shuffled pairing. Ties fail.
pub fn shuffled_verdict(reference: &EvalReport, shuffled: &EvalReport, thresholds: &Thresholds) -> Result<ShuffledOutcome> {
    if reference.eval_set_digest != shuffled.eval_set_digest {
        return Err(Error::Config(
            "shuffled and reference reports were computed on different evaluation pairs".into(),
        ));
    }
    Ok(verdict_from_aucs(reference.overall_auc, shuffled.overall_auc, thresholds))
}

/// The verdict rule on bare AUCs.
pub fn verdict_from_aucs(reference_auc: f64, shuffled_auc: f64, thresholds: &Thresholds) -> ShuffledOutcome {
    let delta = reference_auc - shuffled_auc;
    let (verdict, explanation) = if shuffled_auc >= reference_auc {
        (
            Verdict::Fail,
            format!(
                "shuffled AUC {shuffled_auc:.3} >= reference {reference_auc:.3}: degree structure, not association, drives the result"
            ),
        )
    } else if delta < thresholds.shuffled_margin {
        (
            Verdict::Warn,
            format!(
                "reference beats shuffled by only {delta:.3} (< {:.2})",
                thresholds.shuffled_margin
            ),
        )
    } else {
        (Verdict::Pass, format!("reference beats shuffled by {delta:.3}"))
    };
    ShuffledOutcome {
        verdict,
        delta,
        explanation,
    }
}
