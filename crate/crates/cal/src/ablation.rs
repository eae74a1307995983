//! Controlled ablations: each trains a reference and a modified model (or one
//! model on a split) and evaluates both.

use std::collections::BTreeSet;

use cal_core::diagnostics::{shuffled_verdict, ShuffledOutcome};
use cal_core::eval::{degree_quantile_model_comparison, EvalReport, QuantileComparisonRow, SubsetAuc};
use cal_core::rng::SeededRng;
use cal_core::sampler::{
    edge_split, node_split, shuffle_ablation, similar_positives_ablation, NegativeMode, SplitKind, SplitSpec,
};
use cal_core::trainer::TrainConfig;
use cal_core::types::PairSet;
use cal_core::CalModel;
use clap::ValueEnum;
use log::info;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::Result;
use crate::pipeline::{
    eval_sets_where, report_from_scores, run_parallel, score_sets, train_model, transductive_eval_sets, Dataset,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AblationKind {
    /// Train on randomly re-paired positives.
    Shuffled,
    /// Train on the most cosine-similar pairs instead of the real ones.
    Similar,
    /// Switch between in-batch and random negatives.
    #[value(name = "random_neg")]
    RandomNeg,
    /// Hold out a fraction of the pairs.
    #[value(name = "edge_split")]
    EdgeSplit,
    /// Hold out a fraction of the entities.
    #[value(name = "node_split")]
    NodeSplit,
}

impl AblationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AblationKind::Shuffled => "shuffled",
            AblationKind::Similar => "similar",
            AblationKind::RandomNeg => "random_neg",
            AblationKind::EdgeSplit => "edge_split",
            AblationKind::NodeSplit => "node_split",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub kind: AblationKind,
    pub reference_label: String,
    pub ablation_label: String,
    pub reference_train_pairs: usize,
    pub ablation_train_pairs: usize,
    pub reference: EvalReport,
    pub ablation: EvalReport,
    /// Ablation overall AUC minus reference overall AUC.
    pub delta_overall: f64,
    pub shuffled: Option<ShuffledOutcome>,
    pub degree_quantiles: Vec<QuantileComparisonRow>,
    pub held_out_entities: Option<usize>,
}

impl AblationResult {
    fn new(kind: AblationKind, labels: (&str, &str), train_pairs: (usize, usize), reference: EvalReport, ablation: EvalReport) -> Self {
        Self {
            kind,
            reference_label: labels.0.into(),
            ablation_label: labels.1.into(),
            reference_train_pairs: train_pairs.0,
            ablation_train_pairs: train_pairs.1,
            delta_overall: ablation.overall_auc - reference.overall_auc,
            reference,
            ablation,
            shuffled: None,
            degree_quantiles: Vec::new(),
            held_out_entities: None,
        }
    }
}

/// Trains one model per job entry, `jobs` at a time.
fn train_all(ds: &Dataset, runs: &[(PairSet, TrainConfig)], jobs: usize) -> Result<Vec<CalModel<f32>>> {
    run_parallel(runs, jobs, |(pairs, cfg)| train_model(pairs, ds.set(), cfg).map(|(m, _)| m))?
        .into_iter()
        .collect()
}

pub fn run_ablation(ds: &Dataset, cfg: &RunConfig, kind: AblationKind, jobs: usize) -> Result<AblationResult> {
    info!("ablation {}: {} positive pairs", kind.as_str(), ds.positives.len());
    match kind {
        AblationKind::Shuffled | AblationKind::Similar | AblationKind::RandomNeg => paired(ds, cfg, kind, jobs),
        AblationKind::EdgeSplit => edge(ds, cfg),
        AblationKind::NodeSplit => node(ds, cfg),
    }
}

/// Two models scored on the same transductive evaluation pairs.
fn paired(ds: &Dataset, cfg: &RunConfig, kind: AblationKind, jobs: usize) -> Result<AblationResult> {
    let reference = (ds.positives.clone(), cfg.train.clone());
    let (ablated, label) = match kind {
        AblationKind::Shuffled => {
            let mut rng = SeededRng::new(cfg.ablation.shuffle_seed);
            ((shuffle_ablation(&ds.positives, &mut rng), cfg.train.clone()), "shuffled")
        }
        AblationKind::Similar => (
            (similar_positives_ablation(ds.set(), ds.positives.len())?, cfg.train.clone()),
            "similar",
        ),
        _ => {
            let mut t = cfg.train.clone();
            t.negative_mode = match t.negative_mode {
                NegativeMode::InBatch => NegativeMode::RandomK { k: None },
                _ => NegativeMode::InBatch,
            };
            ((ds.positives.clone(), t), "random_neg")
        }
    };
    let sizes = (reference.0.len(), ablated.0.len());
    let models = train_all(ds, &[reference, ablated], jobs)?;
    let sets = transductive_eval_sets(ds, &cfg.negatives)?;
    let ref_scores = score_sets(Some(&models[0]), ds.set(), &sets)?;
    let abl_scores = score_sets(Some(&models[1]), ds.set(), &sets)?;
    let degrees = Some(ds.degrees());
    let ref_report = report_from_scores(&sets, &ref_scores, degrees, &cfg.eval)?;
    let abl_report = report_from_scores(&sets, &abl_scores, degrees, &cfg.eval)?;
    let mut out = AblationResult::new(kind, ("reference", label), sizes, ref_report, abl_report);
    if kind == AblationKind::Shuffled {
        out.shuffled = Some(shuffled_verdict(&out.reference, &out.ablation, &cfg.diagnostics)?);
        out.degree_quantiles = degree_quantile_model_comparison(
            &sets.positives,
            &sets.negatives,
            (&ref_scores.positives.half, &ref_scores.negatives.half),
            (&abl_scores.positives.half, &abl_scores.negatives.half),
            ds.degrees(),
            cfg.eval.n_quantiles,
        )?;
    }
    Ok(out)
}

/// One model trained on the retained pairs, evaluated on them and on the
/// held-out pairs.
fn edge(ds: &Dataset, cfg: &RunConfig) -> Result<AblationResult> {
    let spec = SplitSpec::new(SplitKind::EdgeSplit, cfg.ablation.split_fraction, cfg.ablation.split_seed)?;
    let (train, test) = edge_split(&ds.positives, &spec)?;
    let (model, _) = train_model(&train, ds.set(), &cfg.train)?;
    let n = ds.set().len();
    let degrees = ds.degrees();
    let train_sets = eval_sets_where(n, &ds.positives, &train, degrees, &cfg.negatives, &|_, _| true)?;
    let test_sets = eval_sets_where(n, &ds.positives, &test, degrees, &cfg.negatives, &|_, _| true)?;
    let eval = |sets| -> Result<EvalReport> {
        let scores = score_sets(Some(&model), ds.set(), sets)?;
        report_from_scores(sets, &scores, Some(degrees), &cfg.eval)
    };
    Ok(AblationResult::new(
        AblationKind::EdgeSplit,
        ("train_pairs", "test_pairs"),
        (train.len(), train.len()),
        eval(&train_sets)?,
        eval(&test_sets)?,
    ))
}

/// One model trained without the held-out entities. Test negatives touch a
/// held-out entity, like the test positives.
fn node(ds: &Dataset, cfg: &RunConfig) -> Result<AblationResult> {
    let spec = SplitSpec::new(SplitKind::NodeSplit, cfg.ablation.split_fraction, cfg.ablation.split_seed)?;
    let split = node_split(&ds.positives, &ds.positives.entities(), &spec)?;
    if split.train.is_empty() || split.test.is_empty() {
        return Err(cal_core::Error::EmptyData("node split left no training or no test pairs".into()).into());
    }
    let held: BTreeSet<usize> = split.held_out.iter().copied().collect();
    let (model, _) = train_model(&split.train, ds.set(), &cfg.train)?;
    let n = ds.set().len();
    let degrees = ds.degrees();
    let train_sets = eval_sets_where(n, &ds.positives, &split.train, degrees, &cfg.negatives, &|_, _| true)?;
    let touches = |a: usize, b: usize| held.contains(&a) || held.contains(&b);
    let test_sets = eval_sets_where(n, &ds.positives, &split.test, degrees, &cfg.negatives, &touches)?;

    let train_scores = score_sets(Some(&model), ds.set(), &train_sets)?;
    let reference = report_from_scores(&train_sets, &train_scores, Some(degrees), &cfg.eval)?;
    let test_scores = score_sets(Some(&model), ds.set(), &test_sets)?;
    let mut ablation = report_from_scores(&test_sets, &test_scores, Some(degrees), &cfg.eval)?;

    let both = |(a, b): (usize, usize)| held.contains(&a) && held.contains(&b);
    let pos_pairs: Vec<(usize, usize)> = test_sets.positives.iter().collect();
    let neg_pairs: Vec<(usize, usize)> = test_sets.negatives.iter().collect();
    let pos = test_scores.positives.filter(|i| both(pos_pairs[i]));
    let neg = test_scores.negatives.filter(|i| both(neg_pairs[i]));
    if pos.is_empty() || neg.is_empty() {
        info!("no test pairs with both endpoints held out; skipping that subset");
    } else {
        ablation.subsets.push(SubsetAuc::compute("unseen_both", &pos, &neg)?);
    }

    let mut out = AblationResult::new(
        AblationKind::NodeSplit,
        ("train_pairs", "test_pairs"),
        (split.train.len(), split.train.len()),
        reference,
        ablation,
    );
    out.held_out_entities = Some(split.held_out.len());
    Ok(out)
}
