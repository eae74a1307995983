//! Scoring and evaluation statistics. Everything here runs in `f64`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::CalModel;
use crate::rng::SeededRng;
use crate::types::{EmbeddingSet, PairSet};

/// Default cross-boundary thresholds for the sweep, widest first.
pub const CB_THRESHOLDS: [f64; 5] = [0.30, 0.20, 0.15, 0.10, 0.05];
/// Minimum positives for a cross-boundary row to report AUCs.
pub const MIN_CB_POSITIVES: usize = 10;
/// Rows per forward chunk when transforming a whole embedding set.
const TRANSFORM_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoringMode {
    HalfTransformed,
    BothTransformed,
    CosineOnly,
    Blend { lambda: f64 },
}

fn dot64(a: &[f32], b: &[f32]) -> f64 {
    crate::linalg::dot_f64(a, b)
}

/// Association score of one pair of unit vectors.
pub fn association_score(model: &CalModel<f32>, ea: &[f32], eb: &[f32], mode: ScoringMode) -> Result<f64> {
    if ea.len() != eb.len() || ea.len() != model.dim() {
        return Err(Error::Dimension {
            expected: model.dim(),
            found: if ea.len() != model.dim() { ea.len() } else { eb.len() },
        });
    }
    if let ScoringMode::CosineOnly = mode {
        return Ok(dot64(ea, eb));
    }
    let x = Matrix::from_vec(2, ea.len(), [ea, eb].concat())?;
    let f = model.transform(&x)?;
    let half = 0.5 * (dot64(f.row(0), eb) + dot64(f.row(1), ea));
    Ok(match mode {
        ScoringMode::HalfTransformed => half,
        ScoringMode::BothTransformed => dot64(f.row(0), f.row(1)),
        ScoringMode::Blend { lambda } => lambda * half + (1.0 - lambda) * dot64(ea, eb),
        ScoringMode::CosineOnly => unreachable!(),
    })
}

/// Raw and transformed vectors for every entity, so pair scores are lookups.
#[derive(Debug, Clone)]
pub struct PairScorer<'a> {
    embeddings: &'a EmbeddingSet,
    transformed: Matrix<f32>,
}

/// Per-pair scores in the pair set's order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PairScores {
    pub cosine: Vec<f64>,
    pub half: Vec<f64>,
    pub both: Vec<f64>,
}

impl PairScores {
    pub fn len(&self) -> usize {
        self.cosine.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cosine.is_empty()
    }

    pub fn mode(&self, mode: ScoringMode) -> Vec<f64> {
        match mode {
            ScoringMode::HalfTransformed => self.half.clone(),
            ScoringMode::BothTransformed => self.both.clone(),
            ScoringMode::CosineOnly => self.cosine.clone(),
            ScoringMode::Blend { lambda } => blend(&self.half, &self.cosine, lambda),
        }
    }

    /// Rows whose index satisfies `keep`.
    pub fn filter(&self, keep: impl Fn(usize) -> bool) -> PairScores {
        let pick = |v: &Vec<f64>| (0..v.len()).filter(|&i| keep(i)).map(|i| v[i]).collect();
        PairScores {
            cosine: pick(&self.cosine),
            half: pick(&self.half),
            both: pick(&self.both),
        }
    }
}

fn blend(half: &[f64], cosine: &[f64], lambda: f64) -> Vec<f64> {
    half.iter().zip(cosine).map(|(h, c)| lambda * h + (1.0 - lambda) * c).collect()
}

impl<'a> PairScorer<'a> {
    pub fn new(model: &CalModel<f32>, embeddings: &'a EmbeddingSet) -> Result<Self> {
        if model.dim() != embeddings.dim() {
            return Err(Error::Dimension {
                expected: model.dim(),
                found: embeddings.dim(),
            });
        }
        let n = embeddings.len();
        let d = embeddings.dim();
        let mut transformed = Matrix::zeros(n, d);
        let mut start = 0;
        while start < n {
            let end = (start + TRANSFORM_CHUNK).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let out = model.transform(&embeddings.gather(&idx))?;
            transformed.as_mut_slice()[start * d..end * d].copy_from_slice(out.as_slice());
            start = end;
        }
        Ok(Self {
            embeddings,
            transformed,
        })
    }

    /// Scorer whose transform is the identity (association = cosine).
    pub fn identity(embeddings: &'a EmbeddingSet) -> Self {
        Self {
            embeddings,
            transformed: embeddings.vectors().clone(),
        }
    }

    pub fn transformed(&self) -> &Matrix<f32> {
        &self.transformed
    }

    pub fn embeddings(&self) -> &EmbeddingSet {
        self.embeddings
    }

    pub fn half(&self, a: usize, b: usize) -> f64 {
        let e = self.embeddings;
        0.5 * (dot64(self.transformed.row(a), e.vector(b)) + dot64(self.transformed.row(b), e.vector(a)))
    }

    pub fn score_pairs(&self, pairs: &PairSet) -> PairScores {
        let e = self.embeddings;
        let mut s = PairScores::default();
        for (a, b) in pairs.iter() {
            s.cosine.push(dot64(e.vector(a), e.vector(b)));
            s.half.push(self.half(a, b));
            s.both.push(dot64(self.transformed.row(a), self.transformed.row(b)));
        }
        s
    }
}

/// Midranks (1-based) of `values`; tied values share the mean of their ranks.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j share their mean.
        let mid = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = mid;
        }
        i = j;
    }
    ranks
}

fn check_scores(pos: &[f64], neg: &[f64]) -> Result<()> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::EmptyData(format!(
            "AUC needs both classes (got {} positive, {} negative scores)",
            pos.len(),
            neg.len()
        )));
    }
    if pos.iter().chain(neg).any(|x| x.is_nan()) {
        return Err(Error::Numerics("NaN score".into()));
    }
    Ok(())
}

/// `U / (n m)`, computed from whichever tail is smaller so that
/// `auc(p, n) + auc(n, p) == 1` holds exactly.
fn auc_from_u(u: f64, nm: f64) -> f64 {
    if 2.0 * u <= nm {
        u / nm
    } else {
        1.0 - (nm - u) / nm
    }
}

/// Mann-Whitney AUC with midranks: `P(pos > neg) + P(pos == neg) / 2`.
pub fn auc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    check_scores(pos, neg)?;
    let all: Vec<f64> = pos.iter().chain(neg).copied().collect();
    let ranks = midranks(&all);
    let n = pos.len() as f64;
    let rank_sum: f64 = ranks[..pos.len()].iter().sum();
    let u = rank_sum - n * (n + 1.0) / 2.0;
    Ok(auc_from_u(u, n * neg.len() as f64))
}

/// Percentile value with linear interpolation between order statistics.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// 95% percentile bootstrap interval for the AUC, resampling positives and
/// negatives independently with replacement.
///
/// Each replicate reuses one sort of the negatives: a positive's count of
/// smaller and equal negatives is a difference of prefix sums over the
/// replicate's multiplicities.
pub fn bootstrap_auc_ci(pos: &[f64], neg: &[f64], n_boot: usize, rng: &mut SeededRng) -> Result<(f64, f64)> {
    check_scores(pos, neg)?;
    if pos.len() < 2 || neg.len() < 2 {
        return Err(Error::EmptyData("bootstrap needs at least 2 scores per class".into()));
    }
    if n_boot == 0 {
        return Err(Error::Config("n_boot must be positive".into()));
    }
    let mut sorted_neg = neg.to_vec();
    sorted_neg.sort_by(f64::total_cmp);
    let bounds: Vec<(usize, usize)> = pos
        .iter()
        .map(|p| {
            (
                sorted_neg.partition_point(|x| x < p),
                sorted_neg.partition_point(|x| x <= p),
            )
        })
        .collect();
    let (n, m) = (pos.len(), neg.len());
    let nm = (n * m) as f64;
    let mut pos_count = vec![0u32; n];
    let mut neg_count = vec![0u32; m];
    let mut prefix = vec![0u64; m + 1];
    let mut stats = Vec::with_capacity(n_boot);
    for _ in 0..n_boot {
        pos_count.iter_mut().for_each(|c| *c = 0);
        neg_count.iter_mut().for_each(|c| *c = 0);
        for _ in 0..n {
            pos_count[rng.index(n)] += 1;
        }
        // Sampling an index of the sorted copy is the same as sampling `neg`.
        for _ in 0..m {
            neg_count[rng.index(m)] += 1;
        }
        for j in 0..m {
            prefix[j + 1] = prefix[j] + neg_count[j] as u64;
        }
        let mut twice_u: u64 = 0;
        for (i, &w) in pos_count.iter().enumerate() {
            if w == 0 {
                continue;
            }
            let (lo, hi) = bounds[i];
            twice_u += w as u64 * (2 * prefix[lo] + (prefix[hi] - prefix[lo]));
        }
        stats.push(auc_from_u(twice_u as f64 / 2.0, nm));
    }
    stats.sort_by(f64::total_cmp);
    Ok((percentile(&stats, 0.025), percentile(&stats, 0.975)))
}

/// Pearson correlation of midranks; `None` when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let rx = midranks(x);
    let ry = midranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

/// One row of the cross-boundary sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbRow {
    pub threshold: f64,
    pub pos_count: usize,
    pub neg_count: usize,
    pub cosine_auc: Option<f64>,
    pub cal_auc: Option<f64>,
    /// Fewer than `MIN_CB_POSITIVES` positives or no negatives survived.
    pub insufficient: bool,
}

/// Restricts both classes to `|cosine| < t` and reports both AUCs per
/// threshold. An infinite threshold keeps every pair.
pub fn cross_boundary_eval(pos: &PairScores, neg: &PairScores, thresholds: &[f64]) -> Result<Vec<CbRow>> {
    thresholds.iter().map(|&t| cb_row(pos, neg, t, ScoringMode::HalfTransformed)).collect()
}

fn cb_row(pos: &PairScores, neg: &PairScores, t: f64, mode: ScoringMode) -> Result<CbRow> {
    let keep_pos = pos.filter(|i| libm::fabs(pos.cosine[i]) < t);
    let keep_neg = neg.filter(|i| libm::fabs(neg.cosine[i]) < t);
    let insufficient = keep_pos.len() < MIN_CB_POSITIVES || keep_neg.is_empty();
    let (cosine_auc, cal_auc) = if insufficient {
        (None, None)
    } else {
        (
            Some(auc(&keep_pos.cosine, &keep_neg.cosine)?),
            Some(auc(&keep_pos.mode(mode), &keep_neg.mode(mode))?),
        )
    };
    Ok(CbRow {
        threshold: t,
        pos_count: keep_pos.len(),
        neg_count: keep_neg.len(),
        cosine_auc,
        cal_auc,
        insufficient,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaRow {
    pub lambda: f64,
    pub overall_auc: f64,
    pub cb_auc: Option<f64>,
}

/// Blend AUCs on the grid λ = 0.0, 0.1, ..., 1.0.
pub fn lambda_sweep(pos: &PairScores, neg: &PairScores, cb_threshold: f64) -> Result<Vec<LambdaRow>> {
    (0..=10)
        .map(|i| {
            let lambda = i as f64 / 10.0;
            let mode = ScoringMode::Blend { lambda };
            Ok(LambdaRow {
                lambda,
                overall_auc: auc(&pos.mode(mode), &neg.mode(mode))?,
                cb_auc: cb_row(pos, neg, cb_threshold, mode)?.cal_auc,
            })
        })
        .collect()
}

/// How a pair's degree is derived from its endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairDegree {
    Mean,
    Max,
}

pub fn pair_degrees(pairs: &PairSet, degrees: &[u32], how: PairDegree) -> Vec<f64> {
    pairs
        .iter()
        .map(|(a, b)| {
            let (da, db) = (degrees[a] as f64, degrees[b] as f64);
            match how {
                PairDegree::Mean => 0.5 * (da + db),
                PairDegree::Max => da.max(db),
            }
        })
        .collect()
}

/// Nearest-rank cut points at `i / q` for `i = 1..q`. A value belongs to
/// the first bucket whose cut point is ≥ the value.
pub fn quantile_edges(values: &[f64], q: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    (1..q)
        .map(|i| {
            let rank = libm::ceil(i as f64 * n as f64 / q as f64) as usize;
            sorted[rank.clamp(1, n) - 1]
        })
        .collect()
}

pub fn bucket_of(value: f64, edges: &[f64]) -> usize {
    edges.iter().position(|&e| value <= e).unwrap_or(edges.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuintileRow {
    pub quintile: usize,
    pub degree_lo: f64,
    pub degree_hi: f64,
    pub n: usize,
    pub mean_cosine: f64,
    pub mean_association: f64,
    pub delta: f64,
}

fn summarize_buckets(keys: &[f64], cosine: &[f64], assoc: &[f64], q: usize) -> Vec<QuintileRow> {
    if keys.is_empty() {
        return Vec::new();
    }
    let edges = quantile_edges(keys, q);
    let mut rows: Vec<(f64, f64, usize, f64, f64)> = vec![(f64::INFINITY, f64::NEG_INFINITY, 0, 0.0, 0.0); q];
    for i in 0..keys.len() {
        let r = &mut rows[bucket_of(keys[i], &edges)];
        r.0 = r.0.min(keys[i]);
        r.1 = r.1.max(keys[i]);
        r.2 += 1;
        r.3 += cosine[i];
        r.4 += assoc[i];
    }
    rows.into_iter()
        .enumerate()
        .filter(|(_, r)| r.2 > 0)
        .map(|(i, (lo, hi, n, c, a))| {
            let (mc, ma) = (c / n as f64, a / n as f64);
            QuintileRow {
                quintile: i + 1,
                degree_lo: lo,
                degree_hi: hi,
                n,
                mean_cosine: mc,
                mean_association: ma,
                delta: ma - mc,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeAnalysis {
    /// Spearman between mean endpoint degree and association over all
    /// evaluated pairs.
    pub spearman: Option<f64>,
    /// Same with the larger endpoint degree.
    pub spearman_max: Option<f64>,
    /// Set when a correlation is undefined.
    pub spearman_note: Option<String>,
    /// Cross-boundary positives bucketed by mean pair degree.
    pub quintiles: Vec<QuintileRow>,
    /// Entities of cross-boundary positives bucketed by their own degree;
    /// each entity contributes the mean over its cross-boundary pairs.
    pub entity_quintiles: Vec<QuintileRow>,
}

pub fn degree_analysis(
    pos_pairs: &PairSet,
    pos: &PairScores,
    neg_pairs: &PairSet,
    neg: &PairScores,
    degrees: &[u32],
    cb_threshold: f64,
) -> DegreeAnalysis {
    let mut deg_mean = pair_degrees(pos_pairs, degrees, PairDegree::Mean);
    deg_mean.extend(pair_degrees(neg_pairs, degrees, PairDegree::Mean));
    let mut deg_max = pair_degrees(pos_pairs, degrees, PairDegree::Max);
    deg_max.extend(pair_degrees(neg_pairs, degrees, PairDegree::Max));
    let scores: Vec<f64> = pos.half.iter().chain(&neg.half).copied().collect();
    let spearman_mean = spearman(&deg_mean, &scores);
    let spearman_max = spearman(&deg_max, &scores);
    let spearman_note = (spearman_mean.is_none() || spearman_max.is_none())
        .then(|| String::from("pair degree or association score is constant; rank correlation undefined"));

    let cb: Vec<usize> = (0..pos.len()).filter(|&i| libm::fabs(pos.cosine[i]) < cb_threshold).collect();
    let pair_deg = pair_degrees(pos_pairs, degrees, PairDegree::Mean);
    let keys: Vec<f64> = cb.iter().map(|&i| pair_deg[i]).collect();
    let cos: Vec<f64> = cb.iter().map(|&i| pos.cosine[i]).collect();
    let assoc: Vec<f64> = cb.iter().map(|&i| pos.half[i]).collect();
    let quintiles = summarize_buckets(&keys, &cos, &assoc, 5);

    let mut per_entity: alloc::collections::BTreeMap<usize, (usize, f64, f64)> = Default::default();
    let pairs = pos_pairs.pairs();
    for &i in &cb {
        for e in [pairs[i].0, pairs[i].1] {
            let slot = per_entity.entry(e).or_insert((0, 0.0, 0.0));
            slot.0 += 1;
            slot.1 += pos.cosine[i];
            slot.2 += pos.half[i];
        }
    }
    let ekeys: Vec<f64> = per_entity.keys().map(|&e| degrees[e] as f64).collect();
    let ecos: Vec<f64> = per_entity.values().map(|v| v.1 / v.0 as f64).collect();
    let eassoc: Vec<f64> = per_entity.values().map(|v| v.2 / v.0 as f64).collect();
    DegreeAnalysis {
        spearman: spearman_mean,
        spearman_max,
        spearman_note,
        quintiles,
        entity_quintiles: summarize_buckets(&ekeys, &ecos, &eassoc, 5),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileComparisonRow {
    pub bucket: usize,
    pub degree_lo: f64,
    pub degree_hi: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub reference_auc: Option<f64>,
    pub shuffled_auc: Option<f64>,
    pub delta: Option<f64>,
    /// One class missing from the bucket.
    pub insufficient: bool,
}

/// Buckets evaluation pairs by mean pair degree (cut points from the
/// positives) and compares the two models' AUCs within each bucket.
#[allow(clippy::too_many_arguments)]
pub fn degree_quantile_model_comparison(
    pos_pairs: &PairSet,
    neg_pairs: &PairSet,
    reference: (&[f64], &[f64]),
    shuffled: (&[f64], &[f64]),
    degrees: &[u32],
    n_quantiles: usize,
) -> Result<Vec<QuantileComparisonRow>> {
    if n_quantiles == 0 {
        return Err(Error::Config("n_quantiles must be positive".into()));
    }
    let lengths_ok = reference.0.len() == pos_pairs.len()
        && shuffled.0.len() == pos_pairs.len()
        && reference.1.len() == neg_pairs.len()
        && shuffled.1.len() == neg_pairs.len();
    if !lengths_ok {
        return Err(Error::Config("score vectors do not match the evaluation pair sets".into()));
    }
    let pdeg = pair_degrees(pos_pairs, degrees, PairDegree::Mean);
    let ndeg = pair_degrees(neg_pairs, degrees, PairDegree::Mean);
    let edges = quantile_edges(&pdeg, n_quantiles);
    let mut rows = Vec::with_capacity(n_quantiles);
    for q in 0..n_quantiles {
        let pi: Vec<usize> = (0..pdeg.len()).filter(|&i| bucket_of(pdeg[i], &edges) == q).collect();
        let ni: Vec<usize> = (0..ndeg.len()).filter(|&i| bucket_of(ndeg[i], &edges) == q).collect();
        let lo = if q == 0 { f64::NEG_INFINITY } else { edges[q - 1] };
        let hi = edges.get(q).copied().unwrap_or(f64::INFINITY);
        let insufficient = pi.is_empty() || ni.is_empty();
        let bucket_auc = |s: (&[f64], &[f64])| -> Result<Option<f64>> {
            if insufficient {
                return Ok(None);
            }
            let p: Vec<f64> = pi.iter().map(|&i| s.0[i]).collect();
            let n: Vec<f64> = ni.iter().map(|&i| s.1[i]).collect();
            auc(&p, &n).map(Some)
        };
        let r = bucket_auc(reference)?;
        let s = bucket_auc(shuffled)?;
        rows.push(QuantileComparisonRow {
            bucket: q,
            degree_lo: lo,
            degree_hi: hi,
            n_pos: pi.len(),
            n_neg: ni.len(),
            reference_auc: r,
            shuffled_auc: s,
            delta: r.zip(s).map(|(r, s)| r - s),
            insufficient,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementRow {
    pub a: usize,
    pub b: usize,
    pub cosine: f64,
    pub association: f64,
    pub delta: f64,
}

/// The `k` positives with the largest `association - cosine`.
pub fn top_improvement_pairs(pairs: &PairSet, scores: &PairScores, k: usize) -> Vec<ImprovementRow> {
    let mut rows: Vec<ImprovementRow> = pairs
        .iter()
        .enumerate()
        .map(|(i, (a, b))| ImprovementRow {
            a,
            b,
            cosine: scores.cosine[i],
            association: scores.half[i],
            delta: scores.half[i] - scores.cosine[i],
        })
        .collect();
    rows.sort_by(|x, y| y.delta.total_cmp(&x.delta));
    rows.truncate(k);
    rows
}

/// AUCs on a named subset of the evaluation pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetAuc {
    pub name: String,
    pub n_pos: usize,
    pub n_neg: usize,
    pub cosine_auc: f64,
    pub cal_auc: f64,
}

impl SubsetAuc {
    pub fn compute(name: &str, pos: &PairScores, neg: &PairScores) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            n_pos: pos.len(),
            n_neg: neg.len(),
            cosine_auc: auc(&pos.cosine, &neg.cosine)?,
            cal_auc: auc(&pos.half, &neg.half)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub cb_threshold: f64,
    pub cb_thresholds: Vec<f64>,
    pub n_boot: usize,
    pub seed: u64,
    pub top_k: usize,
    pub n_quantiles: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            cb_threshold: 0.2,
            cb_thresholds: CB_THRESHOLDS.to_vec(),
            n_boot: 1000,
            seed: 42,
            top_k: 20,
            n_quantiles: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_pos: usize,
    pub n_neg: usize,
    /// Half-transformed association AUC.
    pub overall_auc: f64,
    pub cosine_auc: f64,
    pub both_transformed_auc: f64,
    pub cb_threshold: f64,
    pub cb_auc: Option<f64>,
    pub cb_cosine_auc: Option<f64>,
    pub cb_pos: usize,
    pub cb_neg: usize,
    pub auc_ci: (f64, f64),
    pub lambda_sweep: Vec<LambdaRow>,
    pub cb_sweep: Vec<CbRow>,
    pub pair_degree: PairDegree,
    pub degree: Option<DegreeAnalysis>,
    pub top_improvement_pairs: Vec<ImprovementRow>,
    pub subsets: Vec<SubsetAuc>,
    pub config_hash: Option<String>,
    pub seeds: Vec<u64>,
    /// SHA-256 of the positive and negative pair lists, for checking that two
    /// reports were computed on the same pairs.
    pub eval_set_digest: String,
}

impl EvalReport {
    /// Association AUC minus cosine AUC.
    pub fn delta_vs_cosine(&self) -> f64 {
        self.overall_auc - self.cosine_auc
    }
}

/// Full evaluation of already-scored pairs.
pub fn evaluate_scores(
    pos_pairs: &PairSet,
    pos: &PairScores,
    neg_pairs: &PairSet,
    neg: &PairScores,
    degrees: Option<&[u32]>,
    config: &EvalConfig,
) -> Result<EvalReport> {
    let mut rng = SeededRng::new(config.seed);
    let cb = cb_row(pos, neg, config.cb_threshold, ScoringMode::HalfTransformed)?;
    Ok(EvalReport {
        n_pos: pos.len(),
        n_neg: neg.len(),
        overall_auc: auc(&pos.half, &neg.half)?,
        cosine_auc: auc(&pos.cosine, &neg.cosine)?,
        both_transformed_auc: auc(&pos.both, &neg.both)?,
        cb_threshold: config.cb_threshold,
        cb_auc: cb.cal_auc,
        cb_cosine_auc: cb.cosine_auc,
        cb_pos: cb.pos_count,
        cb_neg: cb.neg_count,
        auc_ci: bootstrap_auc_ci(&pos.half, &neg.half, config.n_boot, &mut rng)?,
        lambda_sweep: lambda_sweep(pos, neg, config.cb_threshold)?,
        cb_sweep: cross_boundary_eval(pos, neg, &config.cb_thresholds)?,
        pair_degree: PairDegree::Mean,
        degree: degrees.map(|d| degree_analysis(pos_pairs, pos, neg_pairs, neg, d, config.cb_threshold)),
        top_improvement_pairs: top_improvement_pairs(pos_pairs, pos, config.top_k),
        subsets: Vec::new(),
        config_hash: None,
        seeds: vec![config.seed],
        eval_set_digest: eval_set_digest(pos_pairs, neg_pairs),
    })
}

/// Hex SHA-256 over both pair lists in order.
pub fn eval_set_digest(pos_pairs: &PairSet, neg_pairs: &PairSet) -> String {
    use core::fmt::Write;
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for (tag, set) in [(b'P', pos_pairs), (b'N', neg_pairs)] {
        h.update([tag]);
        h.update((set.len() as u64).to_le_bytes());
        for (a, b) in set.iter() {
            h.update((a as u64).to_le_bytes());
            h.update((b as u64).to_le_bytes());
        }
    }
    h.finalize().iter().fold(String::with_capacity(64), |mut out, byte| {
        let _ = write!(out, "{byte:02x}");
        out
    })
}

/// Scores both pair sets with `model` and evaluates them.
pub fn evaluate(
    model: &CalModel<f32>,
    embeddings: &EmbeddingSet,
    pos_pairs: &PairSet,
    neg_pairs: &PairSet,
    degrees: Option<&[u32]>,
    config: &EvalConfig,
) -> Result<EvalReport> {
    let scorer = PairScorer::new(model, embeddings)?;
    let pos = scorer.score_pairs(pos_pairs);
    let neg = scorer.score_pairs(neg_pairs);
    evaluate_scores(pos_pairs, &pos, neg_pairs, &neg, degrees, config)
}
