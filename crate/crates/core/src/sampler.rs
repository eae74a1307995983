//! Batching, negative sampling, ablation pair sets and train/test splits.
//!
//! Every function here is a pure function of its inputs and seed.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::dot_f64;
use crate::rng::SeededRng;
use crate::types::{unordered, EmbeddingSet, PairIndex, PairSet, Role};

/// Maximum rejections per eval negative before switching to enumeration.
pub const REJECTION_ATTEMPTS_PER_PAIR: usize = 100;
/// Rejections per degree-bin radius in degree-matched sampling.
pub const DEGREE_MATCH_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    EdgeSplit,
    NodeSplit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub kind: SplitKind,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_train_fraction() -> f64 {
    0.7
}

impl SplitSpec {
    pub fn new(kind: SplitKind, train_fraction: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            kind,
            train_fraction,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }

    fn n_train(&self, n: usize) -> usize {
        libm::floor(self.train_fraction * n as f64 + 1e-9) as usize
    }
}

/// Where training negatives come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NegativeMode {
    /// The other rows of the batch.
    InBatch,
    /// `k` uniformly drawn non-partners per step; `None` means `batch_size - 1`.
    RandomK {
        #[serde(default)]
        k: Option<usize>,
    },
    /// Like `RandomK`, but each drawn negative is degree-bin matched to the
    /// anchor's positive partner.
    DegreeMatched {
        #[serde(default)]
        k: Option<usize>,
    },
}

impl Default for NegativeMode {
    fn default() -> Self {
        NegativeMode::InBatch
    }
}

/// Shuffles pair indices `0..n_pairs` with `epoch_seed` and cuts them into
/// consecutive batches of `batch_size`. The partial final batch is dropped.
pub fn make_batches(n_pairs: usize, batch_size: usize, epoch_seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(Error::Config(format!("batch_size must be at least 2, got {batch_size}")));
    }
    if n_pairs == 0 {
        return Err(Error::EmptyData("no positive pairs to batch".into()));
    }
    let order = SeededRng::new(epoch_seed).permutation(n_pairs);
    Ok(order
        .chunks_exact(batch_size)
        .map(|c| c.to_vec())
        .collect())
}

/// Permutes the second column uniformly; self-pairs and orientation
/// duplicates created by the permutation are dropped.
pub fn shuffle_ablation(positives: &PairSet, rng: &mut SeededRng) -> PairSet {
    let mut second = positives.second_column();
    rng.shuffle(&mut second);
    PairSet::dedup_from(
        positives.iter().zip(second).map(|((a, _), b)| (a, b)),
        positives.role(),
    )
}

/// The `n_pairs` unordered pairs with the highest cosine similarity. Ties are
/// broken towards the lower first index, then the lower second index.
pub fn similar_positives_ablation(embeddings: &EmbeddingSet, n_pairs: usize) -> Result<PairSet> {
    let n = embeddings.len();
    let available = n * n.saturating_sub(1) / 2;
    if n_pairs > available {
        return Err(Error::Config(format!(
            "requested {n_pairs} similar pairs but only {available} exist"
        )));
    }
    let mut all: Vec<(f64, u32, u32)> = Vec::with_capacity(available);
    for a in 0..n {
        let va = embeddings.vector(a);
        for b in a + 1..n {
            all.push((dot_f64(va, embeddings.vector(b)), a as u32, b as u32));
        }
    }
    let order = |x: &(f64, u32, u32), y: &(f64, u32, u32)| {
        y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2))
    };
    if n_pairs < all.len() && n_pairs > 0 {
        all.select_nth_unstable_by(n_pairs - 1, order);
    }
    all.truncate(n_pairs);
    all.sort_unstable_by(order);
    Ok(PairSet::dedup_from(
        all.into_iter().map(|(_, a, b)| (a as usize, b as usize)),
        Role::TrainPositive,
    ))
}

/// Uniform random partition of the pairs: `floor(fraction * n)` go to train.
pub fn edge_split(positives: &PairSet, spec: &SplitSpec) -> Result<(PairSet, PairSet)> {
    spec.validate()?;
    if spec.kind != SplitKind::EdgeSplit {
        return Err(Error::Config("edge_split called with a node_split spec".into()));
    }
    let n = positives.len();
    let perm = SeededRng::new(spec.seed).permutation(n);
    let n_train = spec.n_train(n);
    let mut in_train = vec![false; n];
    for &i in &perm[..n_train] {
        in_train[i] = true;
    }
    let pairs = positives.pairs();
    let pick = |want: bool| -> Vec<(usize, usize)> {
        (0..n).filter(|&i| in_train[i] == want).map(|i| pairs[i]).collect()
    };
    Ok((
        PairSet::dedup_from(pick(true), Role::TrainPositive),
        PairSet::dedup_from(pick(false), Role::EvalPositive),
    ))
}

/// Result of holding out entities.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSplit {
    /// Pairs with both endpoints retained.
    pub train: PairSet,
    /// Pairs with at least one held-out endpoint.
    pub test: PairSet,
    /// The subset of `test` with both endpoints held out.
    pub test_unseen_both: PairSet,
    /// Sorted held-out entity indices.
    pub held_out: Vec<usize>,
}

/// Holds out `n - floor(fraction * n)` of `entities` (chosen by seed).
pub fn node_split(positives: &PairSet, entities: &[usize], spec: &SplitSpec) -> Result<NodeSplit> {
    spec.validate()?;
    if spec.kind != SplitKind::NodeSplit {
        return Err(Error::Config("node_split called with an edge_split spec".into()));
    }
    let mut pool: Vec<usize> = entities.to_vec();
    pool.sort_unstable();
    pool.dedup();
    let n = pool.len();
    let mut rng = SeededRng::new(spec.seed);
    rng.shuffle(&mut pool);
    let n_keep = spec.n_train(n);
    let held: BTreeSet<usize> = pool[n_keep..].iter().copied().collect();
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut both = Vec::new();
    for (a, b) in positives.iter() {
        let (ha, hb) = (held.contains(&a), held.contains(&b));
        if !ha && !hb {
            train.push((a, b));
        } else {
            test.push((a, b));
            if ha && hb {
                both.push((a, b));
            }
        }
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::Split(format!(
            "node split left {} train and {} test pairs",
            train.len(),
            test.len()
        )));
    }
    Ok(NodeSplit {
        train: PairSet::dedup_from(train, Role::TrainPositive),
        test: PairSet::dedup_from(test, Role::EvalPositive),
        test_unseen_both: PairSet::dedup_from(both, Role::EvalPositive),
        held_out: held.into_iter().collect(),
    })
}

/// Draws `min(multiplier * |positives|, cap)` distinct unordered pairs
/// uniformly from all non-self pairs not in `exclude`.
///
/// Rejection sampling runs for at most `REJECTION_ATTEMPTS_PER_PAIR * target`
/// draws; if that budget runs out (dense graphs), the remaining negatives are
/// drawn without replacement from an explicit list of the unused pairs.
pub fn sample_eval_negatives(
    positives: &PairSet,
    exclude: &PairIndex,
    n_entities: usize,
    multiplier: usize,
    cap: usize,
    rng: &mut SeededRng,
) -> Result<PairSet> {
    sample_eval_negatives_where(positives, exclude, n_entities, multiplier, cap, &|_, _| true, rng)
}

/// [`sample_eval_negatives`] restricted to pairs accepted by `accept`
/// (called with the smaller index first).
pub fn sample_eval_negatives_where(
    positives: &PairSet,
    exclude: &PairIndex,
    n_entities: usize,
    multiplier: usize,
    cap: usize,
    accept: &dyn Fn(usize, usize) -> bool,
    rng: &mut SeededRng,
) -> Result<PairSet> {
    if multiplier == 0 {
        return Err(Error::Config("negative multiplier must be at least 1".into()));
    }
    let target = (multiplier * positives.len()).min(cap);
    let total = n_entities * n_entities.saturating_sub(1) / 2;
    let upper_bound = total - exclude.len().min(total);
    let insufficient = |available: usize| {
        Error::Sampling(format!(
            "need {target} negative pairs but only {available} non-positive pairs exist"
        ))
    };
    if target > upper_bound {
        return Err(insufficient(upper_bound));
    }
    let mut chosen: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut out = Vec::with_capacity(target);
    // Rejection is only efficient while most pairs are still free.
    if target * 2 <= upper_bound {
        let budget = REJECTION_ATTEMPTS_PER_PAIR * target.max(1);
        let mut attempts = 0;
        while out.len() < target && attempts < budget {
            attempts += 1;
            let a = rng.index(n_entities);
            let b = rng.index(n_entities);
            if a == b || exclude.contains(a, b) {
                continue;
            }
            let key = unordered(a, b);
            if accept(key.0, key.1) && chosen.insert(key) {
                out.push(key);
            }
        }
    }
    if out.len() < target {
        let mut rest = Vec::new();
        for a in 0..n_entities {
            for b in a + 1..n_entities {
                if !exclude.contains(a, b) && accept(a, b) && !chosen.contains(&(a, b)) {
                    rest.push((a, b));
                }
            }
        }
        let need = target - out.len();
        if rest.len() < need {
            return Err(insufficient(out.len() + rest.len()));
        }
        for i in 0..need {
            let j = i + rng.index(rest.len() - i);
            rest.swap(i, j);
            out.push(rest[i]);
        }
    }
    Ok(PairSet::dedup_from(out, Role::EvalNegative))
}

/// Logarithmic degree bin: 0 for isolated entities, else `1 + floor(log2 d)`.
#[inline]
pub fn degree_bin(degree: u32) -> usize {
    if degree == 0 {
        0
    } else {
        32 - degree.leading_zeros() as usize
    }
}

/// Entities grouped by [`degree_bin`].
#[derive(Debug, Clone)]
pub struct DegreeBins {
    bins: Vec<Vec<usize>>,
    bin_of: Vec<usize>,
}

impl DegreeBins {
    pub fn new(degrees: &[u32]) -> Self {
        let bin_of: Vec<usize> = degrees.iter().map(|&d| degree_bin(d)).collect();
        let n_bins = bin_of.iter().copied().max().map_or(0, |m| m + 1);
        let mut bins = vec![Vec::new(); n_bins];
        for (e, &b) in bin_of.iter().enumerate() {
            bins[b].push(e);
        }
        Self { bins, bin_of }
    }

    pub fn bin_of(&self, entity: usize) -> usize {
        self.bin_of[entity]
    }

    pub fn n_bins(&self) -> usize {
        self.bins.len()
    }

    /// Uniform entity from one bin, which must be non-empty.
    pub fn draw_exact(&self, bin: usize, rng: &mut SeededRng) -> usize {
        let members = &self.bins[bin];
        members[rng.index(members.len())]
    }

    /// Uniform entity among the non-empty bins within `radius` of `center`.
    fn draw(&self, center: usize, radius: usize, rng: &mut SeededRng) -> Option<usize> {
        let lo = center.saturating_sub(radius);
        let hi = (center + radius).min(self.bins.len() - 1);
        let total: usize = self.bins[lo..=hi].iter().map(Vec::len).sum();
        if total == 0 {
            return None;
        }
        let mut k = rng.index(total);
        for bin in &self.bins[lo..=hi] {
            if k < bin.len() {
                return Some(bin[k]);
            }
            k -= bin.len();
        }
        None
    }
}

/// Degree-matched negatives plus how often matching had to be relaxed.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedNegatives {
    pub pairs: PairSet,
    /// Positives whose negative came from a widened bin window.
    pub fallbacks: usize,
}

/// One negative per positive with endpoints drawn from the positive's
/// endpoint degree bins. After `DEGREE_MATCH_ATTEMPTS` rejections the bin
/// window widens by one on each side, until it covers every bin.
pub fn sample_degree_matched_negatives(
    positives: &PairSet,
    degrees: &[u32],
    exclude: &PairIndex,
    rng: &mut SeededRng,
) -> Result<MatchedNegatives> {
    let bins = DegreeBins::new(degrees);
    let mut chosen: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut out = Vec::with_capacity(positives.len());
    let mut fallbacks = 0;
    'pairs: for (a, b) in positives.iter() {
        let (ba, bb) = (bins.bin_of(a), bins.bin_of(b));
        for radius in 0..bins.n_bins().max(1) {
            for _ in 0..DEGREE_MATCH_ATTEMPTS {
                let (Some(x), Some(y)) = (bins.draw(ba, radius, rng), bins.draw(bb, radius, rng)) else {
                    break;
                };
                if x == y || exclude.contains(x, y) || !chosen.insert(unordered(x, y)) {
                    continue;
                }
                if radius > 0 {
                    fallbacks += 1;
                }
                out.push((x, y));
                continue 'pairs;
            }
        }
        return Err(Error::Sampling(format!(
            "no degree-matched negative found for pair ({a}, {b})"
        )));
    }
    Ok(MatchedNegatives {
        pairs: PairSet::dedup_from(out, Role::EvalNegative),
        fallbacks,
    })
}
