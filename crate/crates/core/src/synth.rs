//! Synthetic scenarios with planted association structure.
//!
//! Every scenario draws clean unit vectors `c_i`, plants pairs from them, and
//! publishes noisy observations `e_i = normalize(c_i + noise · ξ_i / sqrt(d))`
//! with `ξ_i` standard normal.
//!
//! * `latent_signal`: a fixed random map `h(x) = W2 · GELU(W1 x + b1) + b2`
//!   (one hidden layer, `b2` centers `h` over the entities). Positives are the
//!   `n_pairs` pairs with the largest `½(ĥ(c_i)·c_j + ĥ(c_j)·c_i)`, where
//!   `ĥ = h / |h|`. The map is unrelated to the identity, so cosine sees
//!   almost nothing.
//! * `clustered_positives`: part of the entities sit in one tight region
//!   around a centre `μ`. Region entities are split into members
//!   (`μ + β v + s ξ`) and decoys (`μ − β v + s ξ`) along a hidden direction
//!   `v`. Positives join members only: each member takes its best partners
//!   under a latent map applied to the member's offset from the member mean,
//!   round by round, so member degrees stay even. Decoy pairs look just as
//!   similar but are never associated.
//! * `degree_confound`: a fraction of the pairs join endpoints drawn with
//!   probability proportional to `exp(κ · sqrt(d) · c_i·u)` for a hidden
//!   direction `u`, so a few entities carry most pairs; the rest are
//!   latent-map pairs among the lighter half of the entities.
//! * `no_signal`: uniformly random pairs.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::gelu;
use crate::rng::SeededRng;
use crate::types::{unordered, AssociationGraph, Edge, EmbeddingSet, PairSet, Role};

/// Score written to the single channel of generated association files.
pub const SYNTH_SCORE: u16 = 999;
pub const SYNTH_CHANNEL: &str = "combined_score";

const STREAM_VECTORS: u64 = 0;
const STREAM_MAP: u64 = 1;
const STREAM_PAIRS: u64 = 2;
const STREAM_NOISE: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    LatentSignal,
    ClusteredPositives,
    DegreeConfound,
    NoSignal,
}

impl ScenarioKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::LatentSignal => "latent_signal",
            ScenarioKind::ClusteredPositives => "clustered_positives",
            ScenarioKind::DegreeConfound => "degree_confound",
            ScenarioKind::NoSignal => "no_signal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub n_entities: usize,
    pub dim: usize,
    pub n_pairs: usize,
    #[serde(default = "defaults::noise_level")]
    pub noise_level: f64,
    #[serde(default)]
    pub seed: u64,
    /// Hidden width of the planted map.
    #[serde(default = "defaults::latent_width")]
    pub latent_width: usize,
    /// Share of entities in the clustered region.
    #[serde(default = "defaults::cluster_fraction")]
    pub cluster_fraction: f64,
    /// Share of the region that are members (the rest are decoys).
    #[serde(default = "defaults::member_fraction")]
    pub member_fraction: f64,
    /// Member/decoy offset `β` along the hidden direction.
    #[serde(default = "defaults::cluster_offset")]
    pub cluster_offset: f64,
    /// Within-region spread `s`.
    #[serde(default = "defaults::cluster_spread")]
    pub cluster_spread: f64,
    /// Fraction of degree-driven pairs in `degree_confound`.
    #[serde(default = "defaults::degree_pair_fraction")]
    pub degree_pair_fraction: f64,
    /// Hub skew `κ` in `degree_confound`.
    #[serde(default = "defaults::hub_skew")]
    pub hub_skew: f64,
}

mod defaults {
    pub fn noise_level() -> f64 {
        0.1
    }
    pub fn latent_width() -> usize {
        32
    }
    pub fn cluster_fraction() -> f64 {
        0.5
    }
    pub fn member_fraction() -> f64 {
        0.5
    }
    pub fn cluster_offset() -> f64 {
        0.5
    }
    pub fn cluster_spread() -> f64 {
        0.5
    }
    pub fn degree_pair_fraction() -> f64 {
        0.85
    }
    pub fn hub_skew() -> f64 {
        1.0
    }
}

impl ScenarioSpec {
    /// Spec with every optional knob at its default.
    pub fn new(kind: ScenarioKind, n_entities: usize, dim: usize, n_pairs: usize, seed: u64) -> Self {
        Self {
            kind,
            n_entities,
            dim,
            n_pairs,
            noise_level: defaults::noise_level(),
            seed,
            latent_width: defaults::latent_width(),
            cluster_fraction: defaults::cluster_fraction(),
            member_fraction: defaults::member_fraction(),
            cluster_offset: defaults::cluster_offset(),
            cluster_spread: defaults::cluster_spread(),
            degree_pair_fraction: defaults::degree_pair_fraction(),
            hub_skew: defaults::hub_skew(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let max_pairs = self.n_entities * self.n_entities.saturating_sub(1) / 2;
        if self.dim < 2 {
            return Err(Error::Config("scenario dim must be at least 2".into()));
        }
        if self.n_pairs == 0 || self.n_pairs > max_pairs {
            return Err(Error::Config(format!(
                "n_pairs = {} must lie in 1..={max_pairs} for {} entities",
                self.n_pairs, self.n_entities
            )));
        }
        if !(self.noise_level >= 0.0) || !self.noise_level.is_finite() {
            return Err(Error::Config("noise_level must be non-negative".into()));
        }
        if self.latent_width == 0 {
            return Err(Error::Config("latent_width must be positive".into()));
        }
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        if !unit(self.cluster_fraction) || !unit(self.member_fraction) || !(0.0..=1.0).contains(&self.degree_pair_fraction) {
            return Err(Error::Config("scenario fractions must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// The planted map `x ↦ normalize(W2 · GELU(W1 x + b1) + b2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentMap {
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<Vec<f64>>,
    pub b2: Vec<f64>,
}

impl LatentMap {
    fn random(dim: usize, width: usize, rng: &mut SeededRng) -> Self {
        let w1 = (0..width).map(|_| (0..dim).map(|_| rng.normal()).collect()).collect();
        let b1 = (0..width).map(|_| 0.5 * rng.normal()).collect();
        let scale = 1.0 / libm::sqrt(width as f64);
        let w2 = (0..dim).map(|_| (0..width).map(|_| scale * rng.normal()).collect()).collect();
        Self {
            w1,
            b1,
            w2,
            b2: vec![0.0; dim],
        }
    }

    fn raw(&self, x: &[f64]) -> Vec<f64> {
        let hidden: Vec<f64> = self
            .w1
            .iter()
            .zip(&self.b1)
            .map(|(w, b)| gelu(w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + b))
            .collect();
        self.w2
            .iter()
            .zip(&self.b2)
            .map(|(w, b)| w.iter().zip(&hidden).map(|(a, h)| a * h).sum::<f64>() + b)
            .collect()
    }

    /// `ĥ(x)`; a zero output maps to the zero vector.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut v = self.raw(x);
        let n = libm::sqrt(v.iter().map(|a| a * a).sum::<f64>());
        if n > 0.0 {
            v.iter_mut().for_each(|a| *a /= n);
        }
        v
    }

    /// Shifts `b2` so the raw outputs over `points` average to zero.
    fn center(&mut self, points: &[Vec<f64>]) {
        let d = self.b2.len();
        let mut mean = vec![0.0; d];
        for p in points {
            for (m, v) in mean.iter_mut().zip(self.raw(p)) {
                *m += v;
            }
        }
        for (b, m) in self.b2.iter_mut().zip(&mean) {
            *b -= m / points.len() as f64;
        }
    }
}

/// What was planted, for manifests and oracle scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Planted {
    Latent {
        map: LatentMap,
    },
    Clusters {
        center: Vec<f64>,
        direction: Vec<f64>,
        members: Vec<usize>,
        decoys: Vec<usize>,
        /// Acts on member residuals (orthogonal to the member mean).
        map: LatentMap,
    },
    Degree {
        hub_direction: Vec<f64>,
        degree_pairs: usize,
        latent_pairs: usize,
        map: LatentMap,
    },
    None,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub embeddings: EmbeddingSet,
    pub positives: PairSet,
    pub graph: AssociationGraph,
    pub planted: Planted,
}

impl Scenario {
    /// Planted-oracle scores `½(ĥ(e_a)·e_b + ĥ(e_b)·e_a)` on the observed
    /// embeddings, for scenarios with a latent map.
    pub fn oracle_scores(&self, pairs: &PairSet) -> Option<Vec<f64>> {
        let map = match &self.planted {
            Planted::Latent { map } | Planted::Degree { map, .. } => map,
            _ => return None,
        };
        let e = &self.embeddings;
        let vec64 = |i: usize| e.vector(i).iter().map(|x| *x as f64).collect::<Vec<f64>>();
        let mut cache: alloc::collections::BTreeMap<usize, Vec<f64>> = Default::default();
        let mut mapped = |i: usize| cache.entry(i).or_insert_with(|| map.apply(&vec64(i))).clone();
        Some(
            pairs
                .iter()
                .map(|(a, b)| {
                    let (ha, hb) = (mapped(a), mapped(b));
                    let ab: f64 = ha.iter().zip(vec64(b)).map(|(x, y)| x * y).sum();
                    let ba: f64 = hb.iter().zip(vec64(a)).map(|(x, y)| x * y).sum();
                    0.5 * (ab + ba)
                })
                .collect(),
        )
    }

    pub fn ids(&self) -> &[String] {
        self.embeddings.ids()
    }
}

fn random_unit(dim: usize, rng: &mut SeededRng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let n = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn normalize(v: &mut [f64]) {
    let n = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Top `k` unordered pairs by `½(ĥ_i·c_j + ĥ_j·c_i)`, skipping `taken`.
fn top_latent_pairs(clean: &[Vec<f64>], map: &LatentMap, k: usize, taken: &BTreeSet<(usize, usize)>) -> Vec<(usize, usize)> {
    let n = clean.len();
    let mapped: Vec<Vec<f64>> = clean.iter().map(|c| map.apply(c)).collect();
    let cm = Matrix::from_fn(n, clean[0].len(), |r, c| clean[r][c]);
    let hm = Matrix::from_fn(n, clean[0].len(), |r, c| mapped[r][c]);
    let cross = crate::linalg::matmul(&hm, false, &cm, true);
    let mut all: Vec<(f64, u32, u32)> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            if !taken.contains(&(i, j)) {
                all.push((0.5 * (cross.get(i, j) + cross.get(j, i)), i as u32, j as u32));
            }
        }
    }
    let order = |x: &(f64, u32, u32), y: &(f64, u32, u32)| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2));
    let k = k.min(all.len());
    if k > 0 && k < all.len() {
        all.select_nth_unstable_by(k - 1, order);
    }
    all.truncate(k);
    all.sort_unstable_by(order);
    all.into_iter().map(|(_, a, b)| (a as usize, b as usize)).collect()
}

/// Like [`top_latent_pairs`] but every entity contributes partners in turn,
/// taking its next-best partner each round, so degrees stay even.
fn balanced_latent_pairs(clean: &[Vec<f64>], map: &LatentMap, k: usize) -> Vec<(usize, usize)> {
    let n = clean.len();
    let mapped: Vec<Vec<f64>> = clean.iter().map(|c| map.apply(c)).collect();
    let cm = Matrix::from_fn(n, clean[0].len(), |r, c| clean[r][c]);
    let hm = Matrix::from_fn(n, clean[0].len(), |r, c| mapped[r][c]);
    let cross = crate::linalg::matmul(&hm, false, &cm, true);
    let ranked: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let score = |j: usize| cross.get(i, j) + cross.get(j, i);
            others.sort_by(|&x, &y| score(y).total_cmp(&score(x)).then(x.cmp(&y)));
            others
        })
        .collect();
    let k = k.min(n * (n - 1) / 2);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(k);
    'rounds: for r in 0..n.saturating_sub(1) {
        for (i, list) in ranked.iter().enumerate() {
            let pair = unordered(i, list[r]);
            if seen.insert(pair) {
                out.push(pair);
                if out.len() == k {
                    break 'rounds;
                }
            }
        }
    }
    out
}

/// Draws an index with probability proportional to `cumulative` increments.
fn draw_weighted(cumulative: &[f64], rng: &mut SeededRng) -> usize {
    let total = *cumulative.last().expect("non-empty weights");
    let u = rng.next_f64() * total;
    cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1)
}

/// Generates `spec` deterministically.
pub fn generate(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    let (n, d) = (spec.n_entities, spec.dim);
    let root = SeededRng::new(spec.seed);
    let mut vec_rng = root.child(STREAM_VECTORS);
    let mut map_rng = root.child(STREAM_MAP);
    let mut pair_rng = root.child(STREAM_PAIRS);
    let mut noise_rng = root.child(STREAM_NOISE);

    let (clean, pairs, planted): (Vec<Vec<f64>>, Vec<(usize, usize)>, Planted) = match spec.kind {
        ScenarioKind::LatentSignal => {
            let clean: Vec<Vec<f64>> = (0..n).map(|_| random_unit(d, &mut vec_rng)).collect();
            let mut map = LatentMap::random(d, spec.latent_width, &mut map_rng);
            map.center(&clean);
            let pairs = top_latent_pairs(&clean, &map, spec.n_pairs, &BTreeSet::new());
            (clean, pairs, Planted::Latent { map })
        }
        ScenarioKind::ClusteredPositives => {
            let region = libm::round(spec.cluster_fraction * n as f64) as usize;
            let n_members = libm::round(spec.member_fraction * region as f64) as usize;
            let feasible = n_members * n_members.saturating_sub(1) / 2;
            if spec.n_pairs > feasible {
                return Err(Error::Config(format!(
                    "clustered_positives cannot place {} pairs among {n_members} members (at most {feasible})",
                    spec.n_pairs
                )));
            }
            let center = random_unit(d, &mut map_rng);
            let mut direction = random_unit(d, &mut map_rng);
            let proj = dot(&direction, &center);
            direction.iter_mut().zip(&center).for_each(|(v, c)| *v -= proj * c);
            normalize(&mut direction);
            let order = vec_rng.permutation(n);
            let members: Vec<usize> = order[..n_members].to_vec();
            let decoys: Vec<usize> = order[n_members..region].to_vec();
            let mut role = vec![0i8; n];
            members.iter().for_each(|&i| role[i] = 1);
            decoys.iter().for_each(|&i| role[i] = -1);
            let s = spec.cluster_spread / libm::sqrt(d as f64);
            let clean: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    if role[i] == 0 {
                        return random_unit(d, &mut vec_rng);
                    }
                    let sign = role[i] as f64;
                    let mut v: Vec<f64> = (0..d)
                        .map(|k| center[k] + sign * spec.cluster_offset * direction[k] + s * vec_rng.normal())
                        .collect();
                    normalize(&mut v);
                    v
                })
                .collect();
            // Which members pair up is decided by the planted map acting on
            // the part of each member orthogonal to the region mean.
            let mut mean = vec![0.0; d];
            for &i in &members {
                mean.iter_mut().zip(&clean[i]).for_each(|(m, x)| *m += x);
            }
            normalize(&mut mean);
            let residual: Vec<Vec<f64>> = members
                .iter()
                .map(|&i| {
                    let p = dot(&clean[i], &mean);
                    let mut r: Vec<f64> = clean[i].iter().zip(&mean).map(|(x, m)| x - p * m).collect();
                    normalize(&mut r);
                    r
                })
                .collect();
            let mut map = LatentMap::random(d, spec.latent_width, &mut map_rng);
            map.center(&residual);
            let pairs: Vec<(usize, usize)> = balanced_latent_pairs(&residual, &map, spec.n_pairs)
                .into_iter()
                .map(|(a, b)| (members[a], members[b]))
                .collect();
            let planted = Planted::Clusters {
                center,
                direction,
                members,
                decoys,
                map,
            };
            (clean, pairs, planted)
        }
        ScenarioKind::DegreeConfound => {
            let clean: Vec<Vec<f64>> = (0..n).map(|_| random_unit(d, &mut vec_rng)).collect();
            let hub = random_unit(d, &mut map_rng);
            let mut map = LatentMap::random(d, spec.latent_width, &mut map_rng);
            map.center(&clean);
            let n_degree = libm::round(spec.degree_pair_fraction * spec.n_pairs as f64) as usize;
            let n_latent = spec.n_pairs - n_degree;
            let sqrt_d = libm::sqrt(d as f64);
            let weights: Vec<f64> = clean.iter().map(|c| libm::exp(spec.hub_skew * sqrt_d * dot(c, &hub))).collect();
            // Latent pairs live among the lighter half of the entities.
            let mut by_weight: Vec<usize> = (0..n).collect();
            by_weight.sort_by(|&a, &b| weights[a].total_cmp(&weights[b]).then(a.cmp(&b)));
            let light: Vec<usize> = by_weight[..(n / 2).max(2)].to_vec();
            let light_clean: Vec<Vec<f64>> = light.iter().map(|&i| clean[i].clone()).collect();
            let mut pairs: Vec<(usize, usize)> = top_latent_pairs(&light_clean, &map, n_latent, &BTreeSet::new())
                .into_iter()
                .map(|(a, b)| (light[a], light[b]))
                .collect();
            let mut seen: BTreeSet<(usize, usize)> = pairs.iter().map(|&(a, b)| unordered(a, b)).collect();
            let mut cumulative = Vec::with_capacity(n);
            let mut acc = 0.0;
            for w in &weights {
                acc += w;
                cumulative.push(acc);
            }
            let max_pairs = n * (n - 1) / 2;
            let budget = 1000 * spec.n_pairs.max(1);
            let mut attempts = 0;
            while pairs.len() < spec.n_pairs {
                attempts += 1;
                if attempts > budget || seen.len() >= max_pairs {
                    return Err(Error::Config(format!(
                        "degree_confound could not place {n_degree} hub pairs; lower hub_skew or n_pairs"
                    )));
                }
                let a = draw_weighted(&cumulative, &mut pair_rng);
                let b = draw_weighted(&cumulative, &mut pair_rng);
                if a != b && seen.insert(unordered(a, b)) {
                    pairs.push((a, b));
                }
            }
            let planted = Planted::Degree {
                hub_direction: hub,
                degree_pairs: n_degree,
                latent_pairs: n_latent,
                map,
            };
            (clean, pairs, planted)
        }
        ScenarioKind::NoSignal => {
            let clean: Vec<Vec<f64>> = (0..n).map(|_| random_unit(d, &mut vec_rng)).collect();
            let mut seen = BTreeSet::new();
            let mut pairs = Vec::with_capacity(spec.n_pairs);
            while pairs.len() < spec.n_pairs {
                let a = pair_rng.index(n);
                let b = pair_rng.index(n);
                if a != b && seen.insert(unordered(a, b)) {
                    pairs.push((a, b));
                }
            }
            (clean, pairs, Planted::None)
        }
    };

    let scale = spec.noise_level / libm::sqrt(d as f64);
    let observed = Matrix::from_fn(n, d, |r, c| (clean[r][c] + scale * noise_rng.normal()) as f32);
    let ids: Vec<String> = (0..n).map(|i| format!("E{i:05}")).collect();
    let embeddings = EmbeddingSet::from_raw(ids, observed)?;
    if spec.kind == ScenarioKind::ClusteredPositives {
        let high = pairs.iter().filter(|&&(a, b)| embeddings.cosine(a, b) > 0.5).count();
        if (high as f64) < 0.9 * pairs.len() as f64 {
            return Err(Error::Config(format!(
                "clustered_positives produced only {high} of {} positives with cosine > 0.5; reduce cluster_spread",
                pairs.len()
            )));
        }
    }
    let edges = pairs
        .iter()
        .map(|&(a, b)| Edge {
            a,
            b,
            scores: vec![SYNTH_SCORE],
        })
        .collect();
    let graph = AssociationGraph::new(n, vec![SYNTH_CHANNEL.to_string()], edges)?;
    let positives = PairSet::new(pairs, Role::TrainPositive, n)?;
    Ok(Scenario {
        spec: spec.clone(),
        embeddings,
        positives,
        graph,
        planted,
    })
}
