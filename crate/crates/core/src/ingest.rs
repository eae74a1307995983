//! In-memory side of ingestion: id mapping, confidence filtering and dataset
//! statistics. Parsing files is the `cal` crate's job.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{unordered, AssociationGraph, Edge, EmbeddingSet, PairSet, Role};

/// Highest confidence a channel can carry.
pub const MAX_CONFIDENCE: u16 = 1000;

/// Exact-match source to target id table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdMapping {
    map: BTreeMap<String, String>,
}

/// Outcome of mapping a list of ids.
#[derive(Debug, Clone, PartialEq)]
pub struct MappedIds {
    /// Target ids of the kept entries, in input order.
    pub ids: Vec<String>,
    /// Input positions that were kept.
    pub kept: Vec<usize>,
    pub unmapped: Vec<String>,
    /// `kept / total`; zero for an empty input.
    pub coverage: f64,
}

impl IdMapping {
    /// Fails on a repeated source key.
    pub fn from_pairs<I, S>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, S)>,
        S: Into<String>,
    {
        let mut map = BTreeMap::new();
        for (src, dst) in pairs {
            let src = src.into();
            if map.contains_key(&src) {
                return Err(Error::Mapping(format!("duplicate source id {src:?}")));
            }
            map.insert(src, dst.into());
        }
        Ok(Self { map })
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&str> {
        self.map.get(id).map(String::as_str)
    }

    /// Drops ids without an entry. Two sources mapping onto one target keep
    /// only the first.
    pub fn apply<S: AsRef<str>>(&self, raw_ids: &[S]) -> MappedIds {
        let mut ids = Vec::new();
        let mut kept = Vec::new();
        let mut unmapped = Vec::new();
        let mut targets = BTreeSet::new();
        for (i, raw) in raw_ids.iter().enumerate() {
            match self.map.get(raw.as_ref()) {
                Some(t) if targets.insert(t.clone()) => {
                    ids.push(t.clone());
                    kept.push(i);
                }
                _ => unmapped.push(String::from(raw.as_ref())),
            }
        }
        let coverage = if raw_ids.is_empty() {
            0.0
        } else {
            kept.len() as f64 / raw_ids.len() as f64
        };
        MappedIds {
            ids,
            kept,
            unmapped,
            coverage,
        }
    }
}

/// Resolves a channel name against a header. `combined` is accepted for
/// `combined_score`.
pub fn channel_index(channels: &[String], name: &str) -> Result<usize> {
    let want = if name == "combined" { "combined_score" } else { name };
    channels
        .iter()
        .position(|c| c == want || c == name)
        .ok_or_else(|| Error::Schema(format!("no channel {name:?} in header (have {})", channels.join(", "))))
}

/// One association record before filtering, with ids already resolved to
/// embedding rows (`None` when an endpoint has no embedding).
#[derive(Debug, Clone, PartialEq)]
pub struct RawEdge {
    pub a: Option<usize>,
    pub b: Option<usize>,
    pub scores: Vec<u16>,
}

/// Counts of what filtering dropped.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterCounts {
    pub records: usize,
    pub below_threshold: usize,
    pub unmapped: usize,
    pub self_loops: usize,
    pub duplicates: usize,
    pub kept: usize,
}

/// Keeps records whose `channel` score is at least `min_confidence` and whose
/// endpoints both have embeddings. Self-loops go, and each unordered pair is
/// kept once (first record wins). A threshold above [`MAX_CONFIDENCE`] is
/// accepted and simply keeps nothing.
pub fn filter_edges(
    n_entities: usize,
    channels: Vec<String>,
    records: impl IntoIterator<Item = RawEdge>,
    channel: &str,
    min_confidence: u16,
) -> Result<(AssociationGraph, PairSet, FilterCounts)> {
    let col = channel_index(&channels, channel)?;
    let mut counts = FilterCounts::default();
    let mut seen = BTreeSet::new();
    let mut edges = Vec::new();
    for r in records {
        counts.records += 1;
        if r.scores.len() != channels.len() {
            return Err(Error::Shape {
                expected: channels.len(),
                found: r.scores.len(),
            });
        }
        if r.scores[col] < min_confidence {
            counts.below_threshold += 1;
            continue;
        }
        let (Some(a), Some(b)) = (r.a, r.b) else {
            counts.unmapped += 1;
            continue;
        };
        if a == b {
            counts.self_loops += 1;
            continue;
        }
        if !seen.insert(unordered(a, b)) {
            counts.duplicates += 1;
            continue;
        }
        edges.push(Edge { a, b, scores: r.scores });
    }
    counts.kept = edges.len();
    if edges.is_empty() {
        return Err(Error::EmptyData(format!(
            "no associations with {channel} >= {min_confidence} between embedded entities"
        )));
    }
    let graph = AssociationGraph::new(n_entities, channels, edges)?;
    let pairs = graph.to_pairs().with_role(Role::TrainPositive);
    Ok((graph, pairs, counts))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_pairs: usize,
    pub cross_boundary_fraction: f64,
    pub mean_positive_cosine: f64,
    pub fraction_cosine_above_half: f64,
    /// Share of embedding ids that survived id mapping; 1 without a mapping.
    pub mapping_coverage: f64,
}

pub fn dataset_stats(embeddings: &EmbeddingSet, positives: &PairSet, cb_threshold: f64) -> Result<DatasetStats> {
    if positives.is_empty() {
        return Err(Error::EmptyData("no positive pairs".into()));
    }
    let mut cb = 0usize;
    let mut high = 0usize;
    let mut sum = 0.0;
    for (a, b) in positives.iter() {
        let c = embeddings.cosine(a, b);
        sum += c;
        if c.abs() < cb_threshold {
            cb += 1;
        }
        if c > 0.5 {
            high += 1;
        }
    }
    let n = positives.len() as f64;
    Ok(DatasetStats {
        n_pairs: positives.len(),
        cross_boundary_fraction: cb as f64 / n,
        mean_positive_cosine: sum / n,
        fraction_cosine_above_half: high as f64 / n,
        mapping_coverage: 1.0,
    })
}
