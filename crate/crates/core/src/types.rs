//! Shared domain types: embeddings, association graphs and pair sets.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot_f64, Matrix};
use crate::pca::PcaProjection;
use crate::scalar::Real;

/// Scales `v` to unit Euclidean norm.
pub fn l2_normalize<T: Real>(v: &[T]) -> Result<alloc::vec::Vec<T>> {
    let norm = libm::sqrt(v.iter().map(|x| x.to_f64() * x.to_f64()).sum::<f64>());
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Normalization { row: None });
    }
    Ok(v.iter().map(|x| T::from_f64(x.to_f64() / norm)).collect())
}

/// Dot product of two unit vectors, accumulated in `f64`.
pub fn cosine<T: Real>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| x.to_f64() * y.to_f64()).sum())
}

/// Entity identifiers with a row-aligned matrix of unit-norm vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    ids: Vec<String>,
    vectors: Matrix<f32>,
    index: BTreeMap<String, usize>,
    projection: Option<PcaProjection>,
}

impl EmbeddingSet {
    /// Builds a set from raw rows, L2-normalizing each one.
    pub fn from_raw(ids: Vec<String>, raw: Matrix<f32>) -> Result<Self> {
        let mut vectors = raw;
        for r in 0..vectors.rows() {
            let row = vectors.row_mut(r);
            let unit = l2_normalize(row).map_err(|_| Error::Normalization { row: Some(r) })?;
            row.copy_from_slice(&unit);
        }
        Self::new(ids, vectors)
    }

    /// Builds a set from rows that are already unit-norm.
    pub fn new(ids: Vec<String>, vectors: Matrix<f32>) -> Result<Self> {
        if ids.len() != vectors.rows() {
            return Err(Error::Shape {
                expected: vectors.rows(),
                found: ids.len(),
            });
        }
        let mut index = BTreeMap::new();
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate entity id {id:?}")));
            }
        }
        for (r, row) in vectors.iter_rows().enumerate() {
            let n = libm::sqrt(dot_f64(row, row));
            if (n - 1.0).abs() > 1e-5 {
                return Err(Error::Normalization { row: Some(r) });
            }
        }
        Ok(Self {
            ids,
            vectors,
            index,
            projection: None,
        })
    }

    pub fn with_projection(mut self, projection: PcaProjection) -> Self {
        self.projection = Some(projection);
        self
    }

    pub fn projection(&self) -> Option<&PcaProjection> {
        self.projection.as_ref()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn vectors(&self) -> &Matrix<f32> {
        &self.vectors
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        self.vectors.row(i)
    }

    pub fn cosine(&self, a: usize, b: usize) -> f64 {
        dot_f64(self.vectors.row(a), self.vectors.row(b))
    }

    /// Rows for `indices` as a matrix of `T`.
    pub fn gather<T: Real>(&self, indices: &[usize]) -> Matrix<T> {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend(self.vectors.row(i).iter().map(|v| T::from_f64(*v as f64)));
        }
        Matrix::from_vec(indices.len(), d, data).expect("gather shape")
    }
}

/// One undirected association with per-channel integer confidences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub scores: Vec<u16>,
}

/// Undirected graph over the entities of an [`EmbeddingSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationGraph {
    channels: Vec<String>,
    edges: Vec<Edge>,
    degree: Vec<u32>,
}

impl AssociationGraph {
    /// Validates edges (no self-loops, one record per unordered pair) and
    /// derives per-entity degree.
    pub fn new(n_entities: usize, channels: Vec<String>, edges: Vec<Edge>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut degree = alloc::vec![0u32; n_entities];
        for e in &edges {
            if e.a >= n_entities || e.b >= n_entities {
                return Err(Error::Config(format!(
                    "edge ({}, {}) out of range for {n_entities} entities",
                    e.a, e.b
                )));
            }
            if e.a == e.b {
                return Err(Error::Config(format!("self-loop on entity {}", e.a)));
            }
            if e.scores.len() != channels.len() {
                return Err(Error::Shape {
                    expected: channels.len(),
                    found: e.scores.len(),
                });
            }
            if !seen.insert(unordered(e.a, e.b)) {
                return Err(Error::Config(format!("duplicate edge ({}, {})", e.a, e.b)));
            }
            degree[e.a] += 1;
            degree[e.b] += 1;
        }
        Ok(Self {
            channels,
            edges,
            degree,
        })
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn degree(&self, entity: usize) -> u32 {
        self.degree[entity]
    }

    pub fn degrees(&self) -> &[u32] {
        &self.degree
    }

    pub fn n_entities(&self) -> usize {
        self.degree.len()
    }

    /// All edges as a train-positive pair set.
    pub fn to_pairs(&self) -> PairSet {
        PairSet {
            pairs: self.edges.iter().map(|e| (e.a, e.b)).collect(),
            role: Role::TrainPositive,
        }
    }
}

#[inline]
pub fn unordered(a: usize, b: usize) -> (usize, usize) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    TrainPositive,
    EvalPositive,
    EvalNegative,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::TrainPositive => "train_positive",
            Role::EvalPositive => "eval_positive",
            Role::EvalNegative => "eval_negative",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train_positive" => Some(Role::TrainPositive),
            "eval_positive" => Some(Role::EvalPositive),
            "eval_negative" => Some(Role::EvalNegative),
            _ => None,
        }
    }
}

/// Ordered list of entity index pairs sharing one role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSet {
    pairs: Vec<(usize, usize)>,
    role: Role,
}

impl PairSet {
    /// Validates range, self-pairs and orientation duplicates.
    pub fn new(pairs: Vec<(usize, usize)>, role: Role, n_entities: usize) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for &(a, b) in &pairs {
            if a >= n_entities || b >= n_entities {
                return Err(Error::Config(format!(
                    "pair ({a}, {b}) out of range for {n_entities} entities"
                )));
            }
            if a == b {
                return Err(Error::Config(format!("self-pair ({a}, {a})")));
            }
            if !seen.insert(unordered(a, b)) {
                return Err(Error::Config(format!("duplicate pair ({a}, {b})")));
            }
        }
        Ok(Self { pairs, role })
    }

    /// Keeps the first occurrence of each unordered pair, dropping self-pairs.
    pub fn dedup_from(pairs: impl IntoIterator<Item = (usize, usize)>, role: Role) -> Self {
        let mut seen = BTreeSet::new();
        let pairs = pairs
            .into_iter()
            .filter(|&(a, b)| a != b && seen.insert(unordered(a, b)))
            .collect();
        Self { pairs, role }
    }

    pub fn empty(role: Role) -> Self {
        Self {
            pairs: Vec::new(),
            role,
        }
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pairs.iter().copied()
    }

    pub fn first_column(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.0).collect()
    }

    pub fn second_column(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.1).collect()
    }

    /// Sorted list of distinct entities touched by any pair.
    pub fn entities(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
        set.into_iter().collect()
    }
}

/// Constant-time-ish membership test for unordered pairs, backed by sorted
/// adjacency lists.
#[derive(Debug, Clone)]
pub struct PairIndex {
    neighbors: Vec<Vec<u32>>,
    len: usize,
}

impl PairIndex {
    pub fn new(n_entities: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut neighbors = alloc::vec![Vec::new(); n_entities];
        for (a, b) in pairs {
            neighbors[a].push(b as u32);
            neighbors[b].push(a as u32);
        }
        let mut len = 0;
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
            len += list.len();
        }
        Self {
            neighbors,
            len: len / 2,
        }
    }

    #[inline]
    pub fn contains(&self, a: usize, b: usize) -> bool {
        let (x, y) = if self.neighbors[a].len() <= self.neighbors[b].len() {
            (a, b)
        } else {
            (b, a)
        };
        self.neighbors[x].binary_search(&(y as u32)).is_ok()
    }

    /// Number of distinct unordered pairs indexed.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn n_entities(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, a: usize) -> &[u32] {
        &self.neighbors[a]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    #[test]
    fn normalize_examples() {
        let v = l2_normalize(&[3.0f64, 4.0]).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
        assert_eq!(l2_normalize(&[1.0f64, 0.0, 0.0]).unwrap(), vec![1.0, 0.0, 0.0]);
        assert!(matches!(
            l2_normalize(&[0.0f64, 0.0]),
            Err(Error::Normalization { .. })
        ));
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[1.0f64, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0f64, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine(&[1.0f64, 0.0], &[-1.0, 0.0]).unwrap(), -1.0);
        assert!(matches!(
            cosine(&[1.0f64, 0.0], &[1.0, 0.0, 0.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn embedding_set_rejects_duplicate_ids_and_zero_rows() {
        let m = Matrix::from_vec(2, 2, vec![1.0f32, 0.0, 0.0, 1.0]).unwrap();
        assert!(EmbeddingSet::new(vec!["a".into(), "a".into()], m.clone()).is_err());
        let z = Matrix::from_vec(2, 2, vec![1.0f32, 1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            EmbeddingSet::from_raw(vec!["a".into(), "b".into()], z),
            Err(Error::Normalization { row: Some(1) })
        ));
        let e = EmbeddingSet::new(vec!["a".to_string(), "b".to_string()], m).unwrap();
        assert_eq!(e.index_of("b"), Some(1));
        assert_eq!(e.index_of("B"), None);
    }

    #[test]
    fn pair_set_validation() {
        assert!(PairSet::new(vec![(0, 1), (1, 0)], Role::TrainPositive, 3).is_err());
        assert!(PairSet::new(vec![(0, 0)], Role::TrainPositive, 3).is_err());
        assert!(PairSet::new(vec![(0, 3)], Role::TrainPositive, 3).is_err());
        let p = PairSet::dedup_from([(0, 1), (1, 0), (2, 2), (1, 2)], Role::EvalNegative);
        assert_eq!(p.pairs(), &[(0, 1), (1, 2)]);
    }

    #[test]
    fn graph_degree_counts_incident_edges() {
        let edges = vec![
            Edge { a: 0, b: 1, scores: vec![900] },
            Edge { a: 1, b: 2, scores: vec![950] },
        ];
        let g = AssociationGraph::new(4, vec!["combined_score".into()], edges).unwrap();
        assert_eq!(g.degrees(), &[1, 2, 1, 0]);
        let dup = vec![
            Edge { a: 0, b: 1, scores: vec![900] },
            Edge { a: 1, b: 0, scores: vec![900] },
        ];
        assert!(AssociationGraph::new(2, vec!["c".into()], dup).is_err());
    }

    #[test]
    fn pair_index_membership() {
        let idx = PairIndex::new(5, [(0, 1), (3, 1), (1, 0)]);
        assert!(idx.contains(1, 0) && idx.contains(1, 3) && idx.contains(3, 1));
        assert!(!idx.contains(0, 3));
        assert_eq!(idx.len(), 2);
    }
}
