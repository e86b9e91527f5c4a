//! Search-branch pruning by retrieval overlap.
//!
//! Sibling search nodes that retrieved near-identical passage sets explore
//! the same direction, so only one of them is worth expanding. Each candidate
//! is reduced to the set of passage ids it retrieved; pairwise distance is
//! one minus the Jaccard similarity of those sets; candidates are merged by
//! agglomerative clustering until `k` clusters remain; and each cluster is
//! represented by its medoid. A uniform random retention mode exists as an
//! ablation baseline.
//!
//! Candidate sets are tiny (at most the layer's sampling budget), so the
//! clustering is the naive O(n^3) loop with fully deterministic tie-breaks:
//! on equal merge distances the earliest pair in scan order wins, and medoid
//! ties go to the earliest candidate position.

use crate::model::{NodeId, PassageId};
use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

/// The passage ids one search child retrieved, keyed by the node that owns
/// them. Passage identity is the corpus passage id; passage text plays no
/// part in similarity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassageSet {
    pub node_id: NodeId,
    pub passage_ids: BTreeSet<PassageId>,
}

impl PassageSet {
    pub fn new(node_id: NodeId, ids: impl IntoIterator<Item = PassageId>) -> Self {
        PassageSet {
            node_id,
            passage_ids: ids.into_iter().collect(),
        }
    }
}

/// Jaccard similarity of two retrieval sets: intersection size over union
/// size. Two empty sets count as identical (1.0); an empty set against a
/// nonempty one shares nothing (0.0).
pub fn jaccard_similarity(a: &PassageSet, b: &PassageSet) -> f64 {
    let union = a.passage_ids.union(&b.passage_ids).count();
    if union == 0 {
        return 1.0;
    }
    let intersection = a.passage_ids.intersection(&b.passage_ids).count();
    intersection as f64 / union as f64
}

/// Symmetric matrix of pairwise distances `1 - jaccard`, zero on the
/// diagonal, indexed by candidate position.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    size: usize,
    entries: Vec<f64>,
}

impl DistanceMatrix {
    /// Builds the matrix from explicit entries; `entries[i][j]` must equal
    /// `entries[j][i]`, be zero on the diagonal, and lie in [0, 1].
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, PruneError> {
        let size = rows.len();
        let mut matrix = DistanceMatrix {
            size,
            entries: vec![0.0; size * size],
        };
        for (i, row) in rows.iter().enumerate() {
            if row.len() != size {
                return Err(PruneError::MalformedMatrix);
            }
            for (j, &value) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&value)
                    || (i == j && value != 0.0)
                    || (rows[j][i] - value).abs() > 1e-12
                {
                    return Err(PruneError::MalformedMatrix);
                }
                matrix.entries[i * size + j] = value;
            }
        }
        Ok(matrix)
    }

    pub fn from_passage_sets(candidates: &[PassageSet]) -> Self {
        let size = candidates.len();
        let mut entries = vec![0.0; size * size];
        for i in 0..size {
            for j in (i + 1)..size {
                let d = 1.0 - jaccard_similarity(&candidates[i], &candidates[j]);
                entries[i * size + j] = d;
                entries[j * size + i] = d;
            }
        }
        DistanceMatrix { size, entries }
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.size + j]
    }
}

/// How the distance between two clusters is aggregated from member pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    Single,
    Complete,
    #[default]
    Average,
}

impl Linkage {
    fn between(self, matrix: &DistanceMatrix, a: &[usize], b: &[usize]) -> f64 {
        let mut acc: f64 = match self {
            Linkage::Single => f64::INFINITY,
            Linkage::Complete => f64::NEG_INFINITY,
            Linkage::Average => 0.0,
        };
        for &i in a {
            for &j in b {
                let d = matrix.get(i, j);
                acc = match self {
                    Linkage::Single => acc.min(d),
                    Linkage::Complete => acc.max(d),
                    Linkage::Average => acc + d,
                };
            }
        }
        match self {
            Linkage::Average => acc / (a.len() * b.len()) as f64,
            _ => acc,
        }
    }
}

/// Agglomerative clustering of the matrix's candidates into exactly `k`
/// clusters. Each returned cluster lists candidate positions in ascending
/// order; clusters are ordered by their smallest member.
pub fn cluster_matrix(
    matrix: &DistanceMatrix,
    k: usize,
    linkage: Linkage,
) -> Result<Vec<Vec<usize>>, PruneError> {
    let n = matrix.len();
    if k == 0 || k > n {
        return Err(PruneError::InvalidClusterCount { k, candidates: n });
    }
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    while clusters.len() > k {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in (a + 1)..clusters.len() {
                let d = linkage.between(matrix, &clusters[a], &clusters[b]);
                // strict < keeps the earliest pair on ties
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, a, b));
                }
            }
        }
        let (_, a, b) = best.expect("at least two clusters remain");
        let merged = clusters.remove(b);
        clusters[a].extend(merged);
        clusters[a].sort_unstable();
    }
    clusters.sort_by_key(|c| c[0]);
    Ok(clusters)
}

/// Position of the cluster member with the smallest mean distance to the
/// rest of the cluster; ties go to the earliest position.
pub fn medoid(cluster: &[usize], matrix: &DistanceMatrix) -> usize {
    let mut best = cluster[0];
    let mut best_sum = f64::INFINITY;
    for &i in cluster {
        let sum: f64 = cluster.iter().map(|&j| matrix.get(i, j)).sum();
        if sum < best_sum {
            best_sum = sum;
            best = i;
        }
    }
    best
}

/// Similarity-based retention: clusters `candidates` into `k` groups and
/// keeps each group's medoid. The returned ids preserve candidate order, so
/// `k == candidates.len()` returns every candidate unchanged. The candidate
/// list order doubles as the tie-break order everywhere.
pub fn select_representatives(
    candidates: &[PassageSet],
    k: usize,
    linkage: Linkage,
) -> Result<Vec<NodeId>, PruneError> {
    let matrix = DistanceMatrix::from_passage_sets(candidates);
    let clusters = cluster_matrix(&matrix, k, linkage)?;
    let mut picks: Vec<usize> = clusters.iter().map(|c| medoid(c, &matrix)).collect();
    picks.sort_unstable();
    Ok(picks.into_iter().map(|i| candidates[i].node_id).collect())
}

/// Ablation baseline: keeps `k` candidates uniformly at random (without
/// replacement), reported in candidate order.
pub fn random_retain(
    candidates: &[PassageSet],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<NodeId>, PruneError> {
    if k == 0 || k > candidates.len() {
        return Err(PruneError::InvalidClusterCount {
            k,
            candidates: candidates.len(),
        });
    }
    let mut picks: Vec<usize> = sample(rng, candidates.len(), k).into_vec();
    picks.sort_unstable();
    Ok(picks.into_iter().map(|i| candidates[i].node_id).collect())
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PruneError {
    #[error("cannot form {k} clusters from {candidates} candidates")]
    InvalidClusterCount { k: usize, candidates: usize },
    #[error("distance matrix must be square, symmetric, zero-diagonal, and within [0, 1]")]
    MalformedMatrix,
}
