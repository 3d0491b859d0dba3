//! Bipartite association graph between the features of two cameras.
//!
//! The graph is built once (from descriptors through the mutual top-K test,
//! or from a precomputed edge list) and is immutable afterwards. Edges are
//! kept sorted by `(i, j)` so every downstream consumer iterates them in the
//! same order.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RelativePose;

/// Unit-length viewing direction of a feature in its camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bearing(Vector3<f64>);

impl Bearing {
    /// Normalizes `v`; fails on a zero vector.
    pub fn normalize(v: Vector3<f64>) -> Result<Self> {
        let n = v.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::ZeroBearing);
        }
        Ok(Bearing(v / n))
    }

    /// Wraps a vector the caller guarantees to be unit length.
    pub fn from_unit(v: Vector3<f64>) -> Self {
        debug_assert!((v.norm() - 1.0).abs() < 1e-9, "bearing not unit: {}", v.norm());
        Bearing(v)
    }

    pub fn dir(&self) -> &Vector3<f64> {
        &self.0
    }
}

/// Candidate correspondence between left feature `i` and right feature `j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    /// Cosine similarity of the two descriptors.
    pub similarity: f64,
    /// Marginal probability; zero until an assignment is attached.
    #[serde(default)]
    pub prob: f64,
}

impl Edge {
    pub fn new(i: usize, j: usize, similarity: f64) -> Self {
        Edge { i, j, similarity, prob: 0.0 }
    }
}

/// Which camera a feature belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone)]
pub struct AssociationGraph {
    left: Vec<Bearing>,
    right: Vec<Bearing>,
    edges: Vec<Edge>,
    left_adj: Vec<Vec<usize>>,
    right_adj: Vec<Vec<usize>>,
}

impl AssociationGraph {
    /// Builds a graph, validating indices and uniqueness. Edges are sorted by `(i, j)`.
    pub fn new(left: Vec<Bearing>, right: Vec<Bearing>, mut edges: Vec<Edge>) -> Result<Self> {
        for e in &edges {
            if e.i >= left.len() || e.j >= right.len() {
                return Err(Error::EdgeOutOfRange { i: e.i, j: e.j });
            }
            if !(-1.0..=1.0).contains(&e.similarity) {
                return Err(Error::InvalidSimilarity(e.similarity));
            }
        }
        edges.sort_by_key(|e| (e.i, e.j));
        for w in edges.windows(2) {
            if w[0].i == w[1].i && w[0].j == w[1].j {
                return Err(Error::DuplicateEdge { i: w[0].i, j: w[0].j });
            }
        }
        let mut left_adj = vec![Vec::new(); left.len()];
        let mut right_adj = vec![Vec::new(); right.len()];
        for (k, e) in edges.iter().enumerate() {
            left_adj[e.i].push(k);
            right_adj[e.j].push(k);
        }
        Ok(AssociationGraph { left, right, edges, left_adj, right_adj })
    }

    pub fn left(&self) -> &[Bearing] {
        &self.left
    }

    pub fn right(&self) -> &[Bearing] {
        &self.right
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Edge ids incident to left feature `i` (the candidate set of `x_i`).
    pub fn left_neighbors(&self, i: usize) -> &[usize] {
        &self.left_adj[i]
    }

    /// Edge ids incident to right feature `j`.
    pub fn right_neighbors(&self, j: usize) -> &[usize] {
        &self.right_adj[j]
    }

    pub fn max_left_degree(&self) -> usize {
        self.left_adj.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn max_right_degree(&self) -> usize {
        self.right_adj.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn edge_index(&self, i: usize, j: usize) -> Option<usize> {
        self.left_adj
            .get(i)?
            .iter()
            .copied()
            .find(|&k| self.edges[k].j == j)
    }

    /// Copy of this graph with each edge's `prob` set from `probs` (indexed like `edges()`).
    pub fn with_probabilities(&self, probs: &[f64]) -> Self {
        let mut g = self.clone();
        for (e, &p) in g.edges.iter_mut().zip(probs) {
            e.prob = p;
        }
        g
    }

    /// Same features and the subset of edges with ids in `keep`.
    pub fn subgraph(&self, keep: &[usize]) -> Self {
        let edges = keep.iter().map(|&k| self.edges[k]).collect();
        AssociationGraph::new(self.left.clone(), self.right.clone(), edges)
            .expect("subgraph of a valid graph is valid")
    }
}

/// Known-correct correspondences and the true relative pose of a pair.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub pose: RelativePose,
    matches: Vec<(usize, usize)>,
}

impl GroundTruth {
    pub fn new(pose: RelativePose, mut matches: Vec<(usize, usize)>) -> Result<Self> {
        matches.sort_unstable();
        let mut seen_l = BTreeSet::new();
        let mut seen_r = BTreeSet::new();
        for &(i, j) in &matches {
            if !seen_l.insert(i) {
                return Err(Error::InvalidGroundTruth { side: "left", index: i });
            }
            if !seen_r.insert(j) {
                return Err(Error::InvalidGroundTruth { side: "right", index: j });
            }
        }
        Ok(GroundTruth { pose, matches })
    }

    pub fn matches(&self) -> &[(usize, usize)] {
        &self.matches
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.matches.binary_search(&(i, j)).is_ok()
    }
}

fn normalized_rows(desc: &[Vec<f64>], side: &'static str) -> Result<Vec<Vec<f64>>> {
    desc.iter()
        .enumerate()
        .map(|(index, d)| {
            let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::ZeroDescriptor { side, index });
            }
            Ok(d.iter().map(|v| v / n).collect())
        })
        .collect()
}

/// Indices of the `k` largest entries, ties broken toward the lower index.
fn top_k(scores: impl Iterator<Item = f64>, k: usize) -> Vec<usize> {
    let mut idx: Vec<(usize, f64)> = scores.enumerate().collect();
    idx.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    idx.truncate(k);
    idx.into_iter().map(|(i, _)| i).collect()
}

/// Mutual top-K nearest neighbor test on cosine similarity.
///
/// Returns edges `(i, j)` where `j` is among the `k` most similar right
/// descriptors of `i`, `i` is among the `k` most similar left descriptors of
/// `j`, and the similarity is at least `min_sim`. Descriptors are normalized
/// internally so similarity is a dot product.
pub fn build_mknn(
    desc_left: &[Vec<f64>],
    desc_right: &[Vec<f64>],
    k: usize,
    min_sim: f64,
) -> Result<Vec<Edge>> {
    if k == 0 {
        return Err(Error::InvalidConfig("K must be at least 1".into()));
    }
    if desc_left.is_empty() || desc_right.is_empty() {
        return Ok(Vec::new());
    }
    let l = normalized_rows(desc_left, "left")?;
    let r = normalized_rows(desc_right, "right")?;
    if let Some(dim) = l.iter().chain(&r).map(Vec::len).find(|&d| d != l[0].len()) {
        return Err(Error::InvalidConfig(format!(
            "descriptor dimension mismatch: {} vs {}",
            l[0].len(),
            dim
        )));
    }

    let sim: Vec<Vec<f64>> = l
        .iter()
        .map(|a| r.iter().map(|b| a.iter().zip(b).map(|(x, y)| x * y).sum()).collect())
        .collect();

    let right_top: Vec<Vec<usize>> = (0..r.len())
        .map(|j| top_k(sim.iter().map(|row| row[j]), k))
        .collect();

    let mut edges = Vec::new();
    for (i, row) in sim.iter().enumerate() {
        let mut cands = top_k(row.iter().copied(), k);
        cands.sort_unstable();
        for j in cands {
            let s = row[j].clamp(-1.0, 1.0);
            if s >= min_sim && right_top[j].contains(&i) {
                edges.push(Edge::new(i, j, s));
            }
        }
    }
    Ok(edges)
}

/// Keeps at most `cap` edges, dropping the lowest-similarity ones first.
///
/// Among equal similarities the edge with the larger `(i, j)` is dropped.
/// The result is sorted by `(i, j)`.
pub fn cap_edges(mut edges: Vec<Edge>, cap: usize) -> Vec<Edge> {
    if edges.len() > cap {
        edges.sort_by(|a, b| {
            b.similarity
                .total_cmp(&a.similarity)
                .then((a.i, a.j).cmp(&(b.i, b.j)))
        });
        edges.truncate(cap);
    }
    edges.sort_by_key(|e| (e.i, e.j));
    edges
}

/// Vertex-disjoint piece of an association graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    /// Edge ids into the parent graph, ascending.
    pub edges: Vec<usize>,
}

/// Connected components of the edge set, ordered by smallest left index.
///
/// Features without any edge do not form components.
pub fn connected_components(graph: &AssociationGraph) -> Vec<Component> {
    let nl = graph.left().len();
    let mut seen_l = vec![false; nl];
    let mut seen_r = vec![false; graph.right().len()];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();

    for start in 0..nl {
        if seen_l[start] || graph.left_neighbors(start).is_empty() {
            continue;
        }
        let mut comp = Component { left: Vec::new(), right: Vec::new(), edges: Vec::new() };
        seen_l[start] = true;
        queue.push_back((Side::Left, start));
        while let Some((side, v)) = queue.pop_front() {
            match side {
                Side::Left => {
                    comp.left.push(v);
                    for &k in graph.left_neighbors(v) {
                        comp.edges.push(k);
                        let j = graph.edges()[k].j;
                        if !seen_r[j] {
                            seen_r[j] = true;
                            queue.push_back((Side::Right, j));
                        }
                    }
                }
                Side::Right => {
                    comp.right.push(v);
                    for &k in graph.right_neighbors(v) {
                        let i = graph.edges()[k].i;
                        if !seen_l[i] {
                            seen_l[i] = true;
                            queue.push_back((Side::Left, i));
                        }
                    }
                }
            }
        }
        comp.left.sort_unstable();
        comp.right.sort_unstable();
        comp.edges.sort_unstable();
        out.push(comp);
    }
    out
}

/// Fraction of ground-truth-matched features on `side` whose candidate set
/// contains the true partner. `None` when no feature on that side is matched.
pub fn group_precision(graph: &AssociationGraph, gt: &GroundTruth, side: Side) -> Option<f64> {
    let m = gt.matches();
    if m.is_empty() {
        return None;
    }
    let hits = m
        .iter()
        .filter(|&&(i, j)| match side {
            Side::Left => graph
                .left_neighbors(i)
                .iter()
                .any(|&k| graph.edges()[k].j == j),
            Side::Right => graph
                .right_neighbors(j)
                .iter()
                .any(|&k| graph.edges()[k].i == i),
        })
        .count();
    Some(hits as f64 / m.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssociationMetrics {
    pub precision: f64,
    pub recall: f64,
    pub correct: usize,
    /// At least five correct associations, enough for a minimal solver.
    pub success: bool,
}

/// Precision, recall and success flag of an output correspondence set.
pub fn association_metrics(output: &[(usize, usize)], gt: &GroundTruth) -> AssociationMetrics {
    let correct = output.iter().filter(|&&(i, j)| gt.contains(i, j)).count();
    let precision = if output.is_empty() { 0.0 } else { correct as f64 / output.len() as f64 };
    let recall = if gt.matches().is_empty() {
        0.0
    } else {
        correct as f64 / gt.matches().len() as f64
    };
    AssociationMetrics { precision, recall, correct, success: correct >= 5 }
}
