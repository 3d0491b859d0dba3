//! Hypothesis scoring: consensus (CM), matching cardinality (MCM) and
//! harmonic consensus (HCM), plus exact likelihood enumeration for small
//! graphs.

use serde::{Deserialize, Serialize};

use crate::association::AssociationGraph;
use crate::error::{Error, Result};
use crate::geometry::{angular_residual, RelativePose, RESIDUAL_TOL};
use crate::marginal::ProbabilityAssignment;

/// Default edge cap for exhaustive matching enumeration.
pub const ENUMERATION_CAP: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mechanism {
    #[serde(rename = "cm")]
    Cm,
    #[serde(rename = "mcm")]
    Mcm,
    #[serde(rename = "hcm")]
    Hcm,
    /// MCM search, ties resolved by HCM.
    #[serde(rename = "mcm-hcm")]
    McmThenHcm,
}

impl Mechanism {
    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Cm => "cm",
            Mechanism::Mcm => "mcm",
            Mechanism::Hcm => "hcm",
            Mechanism::McmThenHcm => "mcm-hcm",
        }
    }

    pub fn needs_assignment(self) -> bool {
        matches!(self, Mechanism::Hcm | Mechanism::McmThenHcm)
    }
}

impl std::str::FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cm" => Ok(Mechanism::Cm),
            "mcm" => Ok(Mechanism::Mcm),
            "hcm" => Ok(Mechanism::Hcm),
            "mcm-hcm" | "mcm_hcm" | "mcm->hcm" => Ok(Mechanism::McmThenHcm),
            other => Err(Error::InvalidConfig(format!("unknown mechanism `{other}`"))),
        }
    }
}

impl std::fmt::Display for Mechanism {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// `C = p / (1 - p) / delta`.
pub fn likelihood_constant(p: f64, delta: f64) -> f64 {
    p / (1.0 - p) / delta
}

/// Inlier threshold, outlier range and candidate-set priors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanismConfig {
    /// Inlier threshold, radians.
    pub epsilon: f64,
    /// Range of residuals of a spurious association, radians.
    pub outlier_range: f64,
    pub p_x: f64,
    pub p_y: f64,
}

impl MechanismConfig {
    pub fn new(epsilon: f64, outlier_range: f64, p_x: f64, p_y: f64) -> Result<Self> {
        let c = MechanismConfig { epsilon, outlier_range, p_x, p_y };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < self.outlier_range) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < epsilon < outlier_range, got {} and {}",
                self.epsilon, self.outlier_range
            )));
        }
        let open = |p: f64| p > 0.0 && p < 1.0;
        if !open(self.p_x) || !open(self.p_y) {
            return Err(Error::InvalidConfig(format!(
                "p_x and p_y must lie in (0, 1), got {} and {}",
                self.p_x, self.p_y
            )));
        }
        Ok(())
    }

    pub fn delta(&self) -> f64 {
        self.epsilon / self.outlier_range
    }

    pub fn c_x(&self) -> f64 {
        likelihood_constant(self.p_x, self.delta())
    }

    pub fn c_y(&self) -> f64 {
        likelihood_constant(self.p_y, self.delta())
    }
}

/// Edges whose residual under a hypothesis is below the threshold.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InlierGraph {
    /// Edge ids into the parent graph, ascending.
    pub edges: Vec<usize>,
    pub left: Vec<usize>,
    pub right: Vec<usize>,
}

impl InlierGraph {
    /// Builds the induced vertex sets from ascending edge ids.
    pub fn from_edges(graph: &AssociationGraph, mut edges: Vec<usize>) -> Self {
        edges.sort_unstable();
        edges.dedup();
        let mut left: Vec<usize> = edges.iter().map(|&k| graph.edges()[k].i).collect();
        let mut right: Vec<usize> = edges.iter().map(|&k| graph.edges()[k].j).collect();
        left.sort_unstable();
        left.dedup();
        right.sort_unstable();
        right.dedup();
        InlierGraph { edges, left, right }
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    fn pairs(&self, graph: &AssociationGraph) -> Vec<(usize, usize)> {
        self.edges.iter().map(|&k| (graph.edges()[k].i, graph.edges()[k].j)).collect()
    }
}

/// Edges with residual strictly below `epsilon` under `pose`.
pub fn identify_inliers(graph: &AssociationGraph, pose: &RelativePose, epsilon: f64) -> InlierGraph {
    let edges = graph
        .edges()
        .iter()
        .enumerate()
        .filter(|(_, e)| {
            angular_residual(pose, &graph.left()[e.i], &graph.right()[e.j], RESIDUAL_TOL) < epsilon
        })
        .map(|(k, _)| k)
        .collect();
    InlierGraph::from_edges(graph, edges)
}

pub fn cm_score(inliers: &InlierGraph) -> usize {
    inliers.len()
}

/// Reusable Hopcroft-Karp solver over vertices `0..n_left` and `0..n_right`.
///
/// Adjacency follows the order in which edges are supplied, so the witness
/// matching is a deterministic function of the input order.
#[derive(Debug, Clone, Default)]
pub struct HopcroftKarp {
    start: Vec<usize>,
    adj: Vec<(usize, usize)>,
    match_left: Vec<usize>,
    match_right: Vec<usize>,
    dist: Vec<u32>,
    queue: Vec<usize>,
    cursor: Vec<usize>,
}

const FREE: usize = usize::MAX;
const INF: u32 = u32::MAX;

impl HopcroftKarp {
    pub fn new() -> Self {
        Self::default()
    }

    /// Maximum matching size of the edges `(left, right)`; edge positions in
    /// `edges` serve as edge ids for [`HopcroftKarp::matched_edges`].
    pub fn solve(&mut self, n_left: usize, n_right: usize, edges: &[(usize, usize)]) -> usize {
        self.start.clear();
        self.start.resize(n_left + 1, 0);
        for &(i, _) in edges {
            self.start[i + 1] += 1;
        }
        for i in 0..n_left {
            self.start[i + 1] += self.start[i];
        }
        self.adj.clear();
        self.adj.resize(edges.len(), (0, 0));
        self.cursor.clear();
        self.cursor.extend_from_slice(&self.start[..n_left]);
        for (k, &(i, j)) in edges.iter().enumerate() {
            self.adj[self.cursor[i]] = (j, k);
            self.cursor[i] += 1;
        }
        self.match_left.clear();
        self.match_left.resize(n_left, FREE);
        self.match_right.clear();
        self.match_right.resize(n_right, FREE);
        self.dist.clear();
        self.dist.resize(n_left, INF);

        let mut size = 0;
        while self.bfs() {
            self.cursor.clear();
            self.cursor.extend_from_slice(&self.start[..n_left]);
            for u in 0..n_left {
                if self.match_left[u] == FREE && self.dfs(u) {
                    size += 1;
                }
            }
        }
        size
    }

    fn bfs(&mut self) -> bool {
        self.queue.clear();
        for (u, d) in self.dist.iter_mut().enumerate() {
            if self.match_left[u] == FREE {
                *d = 0;
                self.queue.push(u);
            } else {
                *d = INF;
            }
        }
        let mut found = false;
        let mut head = 0;
        while head < self.queue.len() {
            let u = self.queue[head];
            head += 1;
            for &(v, _) in &self.adj[self.start[u]..self.start[u + 1]] {
                let w = self.match_right[v];
                if w == FREE {
                    found = true;
                } else if self.dist[w] == INF {
                    self.dist[w] = self.dist[u] + 1;
                    self.queue.push(w);
                }
            }
        }
        found
    }

    fn dfs(&mut self, u: usize) -> bool {
        while self.cursor[u] < self.start[u + 1] {
            let (v, _) = self.adj[self.cursor[u]];
            self.cursor[u] += 1;
            let w = self.match_right[v];
            let ok = if w == FREE {
                true
            } else {
                self.dist[w] == self.dist[u] + 1 && self.dfs(w)
            };
            if ok {
                self.match_left[u] = v;
                self.match_right[v] = u;
                return true;
            }
        }
        self.dist[u] = INF;
        false
    }

    /// Positions (in the last `solve` input) of the matched edges, ascending.
    pub fn matched_edges(&self) -> Vec<usize> {
        let mut out: Vec<usize> = (0..self.match_left.len())
            .filter(|&u| self.match_left[u] != FREE)
            .map(|u| {
                let v = self.match_left[u];
                self.adj[self.start[u]..self.start[u + 1]]
                    .iter()
                    .find(|&&(w, _)| w == v)
                    .map(|&(_, k)| k)
                    .expect("matched pair is an edge")
            })
            .collect();
        out.sort_unstable();
        out
    }
}

/// Maximum-cardinality matching of the inlier graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchingResult {
    pub cardinality: usize,
    /// Witness matching as parent-graph edge ids, ascending.
    pub edges: Vec<usize>,
}

pub fn max_matching_cardinality(graph: &AssociationGraph, inliers: &InlierGraph) -> MatchingResult {
    let pairs = inliers.pairs(graph);
    let mut hk = HopcroftKarp::new();
    let cardinality = hk.solve(graph.left().len(), graph.right().len(), &pairs);
    let edges = hk.matched_edges().into_iter().map(|p| inliers.edges[p]).collect();
    MatchingResult { cardinality, edges }
}

/// Per-vertex fraction of assigned probability carried by inlier edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HcmWeights {
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

pub fn hcm_weights(
    graph: &AssociationGraph,
    inliers: &InlierGraph,
    assignment: &ProbabilityAssignment,
) -> Result<HcmWeights> {
    for (index, &t) in assignment.left_totals.iter().enumerate() {
        if !graph.left_neighbors(index).is_empty() && !(t > 0.0) {
            return Err(Error::DegenerateAssignment { side: "left", index });
        }
    }
    for (index, &t) in assignment.right_totals.iter().enumerate() {
        if !graph.right_neighbors(index).is_empty() && !(t > 0.0) {
            return Err(Error::DegenerateAssignment { side: "right", index });
        }
    }
    let mut left = vec![0.0; graph.left().len()];
    let mut right = vec![0.0; graph.right().len()];
    for &k in &inliers.edges {
        let e = &graph.edges()[k];
        let p = assignment.probs[k];
        left[e.i] += p / assignment.left_totals[e.i];
        right[e.j] += p / assignment.right_totals[e.j];
    }
    left.iter_mut().chain(right.iter_mut()).for_each(|w| *w = w.min(1.0));
    Ok(HcmWeights { left, right })
}

/// `sum_i ln(1 + C_x w_i) + sum_j ln(1 + C_y w_j)`.
pub fn hcm_score(weights: &HcmWeights, cfg: &MechanismConfig) -> f64 {
    let (cx, cy) = (cfg.c_x(), cfg.c_y());
    let l: f64 = weights.left.iter().map(|&w| (cx * w).ln_1p()).sum();
    let r: f64 = weights.right.iter().map(|&w| (cy * w).ln_1p()).sum();
    l + r
}

/// Score of one hypothesis under one mechanism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisScore {
    pub mechanism: Mechanism,
    pub score: f64,
    pub inliers: Vec<usize>,
    /// `|M*|` for the matching-based mechanisms.
    pub matching_cardinality: Option<usize>,
    pub weights: Option<HcmWeights>,
}

/// Standalone scorer: identifies inliers at `pose` and evaluates the mechanism.
///
/// For [`Mechanism::McmThenHcm`] the score is `|M*|` and the HCM weights are
/// reported alongside.
pub fn score_hypothesis(
    graph: &AssociationGraph,
    assignment: Option<&ProbabilityAssignment>,
    pose: &RelativePose,
    cfg: &MechanismConfig,
    mechanism: Mechanism,
) -> Result<HypothesisScore> {
    let inliers = identify_inliers(graph, pose, cfg.epsilon);
    score_inliers(graph, assignment, &inliers, cfg, mechanism)
}

pub fn score_inliers(
    graph: &AssociationGraph,
    assignment: Option<&ProbabilityAssignment>,
    inliers: &InlierGraph,
    cfg: &MechanismConfig,
    mechanism: Mechanism,
) -> Result<HypothesisScore> {
    let weights = if mechanism.needs_assignment() {
        let a = assignment.ok_or(Error::MissingAssignment(mechanism.name()))?;
        Some(hcm_weights(graph, inliers, a)?)
    } else {
        None
    };
    let matching_cardinality = match mechanism {
        Mechanism::Mcm | Mechanism::McmThenHcm => {
            Some(max_matching_cardinality(graph, inliers).cardinality)
        }
        _ => None,
    };
    let score = match mechanism {
        Mechanism::Cm => cm_score(inliers) as f64,
        Mechanism::Mcm | Mechanism::McmThenHcm => matching_cardinality.unwrap() as f64,
        Mechanism::Hcm => hcm_score(weights.as_ref().unwrap(), cfg),
    };
    Ok(HypothesisScore {
        mechanism,
        score,
        inliers: inliers.edges.clone(),
        matching_cardinality,
        weights,
    })
}

/// Every matching (including the empty one) of the edge list, as sets of
/// positions into `edges`, each ascending.
pub fn enumerate_matchings(edges: &[(usize, usize)], cap: usize) -> Result<Vec<Vec<usize>>> {
    if edges.len() > cap {
        return Err(Error::EnumerationCap { edges: edges.len(), cap });
    }
    let mut out = Vec::new();
    let mut current = Vec::new();
    let mut used_l = Vec::new();
    let mut used_r = Vec::new();
    fn rec(
        edges: &[(usize, usize)],
        k: usize,
        current: &mut Vec<usize>,
        used_l: &mut Vec<usize>,
        used_r: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if k == edges.len() {
            out.push(current.clone());
            return;
        }
        rec(edges, k + 1, current, used_l, used_r, out);
        let (i, j) = edges[k];
        if !used_l.contains(&i) && !used_r.contains(&j) {
            current.push(k);
            used_l.push(i);
            used_r.push(j);
            rec(edges, k + 1, current, used_l, used_r, out);
            current.pop();
            used_l.pop();
            used_r.pop();
        }
    }
    rec(edges, 0, &mut current, &mut used_l, &mut used_r, &mut out);
    Ok(out)
}

/// Number of matchings of each size: `counts[m]` matchings have `m` edges.
pub fn matching_size_counts(edges: &[(usize, usize)], cap: usize) -> Result<Vec<u64>> {
    let all = enumerate_matchings(edges, cap)?;
    let mut counts = vec![0u64; all.iter().map(Vec::len).max().unwrap_or(0) + 1];
    for m in &all {
        counts[m.len()] += 1;
    }
    Ok(counts)
}

fn graph_pairs(graph: &AssociationGraph) -> Vec<(usize, usize)> {
    graph.edges().iter().map(|e| (e.i, e.j)).collect()
}

/// Likelihood of the data given one configuration (a matching of the
/// association graph): each edge of the configuration contributes `1/eps`
/// when it is an inlier and zero otherwise; every other edge is spurious with
/// density `delta/eps`.
pub fn conditional_likelihood(
    graph: &AssociationGraph,
    inliers: &InlierGraph,
    configuration: &[usize],
    cfg: &MechanismConfig,
) -> f64 {
    if configuration.iter().any(|k| inliers.edges.binary_search(k).is_err()) {
        return 0.0;
    }
    let m = configuration.len() as i32;
    let rest = graph.edges().len() as i32 - m;
    (1.0 / cfg.epsilon).powi(m) * (cfg.delta() / cfg.epsilon).powi(rest)
}

/// Marginal likelihood under a uniform prior over all matchings of the
/// association graph:
/// `p_tau (eps/delta)^(-|E|) sum_{M in matchings(inliers)} (1/delta)^|M|`.
pub fn exact_likelihood(
    graph: &AssociationGraph,
    inliers: &InlierGraph,
    cfg: &MechanismConfig,
    cap: usize,
) -> Result<f64> {
    let total: u64 = matching_size_counts(&graph_pairs(graph), cap)?.iter().sum();
    let counts = matching_size_counts(&inliers.pairs(graph), cap)?;
    let inv_delta = 1.0 / cfg.delta();
    let sum: f64 = counts
        .iter()
        .enumerate()
        .map(|(m, &c)| c as f64 * inv_delta.powi(m as i32))
        .sum();
    Ok(sum / total as f64 * cfg.outlier_range.powi(-(graph.edges().len() as i32)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproxLogLikelihood {
    /// `ln N* + |M*| ln(1/delta)`, or only the second term when `N*` is unavailable.
    pub value: f64,
    pub max_cardinality: usize,
    /// Number of maximum-cardinality matchings; `None` past the enumeration cap.
    pub max_count: Option<u64>,
}

/// Leading-order log-likelihood of a hypothesis.
pub fn approx_log_likelihood(
    graph: &AssociationGraph,
    inliers: &InlierGraph,
    cfg: &MechanismConfig,
    cap: usize,
) -> ApproxLogLikelihood {
    let max_cardinality = max_matching_cardinality(graph, inliers).cardinality;
    let max_count = matching_size_counts(&inliers.pairs(graph), cap)
        .ok()
        .map(|c| c[max_cardinality]);
    let lead = max_cardinality as f64 * (1.0 / cfg.delta()).ln();
    let value = match max_count {
        Some(n) => (n as f64).ln() + lead,
        None => lead,
    };
    ApproxLogLikelihood { value, max_cardinality, max_count }
}
