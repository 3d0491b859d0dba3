//! Marginal probability assignment on association edges.
//!
//! Solves
//!
//! ```text
//! min  sum_(i,j) (p_ij - p_ref)^2
//! s.t. 0 <= p_ij <= 1,  sum_j p_ij <= p_x  (each i),  sum_i p_ij <= p_y  (each j)
//! ```
//!
//! with `p_ref = (p_x |S| + p_y |T|) / |E| / 2`. The feasible set is the
//! intersection of a row-capped box and a column-capped box, each of which
//! projects exactly row by row (column by column), so the problem is a
//! Euclidean projection solved with Dykstra's alternating projections. The
//! objective is separable across connected components, which are solved
//! independently.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::association::{connected_components, AssociationGraph, Component};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssignmentConfig {
    pub p_x: f64,
    pub p_y: f64,
    /// Convergence tolerance, relative to `max(p_x, p_y)`.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for AssignmentConfig {
    fn default() -> Self {
        AssignmentConfig { p_x: 0.1, p_y: 0.1, tolerance: 1e-8, max_iterations: 10_000 }
    }
}

impl AssignmentConfig {
    pub fn new(p_x: f64, p_y: f64) -> Result<Self> {
        let c = AssignmentConfig { p_x, p_y, ..Default::default() };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |p: f64| p > 0.0 && p <= 1.0;
        if !ok(self.p_x) || !ok(self.p_y) {
            return Err(Error::InvalidConfig(format!(
                "p_x and p_y must lie in (0, 1], got {} and {}",
                self.p_x, self.p_y
            )));
        }
        if !(self.tolerance > 0.0) || self.max_iterations == 0 {
            return Err(Error::InvalidConfig("tolerance and max_iterations must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityAssignment {
    /// Per-edge probability, indexed like `graph.edges()`.
    pub probs: Vec<f64>,
    /// Total probability assigned to each left feature.
    pub left_totals: Vec<f64>,
    /// Total probability assigned to each right feature.
    pub right_totals: Vec<f64>,
    /// Reference probability `p_ref`.
    pub reference: f64,
    /// Largest per-component Dykstra iteration count.
    pub iterations: usize,
}

impl ProbabilityAssignment {
    /// Objective `sum (p - p_ref)^2`.
    pub fn objective(&self) -> f64 {
        self.probs.iter().map(|p| (p - self.reference).powi(2)).sum()
    }

    /// Largest violation of the box, row and column constraints.
    pub fn max_violation(&self, p_x: f64, p_y: f64) -> f64 {
        let box_v = self
            .probs
            .iter()
            .map(|&p| (-p).max(p - 1.0).max(0.0))
            .fold(0.0, f64::max);
        let row_v = self.left_totals.iter().map(|&s| s - p_x).fold(0.0, f64::max);
        let col_v = self.right_totals.iter().map(|&s| s - p_y).fold(0.0, f64::max);
        box_v.max(row_v).max(col_v)
    }
}

/// `p_ref = (p_x |S| + p_y |T|) / |E| / 2`.
pub fn reference_probability(
    n_left: usize,
    n_right: usize,
    n_edges: usize,
    p_x: f64,
    p_y: f64,
) -> Result<f64> {
    if n_edges == 0 {
        return Err(Error::EmptyGraph);
    }
    Ok((p_x * n_left as f64 + p_y * n_right as f64) / n_edges as f64 / 2.0)
}

/// Euclidean projection of `z` onto `{0 <= p <= 1, sum p <= cap}`, in place.
pub fn project_capped_box(z: &mut [f64], cap: f64) {
    let clamped: f64 = z.iter().map(|v| v.clamp(0.0, 1.0)).sum();
    if clamped <= cap {
        z.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        return;
    }
    // Find tau > 0 with sum clamp(z - tau, 0, 1) = cap. The sum is
    // piecewise linear and nonincreasing in tau, with kinks at z_k and z_k - 1.
    let g = |tau: f64| z.iter().map(|v| (v - tau).clamp(0.0, 1.0)).sum::<f64>();
    let mut kinks: Vec<f64> = z
        .iter()
        .flat_map(|&v| [v, v - 1.0])
        .filter(|&t| t > 0.0)
        .collect();
    kinks.push(0.0);
    kinks.sort_by(f64::total_cmp);
    kinks.dedup();
    let mut lo = 0.0;
    let mut g_lo = g(lo);
    let mut tau = *kinks.last().unwrap();
    for &k in &kinks[1..] {
        let g_k = g(k);
        if g_k <= cap {
            // Linear on [lo, k].
            tau = if g_lo == g_k { k } else { lo + (g_lo - cap) * (k - lo) / (g_lo - g_k) };
            break;
        }
        lo = k;
        g_lo = g_k;
    }
    z.iter_mut().for_each(|v| *v = (*v - tau).clamp(0.0, 1.0));
}

struct LocalProblem {
    /// Local edge ids grouped by row, then by column.
    rows: Vec<Vec<usize>>,
    cols: Vec<Vec<usize>>,
    n: usize,
}

impl LocalProblem {
    fn new(graph: &AssociationGraph, comp: &Component) -> Self {
        let local = |k: usize| comp.edges.binary_search(&k).unwrap();
        let rows = comp
            .left
            .iter()
            .map(|&i| graph.left_neighbors(i).iter().map(|&k| local(k)).collect())
            .collect();
        let cols = comp
            .right
            .iter()
            .map(|&j| graph.right_neighbors(j).iter().map(|&k| local(k)).collect())
            .collect();
        LocalProblem { rows, cols, n: comp.edges.len() }
    }

    fn project(groups: &[Vec<usize>], cap: f64, x: &mut [f64], buf: &mut Vec<f64>) {
        for g in groups {
            buf.clear();
            buf.extend(g.iter().map(|&k| x[k]));
            project_capped_box(buf, cap);
            for (&k, &v) in g.iter().zip(buf.iter()) {
                x[k] = v;
            }
        }
    }

    fn max_group_excess(groups: &[Vec<usize>], cap: f64, x: &[f64]) -> f64 {
        groups
            .iter()
            .map(|g| g.iter().map(|&k| x[k]).sum::<f64>() - cap)
            .fold(0.0, f64::max)
    }

    /// Dykstra iterations from `x = p_ref`. Returns the solution and the iteration count.
    fn solve(&self, reference: f64, cfg: &AssignmentConfig) -> Result<(Vec<f64>, usize)> {
        let tol = cfg.tolerance * cfg.p_x.max(cfg.p_y);
        let mut x = vec![reference; self.n];
        let mut inc_row = vec![0.0; self.n];
        let mut inc_col = vec![0.0; self.n];
        let mut y = vec![0.0; self.n];
        let mut buf = Vec::new();
        let mut violation = f64::INFINITY;
        for it in 1..=cfg.max_iterations {
            for k in 0..self.n {
                y[k] = x[k] + inc_row[k];
            }
            Self::project(&self.rows, cfg.p_x, &mut y, &mut buf);
            for k in 0..self.n {
                inc_row[k] += x[k] - y[k];
            }
            let mut next: Vec<f64> = (0..self.n).map(|k| y[k] + inc_col[k]).collect();
            Self::project(&self.cols, cfg.p_y, &mut next, &mut buf);
            let mut change: f64 = 0.0;
            for k in 0..self.n {
                inc_col[k] += y[k] - next[k];
                change = change.max((next[k] - x[k]).abs());
            }
            x = next;
            violation = Self::max_group_excess(&self.rows, cfg.p_x, &x);
            if violation <= tol && change <= tol {
                return Ok((x, it));
            }
        }
        Err(Error::NotConverged { iterations: cfg.max_iterations, violation })
    }
}

/// Solves the uniformity-regularized assignment, one connected component at a time.
pub fn assign_marginals(
    graph: &AssociationGraph,
    cfg: &AssignmentConfig,
) -> Result<ProbabilityAssignment> {
    cfg.validate()?;
    let reference = reference_probability(
        graph.left().len(),
        graph.right().len(),
        graph.edges().len(),
        cfg.p_x,
        cfg.p_y,
    )?;
    let comps = connected_components(graph);
    let solved: Vec<Result<(Vec<f64>, usize)>> = comps
        .par_iter()
        .map(|c| LocalProblem::new(graph, c).solve(reference, cfg))
        .collect();

    let mut probs = vec![0.0; graph.edges().len()];
    let mut iterations = 0;
    for (comp, res) in comps.iter().zip(solved) {
        let (x, it) = res?;
        iterations = iterations.max(it);
        for (&k, v) in comp.edges.iter().zip(x) {
            probs[k] = v;
        }
    }
    Ok(finish(graph, probs, reference, iterations))
}

/// Builds an assignment record (with vertex totals) from per-edge probabilities.
pub fn finish(
    graph: &AssociationGraph,
    probs: Vec<f64>,
    reference: f64,
    iterations: usize,
) -> ProbabilityAssignment {
    let mut left_totals = vec![0.0; graph.left().len()];
    let mut right_totals = vec![0.0; graph.right().len()];
    for (e, &p) in graph.edges().iter().zip(&probs) {
        left_totals[e.i] += p;
        right_totals[e.j] += p;
    }
    ProbabilityAssignment { probs, left_totals, right_totals, reference, iterations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::association::{Bearing, Edge};
    use nalgebra::Vector3;

    fn graph(nl: usize, nr: usize, pairs: &[(usize, usize)]) -> AssociationGraph {
        let b = |n| (0..n).map(|_| Bearing::from_unit(Vector3::z())).collect();
        let edges = pairs.iter().map(|&(i, j)| Edge::new(i, j, 0.9)).collect();
        AssociationGraph::new(b(nl), b(nr), edges).unwrap()
    }

    #[test]
    fn reference_examples() {
        assert_eq!(reference_probability(1, 1, 1, 0.5, 0.5).unwrap(), 0.5);
        assert!((reference_probability(1, 3, 3, 0.3, 0.3).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(reference_probability(4, 4, 5, 0.0, 0.0).unwrap(), 0.0);
        assert_eq!(reference_probability(1, 1, 0, 0.5, 0.5), Err(Error::EmptyGraph));
    }

    #[test]
    fn capped_projection() {
        let mut z = vec![0.5, 0.2, -0.1];
        project_capped_box(&mut z, 1.0);
        assert_eq!(z, vec![0.5, 0.2, 0.0]);

        let mut z = vec![0.2, 0.2, 0.2];
        project_capped_box(&mut z, 0.3);
        for v in &z {
            assert!((v - 0.1).abs() < 1e-15);
        }

        let mut z = vec![3.0, 0.5];
        project_capped_box(&mut z, 1.2);
        assert!((z[0] - 1.0).abs() < 1e-15 && (z[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn single_edge_interior() {
        let g = graph(1, 1, &[(0, 0)]);
        let a = assign_marginals(&g, &AssignmentConfig::new(0.5, 0.5).unwrap()).unwrap();
        assert!((a.probs[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn star_splits_row_cap() {
        let g = graph(1, 3, &[(0, 0), (0, 1), (0, 2)]);
        let a = assign_marginals(&g, &AssignmentConfig::new(0.3, 0.3).unwrap()).unwrap();
        assert!((a.reference - 0.2).abs() < 1e-15);
        for p in &a.probs {
            assert!((p - 0.1).abs() < 1e-9, "{p}");
        }
        assert!((a.left_totals[0] - 0.3).abs() < 1e-9);
    }

    #[test]
    fn slack_constraints_keep_reference() {
        // p_ref = (3 + 3) / 6 / 2 = 0.5 <= 1 / max degree (2).
        let g = graph(3, 3, &[(0, 0), (0, 1), (1, 1), (1, 2), (2, 2), (2, 0)]);
        let a = assign_marginals(&g, &AssignmentConfig::new(1.0, 1.0).unwrap()).unwrap();
        for p in &a.probs {
            assert!((p - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(AssignmentConfig::new(0.0, 0.5).is_err());
        assert!(AssignmentConfig::new(0.5, 1.5).is_err());
        let g = graph(1, 1, &[]);
        assert_eq!(
            assign_marginals(&g, &AssignmentConfig::default()).unwrap_err(),
            Error::EmptyGraph
        );
    }

    #[test]
    fn reports_non_convergence() {
        let g = graph(2, 2, &[(0, 0), (0, 1), (1, 0), (1, 1)]);
        let cfg = AssignmentConfig { p_x: 0.3, p_y: 0.2, tolerance: 1e-12, max_iterations: 1 };
        assert!(matches!(
            assign_marginals(&g, &cfg),
            Err(Error::NotConverged { iterations: 1, .. })
        ));
    }
}
