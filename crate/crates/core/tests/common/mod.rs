//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use std::f64::consts::{PI, TAU};

use hcm_core::geometry::{angular_residual, params_to_pose, PoseParams, RESIDUAL_TOL};
use hcm_core::{
    AssociationGraph, Bearing, Edge, Mechanism, MechanismConfig, ProbabilityAssignment, RelativePose,
    SearchGrid,
};
use nalgebra::{DMatrix, DVector, Vector3};
use rand::Rng;

/// Graph with all bearings on +z; for purely combinatorial tests.
pub fn flat_graph(nl: usize, nr: usize, pairs: &[(usize, usize)]) -> AssociationGraph {
    let b = |n| (0..n).map(|_| Bearing::from_unit(Vector3::z())).collect();
    let edges = pairs.iter().map(|&(i, j)| Edge::new(i, j, 0.9)).collect();
    AssociationGraph::new(b(nl), b(nr), edges).unwrap()
}

/// Distinct random pairs on `nl x nr` vertices, at most `max_edges` of them.
pub fn random_pairs(rng: &mut impl Rng, nl: usize, nr: usize, max_edges: usize) -> Vec<(usize, usize)> {
    let m = rng.random_range(1..=max_edges.min(nl * nr));
    let ids = rand::seq::index::sample(rng, nl * nr, m).into_vec();
    ids.into_iter().map(|k| (k / nr, k % nr)).collect()
}

// ---------------------------------------------------------------- matchings

/// Maximum matching size by trying every subset of edges (include / skip).
pub fn brute_max_matching(pairs: &[(usize, usize)]) -> usize {
    fn rec(pairs: &[(usize, usize)], k: usize, used_l: u64, used_r: u64) -> usize {
        if k == pairs.len() {
            return 0;
        }
        let skip = rec(pairs, k + 1, used_l, used_r);
        let (i, j) = pairs[k];
        if used_l >> i & 1 == 0 && used_r >> j & 1 == 0 {
            skip.max(1 + rec(pairs, k + 1, used_l | 1 << i, used_r | 1 << j))
        } else {
            skip
        }
    }
    assert!(pairs.iter().all(|&(i, j)| i < 64 && j < 64));
    rec(pairs, 0, 0, 0)
}

/// Maximum matching size with simple augmenting paths (Kuhn).
pub fn kuhn(nl: usize, nr: usize, pairs: &[(usize, usize)]) -> usize {
    let mut adj = vec![Vec::new(); nl];
    for &(i, j) in pairs {
        adj[i].push(j);
    }
    let mut owner = vec![usize::MAX; nr];
    fn augment(i: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [usize]) -> bool {
        for &j in &adj[i] {
            if seen[j] {
                continue;
            }
            seen[j] = true;
            if owner[j] == usize::MAX || augment(owner[j], adj, seen, owner) {
                owner[j] = i;
                return true;
            }
        }
        false
    }
    (0..nl).filter(|&i| augment(i, &adj, &mut vec![false; nr], &mut owner)).count()
}

/// Number of matchings of each size, by enumeration.
pub fn matching_counts(pairs: &[(usize, usize)]) -> Vec<u64> {
    let mut counts = vec![0u64; pairs.len() + 1];
    fn rec(pairs: &[(usize, usize)], k: usize, size: usize, ul: u64, ur: u64, counts: &mut [u64]) {
        if k == pairs.len() {
            counts[size] += 1;
            return;
        }
        rec(pairs, k + 1, size, ul, ur, counts);
        let (i, j) = pairs[k];
        if ul >> i & 1 == 0 && ur >> j & 1 == 0 {
            rec(pairs, k + 1, size + 1, ul | 1 << i, ur | 1 << j, counts);
        }
    }
    rec(pairs, 0, 0, 0, 0, &mut counts);
    while counts.len() > 1 && *counts.last().unwrap() == 0 {
        counts.pop();
    }
    counts
}

// ---------------------------------------------------------------- components

pub struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    pub fn find(&mut self, mut a: usize) -> usize {
        while self.parent[a] != a {
            self.parent[a] = self.parent[self.parent[a]];
            a = self.parent[a];
        }
        a
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        self.parent[ra] = rb;
    }
}

// ---------------------------------------------------------------- QP

/// Primal active-set solution of
/// `min sum (p - r)^2  s.t.  0 <= p <= 1, row sums <= p_x, column sums <= p_y`.
pub fn qp_active_set(graph: &AssociationGraph, reference: f64, p_x: f64, p_y: f64) -> Vec<f64> {
    let n = graph.edges().len();
    // Constraints a . p <= b.
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for k in 0..n {
        let mut a = vec![0.0; n];
        a[k] = -1.0;
        rows.push((a.clone(), 0.0));
        a[k] = 1.0;
        rows.push((a, 1.0));
    }
    for i in 0..graph.left().len() {
        let a: Vec<f64> = graph.edges().iter().map(|e| (e.i == i) as u8 as f64).collect();
        if a.iter().any(|&v| v > 0.0) {
            rows.push((a, p_x));
        }
    }
    for j in 0..graph.right().len() {
        let a: Vec<f64> = graph.edges().iter().map(|e| (e.j == j) as u8 as f64).collect();
        if a.iter().any(|&v| v > 0.0) {
            rows.push((a, p_y));
        }
    }
    let dot = |a: &[f64], x: &[f64]| a.iter().zip(x).map(|(u, v)| u * v).sum::<f64>();

    // p = 0 is feasible with every lower bound active.
    let mut x = vec![0.0; n];
    let mut working: Vec<usize> = (0..n).map(|k| 2 * k).collect();
    for _ in 0..10_000 {
        let w = working.len();
        let mut kkt = DMatrix::<f64>::zeros(n + w, n + w);
        let mut rhs = DVector::<f64>::zeros(n + w);
        for k in 0..n {
            kkt[(k, k)] = 2.0;
            rhs[k] = -2.0 * (x[k] - reference);
        }
        for (c, &r) in working.iter().enumerate() {
            for k in 0..n {
                kkt[(n + c, k)] = rows[r].0[k];
                kkt[(k, n + c)] = rows[r].0[k];
            }
        }
        let sol = kkt.lu().solve(&rhs).expect("working set is linearly independent");
        let d: Vec<f64> = (0..n).map(|k| sol[k]).collect();
        if d.iter().all(|v| v.abs() < 1e-13) {
            // Multipliers of `a . p <= b` must be nonnegative.
            let (c, lambda) = (0..w)
                .map(|c| (c, sol[n + c]))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap_or((0, 0.0));
            if lambda >= -1e-12 {
                return x;
            }
            working.remove(c);
            continue;
        }
        let mut step = 1.0;
        let mut blocking = None;
        for (r, (a, b)) in rows.iter().enumerate() {
            if working.contains(&r) {
                continue;
            }
            let ad = dot(a, &d);
            if ad > 1e-15 {
                let s = (b - dot(a, &x)) / ad;
                if s < step {
                    step = s.max(0.0);
                    blocking = Some(r);
                }
            }
        }
        for k in 0..n {
            x[k] += step * d[k];
        }
        if let Some(r) = blocking {
            working.push(r);
        }
    }
    panic!("active-set oracle did not terminate");
}

// ---------------------------------------------------------------- geometry

fn angle(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// `min_p max(angle(x, p), angle(ry, p - t))` for camera 2 at `t` seeing `ry`
/// (camera-1 frame), computed directly from the cone geometry.
///
/// A scene point's directions from both centers lie on one half-plane bounded
/// by the baseline; measured from `t`, the direction seen from camera 1 is
/// never further from the baseline than the one seen from camera 2. For each
/// half-plane the best pair is found in closed form. Turning the half-plane
/// by `d` moves each of its points by at most `d`, so the per-half-plane value
/// is 1-Lipschitz in the angle and can be minimized globally.
pub fn residual_oracle(x: &Vector3<f64>, ry: &Vector3<f64>, t: &Vector3<f64>) -> f64 {
    let w = t.normalize();
    let helper = if w.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let u0 = w.cross(&helper).normalize();
    let u1 = w.cross(&u0);
    let half_plane = |psi: f64| u0 * psi.cos() + u1 * psi.sin();
    // Polar angle of the point of half-plane `u` closest to `v`.
    let closest = |v: &Vector3<f64>, u: &Vector3<f64>| {
        let th = v.dot(u).atan2(v.dot(&w));
        if th >= 0.0 {
            th
        } else if v.dot(&w) >= 0.0 {
            0.0
        } else {
            PI
        }
    };
    let meridian_dist = |v: &Vector3<f64>, psi: f64| {
        let u = half_plane(psi);
        let th = closest(v, &u);
        angle(v, &(w * th.cos() + u * th.sin()))
    };
    let h = |psi: f64| {
        let u = half_plane(psi);
        let m = |theta: f64| w * theta.cos() + u * theta.sin();
        let (ta, tb) = (closest(x, &u), closest(ry, &u));
        if ta <= tb {
            return angle(x, &m(ta)).max(angle(ry, &m(tb)));
        }
        // Both on one direction between tb and ta.
        let f = |th: f64| angle(x, &m(th)).max(angle(ry, &m(th)));
        let dv = x - ry;
        let root = (-dv.dot(&w)).atan2(dv.dot(&u));
        let mut best = f(ta).min(f(tb));
        for r in [root, root + PI, root - PI] {
            if tb <= r && r <= ta {
                best = best.min(f(r));
            }
        }
        best
    };
    // The value is never below either bearing's distance to the half-plane,
    // which grows with the angular offset from the bearing's own azimuth.
    let azimuth = |v: &Vector3<f64>| v.dot(&u1).atan2(v.dot(&u0));
    let (psi_a, psi_b) = (azimuth(x), azimuth(ry));
    let floor = |c: f64, half: f64| {
        let nearest = |target: f64| {
            let off = (target - c + PI).rem_euclid(TAU) - PI;
            c + off.clamp(-half, half)
        };
        meridian_dist(x, nearest(psi_a)).max(meridian_dist(ry, nearest(psi_b)))
    };
    lipschitz_min(h, floor)
}

/// Global minimum over the circle of a 1-Lipschitz function: interval
/// branch and bound down to half-width `1e-5`, then golden-section search
/// over each run of surviving intervals. `floor(c, w)` is an extra lower
/// bound on `[c - w, c + w]`.
fn lipschitz_min(h: impl Fn(f64) -> f64, floor: impl Fn(f64, f64) -> f64) -> f64 {
    const START: usize = 128;
    let mut w = PI / START as f64;
    let mut live: Vec<(f64, f64)> = (0..START)
        .map(|k| {
            let c = (2 * k + 1) as f64 * w;
            (c, h(c))
        })
        .collect();
    let mut best = live.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
    while w > 1e-5 {
        let half = w;
        w *= 0.5;
        let mut next = Vec::with_capacity(2 * live.len());
        for &(c, v) in &live {
            if v - half >= best - 1e-12 || floor(c, half) >= best - 1e-12 {
                continue;
            }
            for child in [c - w, c + w] {
                let hv = h(child);
                best = best.min(hv);
                next.push((child, hv));
            }
        }
        live = next;
    }
    live.retain(|&(c, v)| v - w < best - 1e-12 && floor(c, w) < best - 1e-12);
    live.sort_by(|a, b| a.0.total_cmp(&b.0));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut k = 0;
    while k < live.len() {
        let mut end = k;
        while end + 1 < live.len() && live[end + 1].0 - live[end].0 <= 2.5 * w {
            end += 1;
        }
        let (mut lo, mut hi) = (live[k].0 - w, live[end].0 + w);
        let mut c = hi - g * (hi - lo);
        let mut d = lo + g * (hi - lo);
        let (mut fc, mut fd) = (h(c), h(d));
        while hi - lo > 1e-13 {
            if fc <= fd {
                hi = d;
                d = c;
                fd = fc;
                c = hi - g * (hi - lo);
                fc = h(c);
            } else {
                lo = c;
                c = d;
                fc = fd;
                d = lo + g * (hi - lo);
                fd = h(d);
            }
        }
        best = best.min(fc).min(fd);
        k = end + 1;
    }
    best
}

// ---------------------------------------------------------------- scores

/// `sum ln(1 + C w)` over both sides, from scratch.
pub fn hcm_batch(
    graph: &AssociationGraph,
    assignment: &ProbabilityAssignment,
    active: &[usize],
    cfg: &MechanismConfig,
) -> f64 {
    let mut wl = vec![0.0; graph.left().len()];
    let mut wr = vec![0.0; graph.right().len()];
    for &k in active {
        let e = &graph.edges()[k];
        wl[e.i] += assignment.probs[k] / assignment.left_totals[e.i];
        wr[e.j] += assignment.probs[k] / assignment.right_totals[e.j];
    }
    let l: f64 = wl.iter().map(|w| (cfg.c_x() * w).ln_1p()).sum();
    let r: f64 = wr.iter().map(|w| (cfg.c_y() * w).ln_1p()).sum();
    l + r
}

pub fn score_batch(
    graph: &AssociationGraph,
    assignment: Option<&ProbabilityAssignment>,
    active: &[usize],
    cfg: &MechanismConfig,
    mechanism: Mechanism,
) -> f64 {
    match mechanism {
        Mechanism::Cm => active.len() as f64,
        Mechanism::Mcm | Mechanism::McmThenHcm => {
            let pairs: Vec<_> = active.iter().map(|&k| (graph.edges()[k].i, graph.edges()[k].j)).collect();
            kuhn(graph.left().len(), graph.right().len(), &pairs) as f64
        }
        Mechanism::Hcm => hcm_batch(graph, assignment.unwrap(), active, cfg),
    }
}

/// Distinct inlier sets per cell, found by sampling `phi` densely at each cell
/// center, locating every inlier-set change by bisection on the residual and
/// reading off each constant run at its midpoint.
pub fn dense_cell_runs(
    graph: &AssociationGraph,
    epsilon: f64,
    grid: &SearchGrid,
    samples: usize,
) -> Vec<Vec<Vec<usize>>> {
    let m = graph.edges().len();
    let step = TAU / samples as f64;
    let mut out = Vec::with_capacity(grid.num_cells());
    for cell in 0..grid.num_cells() {
        let (v1, v2) = grid.cell(cell);
        let residual = |k: usize, pose: &RelativePose| {
            let e = &graph.edges()[k];
            angular_residual(pose, &graph.left()[e.i], &graph.right()[e.j], RESIDUAL_TOL)
        };
        let pose_at = |phi: f64| params_to_pose(&PoseParams { phi, v1, v2 });
        let mut cuts = vec![0.0, TAU];
        let first = pose_at(0.0);
        let mut prev: Vec<bool> = (0..m).map(|k| residual(k, &first) <= epsilon).collect();
        for s in 1..=samples {
            let phi = s as f64 * step;
            let pose = pose_at(phi);
            for k in 0..m {
                let cur = residual(k, &pose) <= epsilon;
                if cur != prev[k] {
                    let (mut lo, mut hi) = (phi - step, phi);
                    for _ in 0..60 {
                        let mid = 0.5 * (lo + hi);
                        if (residual(k, &pose_at(mid)) <= epsilon) == prev[k] {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    cuts.push(0.5 * (lo + hi));
                    prev[k] = cur;
                }
            }
        }
        cuts.sort_by(f64::total_cmp);
        let mut sets: Vec<Vec<usize>> = Vec::new();
        for pair in cuts.windows(2) {
            if pair[1] - pair[0] < 1e-9 {
                continue;
            }
            let pose = pose_at(0.5 * (pair[0] + pair[1]));
            let active: Vec<usize> = (0..m).filter(|&k| residual(k, &pose) <= epsilon).collect();
            if !sets.contains(&active) {
                sets.push(active);
            }
        }
        out.push(sets);
    }
    out
}

/// Best score over the runs of `dense_cell_runs`, with the first cell reaching it.
pub fn best_over_runs(
    runs: &[Vec<Vec<usize>>],
    graph: &AssociationGraph,
    assignment: Option<&ProbabilityAssignment>,
    cfg: &MechanismConfig,
    mechanism: Mechanism,
) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, usize::MAX);
    for (cell, sets) in runs.iter().enumerate() {
        for active in sets {
            let s = score_batch(graph, assignment, active, cfg, mechanism);
            if s > best.0 * (1.0 + 1e-9) + 1e-12 {
                best = (s, cell);
            }
        }
    }
    best
}

// ---------------------------------------------------------------- metrics

/// Trapezoid area under the recall curve up to each threshold, normalized.
pub fn auc_reference(errors: &[f64], threshold: f64) -> f64 {
    let mut e: Vec<f64> = errors.to_vec();
    e.sort_by(f64::total_cmp);
    let n = e.len() as f64;
    let mut xs = vec![0.0];
    let mut ys = vec![0.0];
    for (k, &v) in e.iter().enumerate() {
        if v > threshold {
            break;
        }
        xs.push(v);
        ys.push((k + 1) as f64 / n);
    }
    let last = *ys.last().unwrap();
    xs.push(threshold);
    ys.push(last);
    let mut area = 0.0;
    for k in 1..xs.len() {
        area += (xs[k] - xs[k - 1]) * (ys[k] + ys[k - 1]) / 2.0;
    }
    area / threshold
}
