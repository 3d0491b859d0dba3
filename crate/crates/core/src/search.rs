//! Globally optimal pose search over the `(v1, v2)` grid with an exact sweep
//! over `phi` in every cell.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::association::AssociationGraph;
use crate::error::{Error, Result};
use crate::geometry::{
    camera1_rotation, camera2_rotation, cone_half_width, omega_arccos, params_to_pose, PhiArcs,
    PolarCoords, PoseParams, RelativePose,
};
use crate::marginal::ProbabilityAssignment;
use crate::mechanism::{score_hypothesis, HypothesisScore, Mechanism, MechanismConfig};
use crate::sweep::{
    event_key, key_edge, key_event, sweep_best, sweep_candidates, CmState, EventKind, HcmState,
    IntervalEvent, McmState, SweepCandidate, SweepState,
};

/// Square lattice of rotation vectors inside the disk of radius pi.
#[derive(Debug, Clone)]
pub struct SearchGrid {
    n: usize,
    centers: Vec<Vector2<f64>>,
    /// Kept-center index per lattice site, row-major over `2n x 2n`.
    sites: Vec<Option<usize>>,
}

/// Lattice of pitch `pi / n` over `[-pi, pi]^2`, keeping centers of norm at most pi.
pub fn discretize(n: usize) -> Result<SearchGrid> {
    if n == 0 {
        return Err(Error::InvalidConfig("grid divisor must be at least 1".into()));
    }
    let pitch = PI / n as f64;
    let side = 2 * n;
    let coord = |k: usize| -PI + (k as f64 + 0.5) * pitch;
    let mut centers = Vec::new();
    let mut sites = vec![None; side * side];
    for ky in 0..side {
        for kx in 0..side {
            let c = Vector2::new(coord(kx), coord(ky));
            if c.norm() <= PI {
                sites[ky * side + kx] = Some(centers.len());
                centers.push(c);
            }
        }
    }
    if centers.is_empty() {
        centers.push(Vector2::zeros());
    }
    Ok(SearchGrid { n, centers, sites })
}

impl SearchGrid {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn pitch(&self) -> f64 {
        PI / self.n as f64
    }

    /// Kept centers of one disk, in enumeration order.
    pub fn centers(&self) -> &[Vector2<f64>] {
        &self.centers
    }

    /// Number of `(v1, v2)` cells.
    pub fn num_cells(&self) -> usize {
        self.centers.len() * self.centers.len()
    }

    /// `(v1, v2)` centers of a cell; cells enumerate `v2` fastest.
    pub fn cell(&self, index: usize) -> (Vector2<f64>, Vector2<f64>) {
        let m = self.centers.len();
        (self.centers[index / m], self.centers[index % m])
    }

    pub fn cell_index(&self, v1_index: usize, v2_index: usize) -> usize {
        v1_index * self.centers.len() + v2_index
    }

    /// Index of the kept center closest to `v`; ties go to the lower index.
    pub fn nearest(&self, v: &Vector2<f64>) -> usize {
        let side = 2 * self.n;
        let site = |x: f64| (((x + PI) / self.pitch()).floor().max(0.0) as usize).min(side - 1);
        if let Some(k) = self.sites.get(site(v.y) * side + site(v.x)).copied().flatten() {
            return k;
        }
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, c) in self.centers.iter().enumerate() {
            let d = (c - v).norm_squared();
            if d < best_d {
                best = k;
                best_d = d;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    /// Relative score tolerance for the tie set.
    pub tie_tolerance: f64,
    pub tie_cap: usize,
    /// Cells per work item; fixed so results do not depend on the thread count.
    pub batch_cells: usize,
    /// Worker threads; `None` uses the ambient rayon pool.
    pub threads: Option<usize>,
    /// Skip blocks of cells whose score bound is below the incumbent. The
    /// result is the same as with an exhaustive pass.
    pub prune: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            tie_tolerance: 1e-9,
            tie_cap: 4096,
            batch_cells: 1024,
            threads: None,
            prune: true,
        }
    }
}

/// One co-optimal hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TieEntry {
    pub score: f64,
    pub cell: usize,
    /// Sweep event index within the cell.
    pub endpoint: usize,
    /// Pose parameters, `phi` at the middle of the run.
    pub params: PoseParams,
    /// Run of `phi` over which the active set is constant.
    pub phi_range: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchResult {
    pub mechanism: Mechanism,
    pub score: f64,
    pub params: PoseParams,
    pub pose: RelativePose,
    pub cell: usize,
    pub phi_range: [f64; 2],
    /// Hypotheses within the tie tolerance of the best, in enumeration order.
    pub ties: Vec<TieEntry>,
    /// More ties existed than `tie_cap`.
    pub tie_overflow: bool,
    /// Index into `ties` of the returned hypothesis.
    pub selected: usize,
    /// Cells whose sweep ran; below `num_cells` when blocks were pruned.
    pub cells_evaluated: usize,
    /// Standalone re-scoring of the returned pose.
    pub diagnostics: HypothesisScore,
}

#[derive(Debug, Clone, Copy)]
struct Polar {
    theta: f64,
    azimuth: f64,
    /// Cone half-width for the arcsin branch; NaN when undefined.
    half: f64,
    sin_cos: (f64, f64),
}

#[derive(Debug, Clone, Copy)]
struct Hit {
    score: f64,
    cell: usize,
    cand: SweepCandidate,
}

fn tie_threshold(best: f64, tol: f64) -> f64 {
    best - tol * best.abs()
}

#[derive(Debug, Clone)]
struct Ties {
    best: Option<Hit>,
    list: Vec<Hit>,
    /// Largest score dropped because the list was full.
    dropped: f64,
    tol: f64,
    cap: usize,
}

impl Ties {
    fn new(opts: &SearchOptions) -> Self {
        Ties {
            best: None,
            list: Vec::new(),
            dropped: f64::NEG_INFINITY,
            tol: opts.tie_tolerance,
            cap: opts.tie_cap,
        }
    }

    fn threshold(&self, best: f64) -> f64 {
        tie_threshold(best, self.tol)
    }

    fn offer(&mut self, h: Hit) {
        match self.best {
            Some(b) if h.score <= b.score => {
                if h.score >= self.threshold(b.score) {
                    self.push(h);
                }
            }
            _ => {
                self.best = Some(h);
                let thr = self.threshold(h.score);
                self.list.retain(|t| t.score >= thr);
                // The best always stays listed.
                if self.list.len() >= self.cap.max(1) {
                    let last = self.list.pop().expect("cap is at least one");
                    self.dropped = self.dropped.max(last.score);
                }
                self.list.push(h);
            }
        }
    }

    fn push(&mut self, h: Hit) {
        if self.list.len() < self.cap {
            self.list.push(h);
        } else {
            self.dropped = self.dropped.max(h.score);
        }
    }

    fn overflow(&self) -> bool {
        self.best.is_some_and(|b| self.dropped >= self.threshold(b.score))
    }

    fn merge(&mut self, other: Ties) {
        for h in other.list {
            self.offer(h);
        }
        self.dropped = self.dropped.max(other.dropped);
    }
}

/// Per-center polar coordinates of every bearing at one threshold.
struct Tables {
    left: Vec<Polar>,
    right: Vec<Polar>,
    rows: usize,
    /// Residuals never exceed pi/2, so larger thresholds accept every phi.
    everything: bool,
    two_eps: f64,
    cos_two_eps: f64,
}

impl Tables {
    fn new(graph: &AssociationGraph, centers: &[Vector2<f64>], eps: f64) -> Self {
        let sin_eps = eps.sin();
        Tables {
            left: polar_table(centers, graph.left(), |v| camera1_rotation(0.0, v), sin_eps),
            right: polar_table(centers, graph.right(), camera2_rotation, sin_eps),
            rows: centers.len(),
            everything: eps >= FRAC_PI_2,
            two_eps: 2.0 * eps,
            cos_two_eps: (2.0 * eps).cos(),
        }
    }
}

/// Centers grouped by `2^level x 2^level` blocks of lattice sites.
struct Clusters {
    reps: Vec<Vector2<f64>>,
    /// Cluster ids one level down (center ids at level one).
    children: Vec<Vec<usize>>,
    /// Largest distance from a member center to its representative.
    radius: f64,
}

/// Cluster hierarchy for levels `1..=levels`; entry `k - 1` is level `k`.
fn cluster_levels(grid: &SearchGrid, levels: usize) -> Vec<Clusters> {
    let pitch = grid.pitch();
    let site = |x: f64| ((x + PI) / pitch - 0.5).round() as i64;
    let sites: Vec<(i64, i64)> = grid.centers().iter().map(|c| (site(c.y), site(c.x))).collect();
    let mut below: Vec<usize> = (0..sites.len()).collect();
    let mut out = Vec::new();
    for level in 1..=levels {
        let size = 1i64 << level;
        let mut ids = std::collections::BTreeMap::new();
        let mut reps = Vec::new();
        let mut children: Vec<Vec<usize>> = Vec::new();
        let mut radius: f64 = 0.0;
        let mut this = Vec::with_capacity(sites.len());
        for (k, &(sy, sx)) in sites.iter().enumerate() {
            let key = (sy.div_euclid(size), sx.div_euclid(size));
            let id = *ids.entry(key).or_insert_with(|| {
                let coord = |b: i64| -PI + (b * size) as f64 * pitch + 0.5 * size as f64 * pitch;
                reps.push(Vector2::new(coord(key.1), coord(key.0)));
                children.push(Vec::new());
                reps.len() - 1
            });
            if !children[id].contains(&below[k]) {
                children[id].push(below[k]);
            }
            radius = radius.max((grid.centers()[k] - reps[id]).norm());
            this.push(id);
        }
        out.push(Clusters { reps, children, radius });
        below = this;
    }
    out
}

/// Pair of clusters at one level with a bound on every cell inside.
#[derive(Debug, Clone, Copy)]
struct Node {
    bound: f64,
    level: usize,
    a: usize,
    b: usize,
}

impl PartialEq for Node {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == std::cmp::Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Node {
    /// Max-heap order: larger bound first, then finer level, then ids.
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.bound
            .total_cmp(&o.bound)
            .then(o.level.cmp(&self.level))
            .then(o.a.cmp(&self.a))
            .then(o.b.cmp(&self.b))
    }
}

/// Nodes expanded per parallel step; fixed so the work does not depend on
/// the thread count.
const EXPAND_BATCH: usize = 64;

/// Precomputed per-center polar coordinates for one graph.
pub struct SearchContext<'a> {
    graph: &'a AssociationGraph,
    grid: &'a SearchGrid,
    cfg: MechanismConfig,
    assignment: Option<&'a ProbabilityAssignment>,
    tables: Tables,
}

fn polar_table(
    centers: &[Vector2<f64>],
    bearings: &[crate::association::Bearing],
    rotation: impl Fn(&Vector2<f64>) -> nalgebra::Matrix3<f64> + Sync,
    sin_eps: f64,
) -> Vec<Polar> {
    centers
        .par_iter()
        .flat_map_iter(|c| {
            let r = rotation(c);
            bearings.iter().map(move |b| {
                let p = PolarCoords::of(&(r * b.dir()));
                let half = cone_half_width(sin_eps, p.theta).unwrap_or(f64::NAN);
                Polar { theta: p.theta, azimuth: p.azimuth, half, sin_cos: p.theta.sin_cos() }
            })
        })
        .collect()
}

/// Reusable buffers of one worker.
#[derive(Clone)]
struct Scratch {
    events: Vec<IntervalEvent>,
    keys: Vec<u128>,
    state: AnyState,
}

impl<'a> SearchContext<'a> {
    pub fn new(
        graph: &'a AssociationGraph,
        assignment: Option<&'a ProbabilityAssignment>,
        cfg: &MechanismConfig,
        grid: &'a SearchGrid,
    ) -> Result<Self> {
        cfg.validate()?;
        if grid.centers().is_empty() {
            return Err(Error::EmptyGrid);
        }
        if let Some(a) = assignment {
            if a.probs.len() != graph.edges().len() {
                return Err(Error::InvalidConfig("assignment does not match the graph".into()));
            }
        }
        let tables = Tables::new(graph, grid.centers(), cfg.epsilon);
        Ok(SearchContext { graph, grid, cfg: *cfg, assignment, tables })
    }

    /// Sorted arc events of every association at one cell.
    pub fn cell_events(&self, cell: usize, out: &mut Vec<IntervalEvent>) {
        let m = self.grid.centers().len();
        self.fill_events(&self.tables, cell / m, cell % m, out, &mut Vec::new());
    }

    fn fill_events(
        &self,
        t: &Tables,
        row1: usize,
        row2: usize,
        out: &mut Vec<IntervalEvent>,
        keys: &mut Vec<u128>,
    ) {
        out.clear();
        keys.clear();
        debug_assert!(row1 < t.rows && row2 < t.rows);
        let (nl, nr) = (self.graph.left().len(), self.graph.right().len());
        let lrow = &t.left[row1 * nl..][..nl];
        let rrow = &t.right[row2 * nr..][..nr];
        for (k, e) in self.graph.edges().iter().enumerate() {
            let (p1, p2) = (lrow[e.i], rrow[e.j]);
            if p1.theta - p2.theta > t.two_eps {
                continue;
            }
            let w = if t.everything {
                PI
            } else if p1.theta < p2.theta {
                if p1.half.is_nan() || p2.half.is_nan() {
                    PI
                } else {
                    (p1.half + p2.half).min(PI)
                }
            } else {
                omega_arccos(t.cos_two_eps, p1.sin_cos, p2.sin_cos)
            };
            for arc in PhiArcs::around(p2.azimuth - p1.azimuth, w).iter() {
                keys.push(event_key(arc.lo, EventKind::Enter, k));
                keys.push(event_key(arc.hi, EventKind::Exit, k));
            }
        }
        keys.sort_unstable();
        let edges = self.graph.edges();
        out.extend(keys.iter().map(|&key| {
            let edge = key_edge(key);
            let (phi, kind) = key_event(key);
            let e = &edges[edge];
            let prob = self.assignment.map_or(0.0, |a| a.probs[edge]);
            IntervalEvent { phi, kind, edge, left: e.i, right: e.j, prob }
        }));
    }

    /// Calls `visit` with every candidate of one cell.
    fn visit_cell(&self, cell: usize, s: &mut Scratch, mut visit: impl FnMut(Hit)) {
        let m = self.grid.centers().len();
        self.fill_events(&self.tables, cell / m, cell % m, &mut s.events, &mut s.keys);
        if s.events.is_empty() {
            let cand = SweepCandidate { score: 0.0, endpoint: 0, phi: 0.0, phi_end: TAU };
            visit(Hit { score: 0.0, cell, cand });
            return;
        }
        sweep_candidates(&s.events, &mut s.state, |cand| visit(Hit { score: cand.score, cell, cand }));
        s.state.reset();
    }

    fn state(&self, mechanism: Mechanism) -> Result<AnyState> {
        let (nl, nr) = (self.graph.left().len(), self.graph.right().len());
        Ok(match mechanism {
            Mechanism::Cm => AnyState::Cm(CmState::default()),
            Mechanism::Mcm | Mechanism::McmThenHcm => AnyState::Mcm(McmState::new(nl, nr)),
            Mechanism::Hcm => {
                let a = self.assignment.ok_or(Error::MissingAssignment(mechanism.name()))?;
                {
                    let edges: Vec<_> = self
                        .graph
                        .edges()
                        .iter()
                        .zip(&a.probs)
                        .map(|(e, &p)| (e.i, e.j, p))
                        .collect();
                    AnyState::Hcm(HcmState::with_edges(&edges, &a.left_totals, &a.right_totals, &self.cfg))
                }
            }
        })
    }

    /// Best sweep candidate of one cell (earliest on ties).
    pub fn evaluate_cell(&self, cell: usize, mechanism: Mechanism) -> Result<SweepCandidate> {
        let mut events = Vec::new();
        self.cell_events(cell, &mut events);
        let mut state = self.state(mechanism)?;
        Ok(sweep_best(&events, &mut state))
    }

    fn params(&self, cell: usize, phi: f64) -> PoseParams {
        let (v1, v2) = self.grid.cell(cell);
        PoseParams { phi, v1, v2 }
    }

    fn scratch(&self, mechanism: Mechanism) -> Result<Scratch> {
        Ok(Scratch { events: Vec::new(), keys: Vec::new(), state: self.state(mechanism)? })
    }

    /// Every cell in enumeration order.
    fn run_exhaustive(&self, mechanism: Mechanism, opts: &SearchOptions) -> Result<(Ties, usize)> {
        let template = self.scratch(mechanism)?;
        let n_cells = self.grid.num_cells();
        let batch = opts.batch_cells.max(1);
        let n_batches = n_cells.div_ceil(batch);
        let window = (rayon::current_num_threads() * 4).max(1);
        let mut acc = Ties::new(opts);
        let mut start = 0;
        while start < n_batches {
            let end = (start + window).min(n_batches);
            let parts: Vec<Ties> = (start..end)
                .into_par_iter()
                .map_init(
                    || template.clone(),
                    |s, b| {
                        let mut ties = Ties::new(opts);
                        for cell in b * batch..((b + 1) * batch).min(n_cells) {
                            self.visit_cell(cell, s, |h| ties.offer(h));
                        }
                        ties
                    },
                )
                .collect();
            for p in parts {
                acc.merge(p);
            }
            start = end;
        }
        Ok((acc, n_cells))
    }

    /// Best-first branch and bound over a hierarchy of cell blocks,
    /// stopping once no remaining block can reach the tie threshold.
    ///
    /// A bearing moves by at most `|v - v'|` when the rotation vector moves
    /// from `v` to `v'`, so the residual of an association changes by at
    /// most the cluster radius. Arcs at the representatives with the
    /// threshold enlarged by that radius therefore contain the arcs of every
    /// cell in the block, and every mechanism's score grows with the inlier
    /// set.
    fn run_pruned(&self, mechanism: Mechanism, opts: &SearchOptions) -> Result<(Ties, usize)> {
        let template = self.scratch(mechanism)?;
        let side = 2 * self.grid.n();
        let mut top = 1;
        while top < 4 && (2usize << top) <= side {
            top += 1;
        }
        let levels = cluster_levels(self.grid, top);
        let tables: Vec<Tables> = levels
            .iter()
            .map(|c| Tables::new(self.graph, &c.reps, self.cfg.epsilon + c.radius + 1e-9))
            .collect();
        let bound = |s: &mut Scratch, level: usize, a: usize, b: usize| {
            self.fill_events(&tables[level - 1], a, b, &mut s.events, &mut s.keys);
            if s.events.is_empty() {
                0.0
            } else {
                sweep_best(&s.events, &mut s.state).score
            }
        };
        let nt = levels[top - 1].reps.len();
        let roots: Vec<Node> = (0..nt * nt)
            .into_par_iter()
            .map_init(
                || template.clone(),
                |s, k| Node { bound: bound(s, top, k / nt, k % nt), level: top, a: k / nt, b: k % nt },
            )
            .collect();
        let mut heap: std::collections::BinaryHeap<Node> = roots.into();

        let m = self.grid.centers().len();
        let mut hits: Vec<Hit> = Vec::new();
        let mut best = f64::NEG_INFINITY;
        let mut evaluated = 0;
        loop {
            let thr = tie_threshold(best, opts.tie_tolerance);
            let mut batch = Vec::with_capacity(EXPAND_BATCH);
            while batch.len() < EXPAND_BATCH {
                match heap.peek() {
                    Some(n) if n.bound >= thr => batch.push(heap.pop().expect("peeked")),
                    _ => break,
                }
            }
            if batch.is_empty() {
                break;
            }
            let parts: Vec<(Vec<Node>, Vec<Hit>, usize)> = batch
                .par_iter()
                .map_init(
                    || template.clone(),
                    |s, n| {
                        let (ca, cb) = {
                            let c = &levels[n.level - 1];
                            (&c.children[n.a], &c.children[n.b])
                        };
                        if n.level > 1 {
                            let mut kids = Vec::new();
                            for &a in ca {
                                for &b in cb {
                                    let bd = bound(s, n.level - 1, a, b);
                                    if bd >= thr {
                                        kids.push(Node { bound: bd, level: n.level - 1, a, b });
                                    }
                                }
                            }
                            return (kids, Vec::new(), 0);
                        }
                        let mut out = Vec::new();
                        for &i in ca {
                            for &j in cb {
                                self.visit_cell(i * m + j, s, |h| {
                                    if h.score >= thr {
                                        out.push(h)
                                    }
                                });
                            }
                        }
                        (Vec::new(), out, ca.len() * cb.len())
                    },
                )
                .collect();
            for (kids, h, n) in parts {
                heap.extend(kids);
                evaluated += n;
                best = h.iter().map(|h| h.score).fold(best, f64::max);
                hits.extend(h);
            }
            let thr = tie_threshold(best, opts.tie_tolerance);
            hits.retain(|h| h.score >= thr);
        }
        // Replay in enumeration order so ties match the exhaustive pass.
        hits.sort_by_key(|h| (h.cell, h.cand.endpoint));
        let mut ties = Ties::new(opts);
        for h in hits {
            ties.offer(h);
        }
        Ok((ties, evaluated))
    }

    /// Globally optimal search over every cell of the grid.
    pub fn search(&self, mechanism: Mechanism, opts: &SearchOptions) -> Result<SearchResult> {
        if mechanism.needs_assignment() && self.assignment.is_none() {
            return Err(Error::MissingAssignment(mechanism.name()));
        }
        let run = || {
            if opts.prune {
                self.run_pruned(mechanism, opts)
            } else {
                self.run_exhaustive(mechanism, opts)
            }
        };
        let (ties, cells_evaluated) = match opts.threads {
            Some(t) => rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
                .install(run)?,
            None => run()?,
        };
        let best = ties.best.expect("grid has at least one cell");
        let entries: Vec<TieEntry> = ties
            .list
            .iter()
            .map(|h| TieEntry {
                score: h.score,
                cell: h.cell,
                endpoint: h.cand.endpoint,
                params: self.params(h.cell, h.cand.midpoint()),
                phi_range: [h.cand.phi, h.cand.phi_end],
            })
            .collect();
        let mut selected = entries
            .iter()
            .position(|t| t.cell == best.cell && t.endpoint == best.cand.endpoint)
            .expect("best is in the tie list");
        if mechanism == Mechanism::McmThenHcm {
            let a = self.assignment.expect("checked above");
            selected = mcm_then_hcm(self.graph, a, &self.cfg, &entries, opts.tie_tolerance)?;
        }
        let chosen = entries[selected];
        let pose = params_to_pose(&chosen.params);
        let diagnostics = score_hypothesis(self.graph, self.assignment, &pose, &self.cfg, mechanism)?;
        Ok(SearchResult {
            mechanism,
            score: chosen.score,
            params: chosen.params,
            pose,
            cell: chosen.cell,
            phi_range: chosen.phi_range,
            ties: entries,
            tie_overflow: ties.overflow(),
            selected,
            cells_evaluated,
            diagnostics,
        })
    }
}

/// Convenience wrapper building the context and searching.
pub fn search(
    graph: &AssociationGraph,
    assignment: Option<&ProbabilityAssignment>,
    cfg: &MechanismConfig,
    grid: &SearchGrid,
    mechanism: Mechanism,
    opts: &SearchOptions,
) -> Result<SearchResult> {
    SearchContext::new(graph, assignment, cfg, grid)?.search(mechanism, opts)
}

/// Index of the tied hypothesis with the largest HCM score; within
/// `tolerance` (relative) the earliest one wins.
pub fn mcm_then_hcm(
    graph: &AssociationGraph,
    assignment: &ProbabilityAssignment,
    cfg: &MechanismConfig,
    ties: &[TieEntry],
    tolerance: f64,
) -> Result<usize> {
    if ties.is_empty() {
        return Err(Error::InvalidConfig("empty tie set".into()));
    }
    let scores = ties
        .iter()
        .map(|t| {
            let pose = params_to_pose(&t.params);
            score_hypothesis(graph, Some(assignment), &pose, cfg, Mechanism::Hcm).map(|s| s.score)
        })
        .collect::<Result<Vec<f64>>>()?;
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let thr = max - tolerance * max.abs();
    Ok(scores.iter().position(|&s| s >= thr).expect("max is attained"))
}

#[derive(Debug, Clone)]
enum AnyState {
    Cm(CmState),
    Mcm(McmState),
    Hcm(HcmState),
}

impl SweepState for AnyState {
    fn enter(&mut self, ev: &IntervalEvent) {
        match self {
            AnyState::Cm(s) => s.enter(ev),
            AnyState::Mcm(s) => s.enter(ev),
            AnyState::Hcm(s) => s.enter(ev),
        }
    }

    fn exit(&mut self, ev: &IntervalEvent) {
        match self {
            AnyState::Cm(s) => s.exit(ev),
            AnyState::Mcm(s) => s.exit(ev),
            AnyState::Hcm(s) => s.exit(ev),
        }
    }

    fn score(&self) -> f64 {
        match self {
            AnyState::Cm(s) => s.score(),
            AnyState::Mcm(s) => s.score(),
            AnyState::Hcm(s) => s.score(),
        }
    }

    fn reset(&mut self) {
        match self {
            AnyState::Cm(s) => s.reset(),
            AnyState::Mcm(s) => s.reset(),
            AnyState::Hcm(s) => s.reset(),
        }
    }
}
