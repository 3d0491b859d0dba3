//! One-dimensional sweeps over `phi`.
//!
//! Each association contributes one or two closed arcs of `phi` on which it is
//! an inlier. Sorting the arc endpoints and walking them while maintaining a
//! mechanism-specific state gives the score of every distinct active set.

use std::cmp::Ordering;
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::geometry::PhiArcs;
use crate::mechanism::MechanismConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventKind {
    Enter,
    Exit,
}

/// Arc endpoint of one association.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalEvent {
    pub phi: f64,
    pub kind: EventKind,
    pub edge: usize,
    pub left: usize,
    pub right: usize,
    pub prob: f64,
}

impl IntervalEvent {
    /// Sweep order: `phi`, then enter before exit, then edge id.
    pub fn order(&self, other: &Self) -> Ordering {
        self.phi
            .total_cmp(&other.phi)
            .then(self.kind.cmp(&other.kind))
            .then(self.edge.cmp(&other.edge))
    }
}

/// Appends enter/exit events for every arc of one association.
pub fn push_arc_events(
    out: &mut Vec<IntervalEvent>,
    arcs: &PhiArcs,
    edge: usize,
    left: usize,
    right: usize,
    prob: f64,
) {
    for arc in arcs.iter() {
        let ev = |phi, kind| IntervalEvent { phi, kind, edge, left, right, prob };
        out.push(ev(arc.lo, EventKind::Enter));
        out.push(ev(arc.hi, EventKind::Exit));
    }
}

pub fn sort_events(events: &mut [IntervalEvent]) {
    events.sort_unstable_by(IntervalEvent::order);
}

/// Integer key with the same order as [`IntervalEvent::order`] for
/// `phi >= 0` and edge ids below `2^32`.
#[inline]
pub fn event_key(phi: f64, kind: EventKind, edge: usize) -> u128 {
    debug_assert!(phi >= 0.0 && edge <= u32::MAX as usize);
    // Adding zero turns -0.0 into +0.0.
    (((phi + 0.0).to_bits() as u128) << 64) | ((kind as u128) << 32) | edge as u128
}

#[inline]
pub fn key_edge(key: u128) -> usize {
    (key & 0xffff_ffff) as usize
}

#[inline]
pub fn key_event(key: u128) -> (f64, EventKind) {
    let kind = if (key >> 32) & 1 == 0 { EventKind::Enter } else { EventKind::Exit };
    (f64::from_bits((key >> 64) as u64), kind)
}

/// Incrementally maintained score of the active edge set.
pub trait SweepState {
    fn enter(&mut self, ev: &IntervalEvent);
    fn exit(&mut self, ev: &IntervalEvent);
    fn score(&self) -> f64;
    /// Returns the state to empty, exactly.
    fn reset(&mut self);

    fn apply(&mut self, ev: &IntervalEvent) {
        match ev.kind {
            EventKind::Enter => self.enter(ev),
            EventKind::Exit => self.exit(ev),
        }
    }
}

/// Score of a maximal run of `phi` with a fixed active set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCandidate {
    pub score: f64,
    /// Index of the event after which the active set is scored.
    pub endpoint: usize,
    /// Left end of the run (an arc start).
    pub phi: f64,
    /// Right end of the run (the next endpoint).
    pub phi_end: f64,
}

impl SweepCandidate {
    /// Representative `phi` strictly inside the run.
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.phi + self.phi_end)
    }
}

/// Walks sorted events and reports the active set after every group of
/// enter events sharing a `phi`. Removing an edge never raises any of the
/// scores, so these are the only local maxima.
pub fn sweep_candidates<S: SweepState>(
    events: &[IntervalEvent],
    state: &mut S,
    mut visit: impl FnMut(SweepCandidate),
) {
    for (k, ev) in events.iter().enumerate() {
        state.apply(ev);
        if ev.kind != EventKind::Enter {
            continue;
        }
        let next = events.get(k + 1);
        if matches!(next, Some(n) if n.kind == EventKind::Enter && n.phi == ev.phi) {
            continue;
        }
        let phi_end = next.map_or(TAU, |n| n.phi);
        visit(SweepCandidate { score: state.score(), endpoint: k, phi: ev.phi, phi_end });
    }
}

/// Best candidate of a sweep; the earliest one on ties. With no events the
/// score is zero at `phi = 0`.
pub fn sweep_best<S: SweepState>(events: &[IntervalEvent], state: &mut S) -> SweepCandidate {
    let mut best = SweepCandidate { score: 0.0, endpoint: 0, phi: 0.0, phi_end: TAU };
    let mut found = false;
    sweep_candidates(events, state, |c| {
        if !found || c.score > best.score {
            best = c;
            found = true;
        }
    });
    state.reset();
    best
}

/// Number of active intervals.
#[derive(Debug, Clone, Default)]
pub struct CmState {
    count: usize,
}

impl SweepState for CmState {
    fn enter(&mut self, _: &IntervalEvent) {
        self.count += 1;
    }

    fn exit(&mut self, _: &IntervalEvent) {
        self.count -= 1;
    }

    fn score(&self) -> f64 {
        self.count as f64
    }

    fn reset(&mut self) {
        self.count = 0;
    }
}

/// Harmonic score `sum ln(1 + C_x w_i) + sum ln(1 + C_y w_j)` with the
/// per-vertex weights and log terms updated one edge at a time.
#[derive(Debug, Clone)]
pub struct HcmState {
    c_x: f64,
    c_y: f64,
    inv_px: Vec<f64>,
    inv_py: Vec<f64>,
    wx: Vec<f64>,
    wy: Vec<f64>,
    lx: Vec<f64>,
    ly: Vec<f64>,
    touched_l: Vec<usize>,
    touched_r: Vec<usize>,
    s: f64,
    tables: Option<LogTables>,
}

/// Largest vertex degree given a lookup table.
const MAX_TABLE_DEGREE: usize = 10;

/// Per-vertex `ln(1 + C w)` for every subset of incident edges, so a sweep
/// step is a bit flip and a load.
#[derive(Debug, Clone)]
struct LogTables {
    /// Bit of each edge at its left / right vertex, or `NO_BIT`.
    bit_l: Vec<u32>,
    bit_r: Vec<u32>,
    /// Table offset per vertex, `NONE` for high-degree vertices.
    off_l: Vec<usize>,
    off_r: Vec<usize>,
    mask_l: Vec<u32>,
    mask_r: Vec<u32>,
    table: Vec<f64>,
}

const NO_BIT: u32 = u32::MAX;

impl LogTables {
    fn new(edges: &[(usize, usize, f64)], inv_px: &[f64], inv_py: &[f64], c_x: f64, c_y: f64) -> Self {
        let mut table = Vec::new();
        let mut side = |n: usize, end: &dyn Fn(&(usize, usize, f64)) -> usize, inv: &[f64], c: f64| {
            let mut incident = vec![Vec::new(); n];
            for (k, e) in edges.iter().enumerate() {
                incident[end(e)].push(k);
            }
            let mut bits = vec![NO_BIT; edges.len()];
            let mut off = vec![NONE; n];
            for (v, inc) in incident.iter().enumerate() {
                if inc.is_empty() || inc.len() > MAX_TABLE_DEGREE {
                    continue;
                }
                off[v] = table.len();
                for (b, &k) in inc.iter().enumerate() {
                    bits[k] = b as u32;
                }
                for mask in 0u32..(1 << inc.len()) {
                    let w: f64 = inc
                        .iter()
                        .enumerate()
                        .filter(|&(b, _)| mask >> b & 1 == 1)
                        .map(|(_, &k)| edges[k].2 * inv[v])
                        .sum();
                    table.push((c * w).ln_1p());
                }
            }
            (bits, off)
        };
        let (bit_l, off_l) = side(inv_px.len(), &|e| e.0, inv_px, c_x);
        let (bit_r, off_r) = side(inv_py.len(), &|e| e.1, inv_py, c_y);
        LogTables {
            mask_l: vec![0; off_l.len()],
            mask_r: vec![0; off_r.len()],
            bit_l,
            bit_r,
            off_l,
            off_r,
            table,
        }
    }
}

impl HcmState {
    /// `left_totals` / `right_totals` are the assigned per-vertex probability sums.
    pub fn new(left_totals: &[f64], right_totals: &[f64], cfg: &MechanismConfig) -> Self {
        let inv = |t: &[f64]| t.iter().map(|&v| if v > 0.0 { 1.0 / v } else { 0.0 }).collect();
        HcmState {
            c_x: cfg.c_x(),
            c_y: cfg.c_y(),
            inv_px: inv(left_totals),
            inv_py: inv(right_totals),
            wx: vec![0.0; left_totals.len()],
            wy: vec![0.0; right_totals.len()],
            lx: vec![0.0; left_totals.len()],
            ly: vec![0.0; right_totals.len()],
            touched_l: Vec::new(),
            touched_r: Vec::new(),
            s: 0.0,
            tables: None,
        }
    }

    /// Like [`HcmState::new`], with log terms precomputed for the given
    /// `(left, right, prob)` edges. Events must carry these edge ids and probabilities.
    pub fn with_edges(
        edges: &[(usize, usize, f64)],
        left_totals: &[f64],
        right_totals: &[f64],
        cfg: &MechanismConfig,
    ) -> Self {
        let mut st = Self::new(left_totals, right_totals, cfg);
        st.tables = Some(LogTables::new(edges, &st.inv_px, &st.inv_py, st.c_x, st.c_y));
        st
    }

    #[inline]
    fn bump(&mut self, ev: &IntervalEvent, sign: f64) {
        let (a, b) = (ev.left, ev.right);
        if self.wx[a] == 0.0 && self.lx[a] == 0.0 {
            self.touched_l.push(a);
        }
        if self.wy[b] == 0.0 && self.ly[b] == 0.0 {
            self.touched_r.push(b);
        }
        self.wx[a] += sign * ev.prob * self.inv_px[a];
        self.wy[b] += sign * ev.prob * self.inv_py[b];
        let (nx, ny) = match &mut self.tables {
            Some(t) => (
                Self::lookup(&t.table, &mut t.mask_l, &t.off_l, t.bit_l[ev.edge], a)
                    .unwrap_or_else(|| (self.c_x * self.wx[a]).ln_1p()),
                Self::lookup(&t.table, &mut t.mask_r, &t.off_r, t.bit_r[ev.edge], b)
                    .unwrap_or_else(|| (self.c_y * self.wy[b]).ln_1p()),
            ),
            None => ((self.c_x * self.wx[a]).ln_1p(), (self.c_y * self.wy[b]).ln_1p()),
        };
        self.s += nx - self.lx[a];
        self.lx[a] = nx;
        self.s += ny - self.ly[b];
        self.ly[b] = ny;
    }

    #[inline]
    fn lookup(table: &[f64], masks: &mut [u32], off: &[usize], bit: u32, v: usize) -> Option<f64> {
        if off[v] == NONE {
            return None;
        }
        masks[v] ^= 1 << bit;
        Some(table[off[v] + masks[v] as usize])
    }

    pub fn left_weights(&self) -> &[f64] {
        &self.wx
    }

    pub fn right_weights(&self) -> &[f64] {
        &self.wy
    }
}

impl SweepState for HcmState {
    fn enter(&mut self, ev: &IntervalEvent) {
        self.bump(ev, 1.0);
    }

    fn exit(&mut self, ev: &IntervalEvent) {
        self.bump(ev, -1.0);
    }

    fn score(&self) -> f64 {
        self.s
    }

    fn reset(&mut self) {
        for &a in &self.touched_l {
            self.wx[a] = 0.0;
            self.lx[a] = 0.0;
        }
        for &b in &self.touched_r {
            self.wy[b] = 0.0;
            self.ly[b] = 0.0;
        }
        if let Some(t) = &mut self.tables {
            for &a in &self.touched_l {
                t.mask_l[a] = 0;
            }
            for &b in &self.touched_r {
                t.mask_r[b] = 0;
            }
        }
        self.touched_l.clear();
        self.touched_r.clear();
        self.s = 0.0;
    }
}

const NONE: usize = usize::MAX;

/// Maximum matching of the active edges, repaired after every insertion and
/// deletion with at most one augmenting path.
#[derive(Debug, Clone)]
pub struct McmState {
    /// Active `(neighbor, edge)` pairs per vertex.
    adj_l: Vec<Vec<(usize, usize)>>,
    adj_r: Vec<Vec<(usize, usize)>>,
    /// Matched edge id per vertex.
    match_l: Vec<usize>,
    match_r: Vec<usize>,
    /// Endpoints of every edge seen so far, by edge id.
    ends: Vec<(usize, usize)>,
    size: usize,
    // BFS scratch.
    seen_l: Vec<u32>,
    seen_r: Vec<u32>,
    parent_l: Vec<usize>,
    parent_r: Vec<usize>,
    stamp: u32,
    queue: Vec<usize>,
    touched_l: Vec<usize>,
    touched_r: Vec<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Part {
    L,
    R,
}

impl McmState {
    pub fn new(n_left: usize, n_right: usize) -> Self {
        McmState {
            adj_l: vec![Vec::new(); n_left],
            adj_r: vec![Vec::new(); n_right],
            match_l: vec![NONE; n_left],
            match_r: vec![NONE; n_right],
            ends: Vec::new(),
            size: 0,
            seen_l: vec![0; n_left],
            seen_r: vec![0; n_right],
            parent_l: vec![NONE; n_left],
            parent_r: vec![NONE; n_right],
            stamp: 0,
            queue: Vec::new(),
            touched_l: Vec::new(),
            touched_r: Vec::new(),
        }
    }

    pub fn cardinality(&self) -> usize {
        self.size
    }

    /// Matched edge ids, ascending.
    pub fn matched_edges(&self) -> Vec<usize> {
        let mut m: Vec<usize> = self.match_l.iter().copied().filter(|&e| e != NONE).collect();
        m.sort_unstable();
        m
    }

    fn set_ends(&mut self, e: usize, a: usize, b: usize) {
        if self.ends.len() <= e {
            self.ends.resize(e + 1, (NONE, NONE));
        }
        self.ends[e] = (a, b);
    }

    fn next_stamp(&mut self) -> u32 {
        self.stamp = self.stamp.wrapping_add(1);
        if self.stamp == 0 {
            self.seen_l.iter_mut().for_each(|s| *s = 0);
            self.seen_r.iter_mut().for_each(|s| *s = 0);
            self.stamp = 1;
        }
        self.stamp
    }

    /// Alternating BFS from `root` (on side `part`) for a free vertex on the
    /// other side. `skip` is excluded from the search. Returns the path edges
    /// from the free end back to the root.
    fn search(&mut self, part: Part, root: usize, skip: Option<(Part, usize)>) -> Option<Vec<usize>> {
        let stamp = self.next_stamp();
        match skip {
            Some((Part::L, v)) => self.seen_l[v] = stamp,
            Some((Part::R, v)) => self.seen_r[v] = stamp,
            None => {}
        }
        match part {
            Part::L => self.seen_l[root] = stamp,
            Part::R => self.seen_r[root] = stamp,
        }
        self.queue.clear();
        self.queue.push(root);
        let mut head = 0;
        while head < self.queue.len() {
            let x = self.queue[head];
            head += 1;
            let (adj, own) = match part {
                Part::L => (&self.adj_l[x], self.match_l[x]),
                Part::R => (&self.adj_r[x], self.match_r[x]),
            };
            for &(y, e) in adj {
                if e == own {
                    continue;
                }
                let (seen, parent, y_match) = match part {
                    Part::L => (&mut self.seen_r[y], &mut self.parent_r[y], self.match_r[y]),
                    Part::R => (&mut self.seen_l[y], &mut self.parent_l[y], self.match_l[y]),
                };
                if *seen == stamp {
                    continue;
                }
                *seen = stamp;
                *parent = e;
                if y_match == NONE {
                    return Some(self.trace(part, root, y));
                }
                let (a, b) = self.ends[y_match];
                let z = if part == Part::L { a } else { b };
                let seen_z = match part {
                    Part::L => &mut self.seen_l[z],
                    Part::R => &mut self.seen_r[z],
                };
                if *seen_z != stamp {
                    *seen_z = stamp;
                    self.queue.push(z);
                }
            }
        }
        None
    }

    fn trace(&self, part: Part, root: usize, mut y: usize) -> Vec<usize> {
        let mut path = Vec::new();
        loop {
            let e = match part {
                Part::L => self.parent_r[y],
                Part::R => self.parent_l[y],
            };
            path.push(e);
            let (a, b) = self.ends[e];
            let x = if part == Part::L { a } else { b };
            if x == root {
                return path;
            }
            let m = match part {
                Part::L => self.match_l[x],
                Part::R => self.match_r[x],
            };
            path.push(m);
            let (ma, mb) = self.ends[m];
            y = if part == Part::L { mb } else { ma };
        }
    }

    /// Augments along a path from `trace`: even positions are unmatched.
    fn flip(&mut self, path: &[usize]) {
        for &e in path.iter().step_by(2) {
            let (a, b) = self.ends[e];
            self.match_l[a] = e;
            self.match_r[b] = e;
        }
    }

    fn touch(&mut self, a: usize, b: usize) {
        if self.adj_l[a].is_empty() {
            self.touched_l.push(a);
        }
        if self.adj_r[b].is_empty() {
            self.touched_r.push(b);
        }
    }

    pub fn insert(&mut self, e: usize, a: usize, b: usize) {
        self.set_ends(e, a, b);
        self.touch(a, b);
        self.adj_l[a].push((b, e));
        self.adj_r[b].push((a, e));
        let (ma, mb) = (self.match_l[a], self.match_r[b]);
        // Any new augmenting path runs through e.
        let path = match (ma == NONE, mb == NONE) {
            (true, true) => Some(vec![e]),
            (true, false) => self.search(Part::L, a, None),
            (false, true) => self.search(Part::R, b, None),
            (false, false) => {
                let b1 = self.ends[ma].1;
                let a1 = self.ends[mb].0;
                let Some(p1) = self.search(Part::R, b1, Some((Part::L, a))) else {
                    return;
                };
                let Some(p2) = self.search(Part::L, a1, Some((Part::R, b))) else {
                    return;
                };
                self.flip(&p1);
                self.flip(&p2);
                self.match_l[a] = e;
                self.match_r[b] = e;
                self.size += 1;
                return;
            }
        };
        if let Some(p) = path {
            self.flip(&p);
            self.size += 1;
        }
    }

    pub fn remove(&mut self, e: usize) {
        let (a, b) = self.ends[e];
        if let Some(pos) = self.adj_l[a].iter().position(|&(_, k)| k == e) {
            self.adj_l[a].remove(pos);
        }
        if let Some(pos) = self.adj_r[b].iter().position(|&(_, k)| k == e) {
            self.adj_r[b].remove(pos);
        }
        if self.match_l[a] != e {
            return;
        }
        self.match_l[a] = NONE;
        self.match_r[b] = NONE;
        self.size -= 1;
        // A new augmenting path must end at a freed endpoint.
        let path = self.search(Part::L, a, None).or_else(|| self.search(Part::R, b, None));
        if let Some(p) = path {
            self.flip(&p);
            self.size += 1;
        }
    }
}

impl SweepState for McmState {
    fn enter(&mut self, ev: &IntervalEvent) {
        self.insert(ev.edge, ev.left, ev.right);
    }

    fn exit(&mut self, ev: &IntervalEvent) {
        self.remove(ev.edge);
    }

    fn score(&self) -> f64 {
        self.size as f64
    }

    fn reset(&mut self) {
        for a in self.touched_l.drain(..) {
            self.adj_l[a].clear();
            self.match_l[a] = NONE;
        }
        for b in self.touched_r.drain(..) {
            self.adj_r[b].clear();
            self.match_r[b] = NONE;
        }
        self.size = 0;
    }
}

fn n_vertices(events: &[IntervalEvent]) -> (usize, usize) {
    events.iter().fold((0, 0), |(l, r), e| (l.max(e.left + 1), r.max(e.right + 1)))
}

/// Maximum number of simultaneously active closed intervals.
pub fn sweep_cm(events: &[IntervalEvent]) -> SweepCandidate {
    sweep_best(events, &mut CmState::default())
}

/// Maximum harmonic score over `phi`. `left_totals` / `right_totals` are the
/// assigned per-vertex probability sums.
pub fn sweep_hcm(
    events: &[IntervalEvent],
    left_totals: &[f64],
    right_totals: &[f64],
    cfg: &MechanismConfig,
) -> SweepCandidate {
    sweep_best(events, &mut HcmState::new(left_totals, right_totals, cfg))
}

/// Maximum matching cardinality over `phi`.
pub fn sweep_mcm(events: &[IntervalEvent]) -> SweepCandidate {
    let (l, r) = n_vertices(events);
    sweep_best(events, &mut McmState::new(l, r))
}
