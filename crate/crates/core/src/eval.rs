//! Synthetic scenes, pose error metrics and the evaluation experiments.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::association::{AssociationGraph, Bearing, Edge, GroundTruth};
use crate::error::{Error, Result};
use crate::geometry::{
    angle_between, exp_so3, params_to_pose, pose_to_params, rotation_angle, PoseParams,
    RelativePose,
};
use crate::marginal::{assign_marginals, AssignmentConfig};
use crate::mechanism::{likelihood_constant, HopcroftKarp, Mechanism, MechanismConfig};
use crate::search::{mcm_then_hcm, SearchContext, SearchGrid, SearchOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    /// Number of 3D points seen by both cameras (true correspondences).
    pub points: usize,
    /// Unmatched features per camera, as a fraction of `points`, in `[0, 1]`.
    pub outlier_fraction: f64,
    /// Maximum candidates per feature; 0 and 1 both mean no distractors.
    pub ambiguity: usize,
    /// Standard deviation of bearing noise, degrees.
    pub noise_deg: f64,
    /// Full field of view, degrees.
    pub fov_deg: f64,
    /// Maximum relative rotation angle, degrees.
    pub max_rotation_deg: f64,
    /// Point depth range in the first camera, in baselines.
    pub min_depth: f64,
    pub max_depth: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            points: 60,
            outlier_fraction: 0.1,
            ambiguity: 2,
            noise_deg: 0.0,
            fov_deg: 120.0,
            max_rotation_deg: 30.0,
            min_depth: 1.0,
            max_depth: 2.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub config: SceneConfig,
    pub pose: RelativePose,
    /// Points in the first camera frame.
    pub points: Vec<Vector3<f64>>,
    pub graph: AssociationGraph,
    pub truth: GroundTruth,
}

fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
        let n: f64 = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

/// Rotation with axis uniform on the sphere and angle uniform in `[0, max_angle)`.
pub fn random_rotation(rng: &mut impl Rng, max_angle: f64) -> Matrix3<f64> {
    let axis = random_unit(rng);
    exp_so3(&(axis * rng.random_range(0.0..max_angle)))
}

fn in_view(v: &Vector3<f64>, half_fov: f64) -> bool {
    v.z > 0.0 && angle_between(v, &Vector3::z()) <= half_fov
}

fn random_view_bearing(rng: &mut impl Rng, half_fov: f64) -> Vector3<f64> {
    loop {
        let v = random_unit(rng);
        if in_view(&v, half_fov) {
            return v;
        }
    }
}

fn perturb(rng: &mut impl Rng, v: Vector3<f64>, sigma: f64) -> Vector3<f64> {
    if sigma <= 0.0 {
        return v;
    }
    let n = Normal::new(0.0, sigma).expect("positive sigma");
    let w = Vector3::from_fn(|_, _| n.sample(rng));
    // Tangent-plane perturbation.
    (v + (w - v * v.dot(&w))).normalize()
}

/// Random two-view scene with planted correspondences, distractor edges and
/// unmatched outlier features. Deterministic for a fixed seed.
pub fn generate_scene(config: &SceneConfig) -> Result<SyntheticScene> {
    if !(0.0..=1.0).contains(&config.outlier_fraction) {
        return Err(Error::InvalidConfig(format!(
            "outlier fraction {} outside [0, 1]",
            config.outlier_fraction
        )));
    }
    if config.points == 0 || !(config.fov_deg > 0.0 && config.fov_deg < 180.0) {
        return Err(Error::InvalidConfig("need points > 0 and fov in (0, 180)".into()));
    }
    if !(config.min_depth > 0.0 && config.min_depth < config.max_depth) {
        return Err(Error::InvalidConfig("need 0 < min_depth < max_depth".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let half_fov = config.fov_deg.to_radians() / 2.0;
    let rotation = random_rotation(&mut rng, config.max_rotation_deg.to_radians().max(1e-12));
    let translation = random_unit(&mut rng);
    let pose = RelativePose::new(rotation, translation);
    let rt = rotation.transpose();

    let mut points = Vec::with_capacity(config.points);
    let mut attempts = 0usize;
    while points.len() < config.points {
        attempts += 1;
        if attempts > 1000 * config.points + 10_000 {
            return Err(Error::InvalidConfig("could not place points visible in both views".into()));
        }
        let dir = random_view_bearing(&mut rng, half_fov);
        let p1 = dir * rng.random_range(config.min_depth..config.max_depth);
        let p2 = rt * (p1 - translation);
        if in_view(&p2, half_fov) {
            points.push(p1);
        }
    }

    let sigma = config.noise_deg.to_radians();
    let n = config.points;
    let n_out = (config.outlier_fraction * n as f64).round() as usize;
    let mut left: Vec<Vector3<f64>> =
        points.iter().map(|p| perturb(&mut rng, p.normalize(), sigma)).collect();
    let mut right_true: Vec<Vector3<f64>> = points
        .iter()
        .map(|p| perturb(&mut rng, (rt * (p - translation)).normalize(), sigma))
        .collect();
    left.extend((0..n_out).map(|_| random_view_bearing(&mut rng, half_fov)));
    right_true.extend((0..n_out).map(|_| random_view_bearing(&mut rng, half_fov)));

    // Shuffle right indices so the true matching is not the identity.
    let n_right = right_true.len();
    let mut perm: Vec<usize> = (0..n_right).collect();
    perm.shuffle(&mut rng);
    let mut right = vec![Vector3::zeros(); n_right];
    for (k, &p) in perm.iter().enumerate() {
        right[p] = right_true[k];
    }

    let cap = config.ambiguity.max(1);
    let mut deg_l = vec![0usize; left.len()];
    let mut deg_r = vec![0usize; n_right];
    let mut edges = Vec::new();
    let mut present = std::collections::BTreeSet::new();
    let mut add = |i: usize, j: usize, sim: f64, edges: &mut Vec<Edge>, dl: &mut [usize], dr: &mut [usize]| {
        if dl[i] < cap && dr[j] < cap && present.insert((i, j)) {
            dl[i] += 1;
            dr[j] += 1;
            edges.push(Edge::new(i, j, sim));
        }
    };
    let matches: Vec<(usize, usize)> = (0..n).map(|i| (i, perm[i])).collect();
    for &(i, j) in &matches {
        let s = rng.random_range(0.8..1.0);
        add(i, j, s, &mut edges, &mut deg_l, &mut deg_r);
    }
    // Each outlier feature gets one spurious candidate.
    for i in n..left.len() {
        let j = rng.random_range(0..n_right);
        let s = rng.random_range(0.7..0.9);
        add(i, j, s, &mut edges, &mut deg_l, &mut deg_r);
    }
    for k in n..n_right {
        let i = rng.random_range(0..left.len());
        let s = rng.random_range(0.7..0.9);
        add(i, perm[k], s, &mut edges, &mut deg_l, &mut deg_r);
    }
    // Distractors fill candidate sets up to the degree cap.
    if cap > 1 {
        let all_right: Vec<usize> = (0..n_right).collect();
        for i in 0..left.len() {
            for _ in 0..(cap - 1) * 2 {
                if deg_l[i] >= cap {
                    break;
                }
                let &j = all_right.choose(&mut rng).expect("nonempty");
                let s = rng.random_range(0.7..0.95);
                add(i, j, s, &mut edges, &mut deg_l, &mut deg_r);
            }
        }
    }

    let graph = AssociationGraph::new(
        left.into_iter().map(Bearing::from_unit).collect(),
        right.into_iter().map(Bearing::from_unit).collect(),
        edges,
    )?;
    let truth = GroundTruth::new(pose, matches)?;
    Ok(SyntheticScene { config: *config, pose, points, graph, truth })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    pub rotation: f64,
    pub translation: f64,
    /// `max(rotation, translation)`.
    pub combined: f64,
}

impl PoseError {
    pub fn between(estimate: &RelativePose, truth: &RelativePose) -> Self {
        let rotation = rotation_angle(&(estimate.rotation.transpose() * truth.rotation));
        let translation = angle_between(&estimate.translation, &truth.translation);
        PoseError { rotation, translation, combined: rotation.max(translation) }
    }
}

/// Error of a set of co-optimal estimates: the worst one.
pub fn pose_error(estimates: &[RelativePose], truth: &RelativePose) -> Option<PoseError> {
    estimates
        .iter()
        .map(|e| PoseError::between(e, truth))
        .max_by(|a, b| a.combined.total_cmp(&b.combined))
}

/// Normalized area under the cumulative recall curve of `errors` up to each
/// threshold (all in the same unit).
pub fn pose_auc(errors: &[f64], thresholds: &[f64]) -> Vec<f64> {
    let mut e: Vec<f64> = errors.to_vec();
    e.sort_by(f64::total_cmp);
    let n = e.len() as f64;
    let mut xs = vec![0.0];
    let mut ys = vec![0.0];
    for (k, v) in e.iter().enumerate() {
        xs.push(*v);
        ys.push((k + 1) as f64 / n);
    }
    thresholds
        .iter()
        .map(|&t| {
            let last = xs.partition_point(|&x| x < t);
            let mut area = 0.0;
            for k in 1..last {
                area += 0.5 * (ys[k] + ys[k - 1]) * (xs[k] - xs[k - 1]);
            }
            area += ys[last - 1] * (t - xs[last - 1]);
            area / t
        })
        .collect()
}

/// Counts per bin of width `bin_width` starting at zero.
pub fn histogram(values: &[f64], bin_width: f64) -> Vec<(f64, usize)> {
    let max = values.iter().copied().fold(0.0, f64::max);
    let bins = (max / bin_width).floor() as usize + 1;
    let mut counts = vec![0usize; bins];
    for &v in values {
        counts[((v / bin_width).floor() as usize).min(bins - 1)] += 1;
    }
    counts.into_iter().enumerate().map(|(k, c)| (k as f64 * bin_width, c)).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscretizationReport {
    pub n: usize,
    pub trials: usize,
    /// Per-trial errors, radians.
    pub rotation: Vec<f64>,
    pub translation: Vec<f64>,
    pub max_rotation: f64,
    pub max_translation: f64,
}

/// Error introduced by snapping `(v1, v2)` of random poses to the grid
/// centers while keeping `phi` exact.
pub fn discretization_mc(grid: &SearchGrid, trials: usize, seed: u64) -> DiscretizationReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rotation = Vec::with_capacity(trials);
    let mut translation = Vec::with_capacity(trials);
    for _ in 0..trials {
        let r = random_rotation(&mut rng, PI);
        let t = random_unit(&mut rng);
        let pose = RelativePose::new(r, t);
        let p = pose_to_params(&pose).params;
        let snapped = PoseParams {
            phi: p.phi,
            v1: grid.centers()[grid.nearest(&p.v1)],
            v2: grid.centers()[grid.nearest(&p.v2)],
        };
        let e = PoseError::between(&params_to_pose(&snapped), &pose);
        rotation.push(e.rotation);
        translation.push(e.translation);
    }
    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    DiscretizationReport {
        n: grid.n(),
        trials,
        max_rotation: max(&rotation),
        max_translation: max(&translation),
        rotation,
        translation,
    }
}

/// Outcome of one mechanism on one scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneOutcome {
    pub mechanism: Mechanism,
    pub score: f64,
    /// Worst combined error over the tie set, radians.
    pub error: f64,
    /// Combined error of the returned hypothesis alone, radians.
    pub selected_error: f64,
    pub ties: usize,
}

/// Runs one mechanism on a scene and scores it against the truth.
pub fn evaluate_scene(
    scene: &SyntheticScene,
    cfg: &MechanismConfig,
    grid: &SearchGrid,
    mechanism: Mechanism,
    opts: &SearchOptions,
) -> Result<SceneOutcome> {
    let assignment = if mechanism.needs_assignment() {
        Some(assign_marginals(&scene.graph, &AssignmentConfig::new(cfg.p_x, cfg.p_y)?)?)
    } else {
        None
    };
    let ctx = SearchContext::new(&scene.graph, assignment.as_ref(), cfg, grid)?;
    let r = ctx.search(mechanism, opts)?;
    Ok(outcome(&r, scene, mechanism))
}

fn outcome(r: &crate::search::SearchResult, scene: &SyntheticScene, mechanism: Mechanism) -> SceneOutcome {
    // MCM followed by HCM commits to one hypothesis; the others report the
    // worst of their co-optimal set.
    let poses: Vec<RelativePose> = if mechanism == Mechanism::McmThenHcm {
        vec![r.pose]
    } else {
        r.ties.iter().map(|t| params_to_pose(&t.params)).collect()
    };
    let error = pose_error(&poses, &scene.pose).expect("nonempty").combined;
    SceneOutcome {
        mechanism,
        score: r.score,
        error,
        selected_error: PoseError::between(&r.pose, &scene.pose).combined,
        ties: r.ties.len(),
    }
}

/// HCM, MCM and MCM followed by HCM on one scene. The last reuses the MCM
/// search and only re-ranks its co-optimal set.
pub fn compare_mechanisms(
    scene: &SyntheticScene,
    cfg: &MechanismConfig,
    grid: &SearchGrid,
    opts: &SearchOptions,
) -> Result<[SceneOutcome; 3]> {
    let a = assign_marginals(&scene.graph, &AssignmentConfig::new(cfg.p_x, cfg.p_y)?)?;
    let ctx = SearchContext::new(&scene.graph, Some(&a), cfg, grid)?;
    let hcm = ctx.search(Mechanism::Hcm, opts)?;
    let mut mcm = ctx.search(Mechanism::Mcm, opts)?;
    let mcm_out = outcome(&mcm, scene, Mechanism::Mcm);
    let k = mcm_then_hcm(&scene.graph, &a, cfg, &mcm.ties, opts.tie_tolerance)?;
    mcm.selected = k;
    mcm.params = mcm.ties[k].params;
    mcm.pose = params_to_pose(&mcm.params);
    Ok([
        outcome(&hcm, scene, Mechanism::Hcm),
        mcm_out,
        outcome(&mcm, scene, Mechanism::McmThenHcm),
    ])
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub p: f64,
    pub c: f64,
    /// Per-scene combined errors, radians.
    pub errors: Vec<f64>,
    /// AUC at each requested threshold.
    pub auc: Vec<f64>,
}

/// Re-runs HCM with `p_x = p_y = p` for every `p` on every scene.
pub fn sensitivity_sweep(
    scenes: &[SyntheticScene],
    p_values: &[f64],
    epsilon: f64,
    outlier_range: f64,
    grid: &SearchGrid,
    opts: &SearchOptions,
    thresholds: &[f64],
) -> Result<Vec<SensitivityRow>> {
    p_values
        .iter()
        .map(|&p| {
            let cfg = MechanismConfig::new(epsilon, outlier_range, p, p)?;
            let errors = scenes
                .iter()
                .map(|s| evaluate_scene(s, &cfg, grid, Mechanism::Hcm, opts).map(|o| o.error))
                .collect::<Result<Vec<f64>>>()?;
            let auc = pose_auc(&errors, thresholds);
            Ok(SensitivityRow { p, c: likelihood_constant(p, cfg.delta()), errors, auc })
        })
        .collect()
}

/// HCM evaluation of an inlier set with reusable scratch space.
///
/// Log terms are accumulated as products over long runs, which needs far
/// fewer logarithms than summing one per vertex.
#[derive(Debug, Clone)]
pub struct HcmEvaluator {
    wx: Vec<f64>,
    wy: Vec<f64>,
}

impl HcmEvaluator {
    pub fn new(n_left: usize, n_right: usize) -> Self {
        HcmEvaluator { wx: vec![0.0; n_left], wy: vec![0.0; n_right] }
    }

    /// Score of the inlier edges `(i, j, p)` given per-vertex reciprocals of
    /// the assigned totals.
    pub fn score(
        &mut self,
        inliers: &[(usize, usize, f64)],
        inv_px: &[f64],
        inv_py: &[f64],
        c_x: f64,
        c_y: f64,
    ) -> f64 {
        for &(i, j, p) in inliers {
            self.wx[i] += p * inv_px[i];
            self.wy[j] += p * inv_py[j];
        }
        // `sum ln(1 + C w)` over distinct vertices as logs of running products.
        // A repeated vertex finds its weight already cleared and contributes a
        // factor of one; two products per side keep the multiplier busy.
        let run = product_run(c_x.max(c_y));
        let mut s = 0.0;
        for block in inliers.chunks(run) {
            let mut acc = [1.0f64; 4];
            for pair in block.chunks(2) {
                for (h, &(i, j, _)) in pair.iter().enumerate() {
                    acc[h] *= 1.0 + c_x * self.wx[i].min(1.0);
                    self.wx[i] = 0.0;
                    acc[2 + h] *= 1.0 + c_y * self.wy[j].min(1.0);
                    self.wy[j] = 0.0;
                }
            }
            s += (acc[0] * acc[1]).ln() + (acc[2] * acc[3]).ln();
        }
        s
    }
}

/// Largest run of factors `<= 1 + c` whose product stays below `2^1000`.
fn product_run(c: f64) -> usize {
    ((1000.0 / (1.0 + c).log2()) as usize).clamp(4, 256) & !3
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub inliers: usize,
    pub trials: usize,
    pub mcm_median_ns: f64,
    pub hcm_median_ns: f64,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median time of the post-inlier stage of MCM (Hopcroft-Karp) and HCM
/// (weights and score) on inlier sets drawn uniformly without replacement
/// from all pairs of two `features`-sized groups.
pub fn eval_time_bench(
    features: usize,
    inlier_counts: &[usize],
    trials: usize,
    seed: u64,
) -> Result<Vec<TimingRow>> {
    if trials == 0 || features == 0 {
        return Err(Error::InvalidConfig("need trials > 0 and features > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = likelihood_constant(0.1, 0.03);
    let mut hk = HopcroftKarp::new();
    let mut hcm = HcmEvaluator::new(features, features);
    let mut rows = Vec::new();
    for &n in inlier_counts {
        if n > features * features {
            return Err(Error::InvalidConfig(format!("{n} inliers exceed {features}^2 pairs")));
        }
        let mut t_mcm = Vec::with_capacity(trials);
        let mut t_hcm = Vec::with_capacity(trials);
        let mut sink = 0.0;
        for _ in 0..trials {
            let mut ids: Vec<usize> =
                rand::seq::index::sample(&mut rng, features * features, n).into_vec();
            ids.sort_unstable();
            let pairs: Vec<(usize, usize)> = ids.iter().map(|&k| (k / features, k % features)).collect();
            let probs: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.1)).collect();
            let mut px = vec![0.0; features];
            let mut py = vec![0.0; features];
            for (&(i, j), &p) in pairs.iter().zip(&probs) {
                px[i] += p;
                py[j] += p;
            }
            let inv = |t: Vec<f64>| t.into_iter().map(|v| if v > 0.0 { 1.0 / v } else { 0.0 }).collect::<Vec<f64>>();
            let (inv_px, inv_py) = (inv(px), inv(py));
            let triples: Vec<(usize, usize, f64)> =
                pairs.iter().zip(&probs).map(|(&(i, j), &p)| (i, j, p)).collect();

            let start = Instant::now();
            let m = hk.solve(features, features, std::hint::black_box(&pairs));
            t_mcm.push(start.elapsed().as_nanos() as f64);
            sink += m as f64;

            let start = Instant::now();
            let s = hcm.score(std::hint::black_box(&triples), &inv_px, &inv_py, c, c);
            t_hcm.push(start.elapsed().as_nanos() as f64);
            sink += s;
        }
        std::hint::black_box(sink);
        rows.push(TimingRow {
            inliers: n,
            trials,
            mcm_median_ns: median(&mut t_mcm),
            hcm_median_ns: median(&mut t_hcm),
        });
    }
    Ok(rows)
}
