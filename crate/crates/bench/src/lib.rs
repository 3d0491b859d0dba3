//! Shared fixtures for the benchmarks.

use hcm_core::eval::{generate_scene, SceneConfig, SyntheticScene};
use hcm_core::{assign_marginals, AssignmentConfig, MechanismConfig, ProbabilityAssignment};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random inlier set between two feature groups, ready for post-inlier scoring.
pub struct InlierSet {
    pub features: usize,
    pub pairs: Vec<(usize, usize)>,
    /// `(i, j, p)` per inlier.
    pub triples: Vec<(usize, usize, f64)>,
    pub inv_px: Vec<f64>,
    pub inv_py: Vec<f64>,
}

pub fn inlier_set(features: usize, n: usize, seed: u64) -> InlierSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids = rand::seq::index::sample(&mut rng, features * features, n).into_vec();
    ids.sort_unstable();
    let pairs: Vec<(usize, usize)> = ids.iter().map(|&k| (k / features, k % features)).collect();
    let triples: Vec<_> = pairs.iter().map(|&(i, j)| (i, j, rng.random_range(0.01..0.1))).collect();
    let mut px = vec![0.0; features];
    let mut py = vec![0.0; features];
    for &(i, j, p) in &triples {
        px[i] += p;
        py[j] += p;
    }
    let inv = |t: Vec<f64>| t.into_iter().map(|v| if v > 0.0 { 1.0 / v } else { 0.0 }).collect();
    InlierSet { features, pairs, triples, inv_px: inv(px), inv_py: inv(py) }
}

/// A synthetic scene with its probability assignment.
pub struct Problem {
    pub scene: SyntheticScene,
    pub assignment: ProbabilityAssignment,
    pub cfg: MechanismConfig,
}

pub fn problem(points: usize, seed: u64) -> Problem {
    let scene = generate_scene(&SceneConfig { points, seed, ..Default::default() }).expect("valid scene");
    let cfg = MechanismConfig::new(0.15f64.to_radians(), 5f64.to_radians(), 0.1, 0.1).expect("valid config");
    let assignment =
        assign_marginals(&scene.graph, &AssignmentConfig::new(cfg.p_x, cfg.p_y).expect("valid"))
            .expect("assignment converges");
    Problem { scene, assignment, cfg }
}
