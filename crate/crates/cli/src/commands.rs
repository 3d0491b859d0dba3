use std::path::{Path, PathBuf};
use std::time::Instant;

use hcm_core::association::association_metrics;
use hcm_core::eval::{
    compare_mechanisms, discretization_mc, eval_time_bench, generate_scene, histogram, pose_auc,
    pose_error, sensitivity_sweep, PoseError, SyntheticScene,
};
use hcm_core::format::LoadedProblem;
use hcm_core::geometry::params_to_pose;
use hcm_core::{
    assign_marginals, discretize, AssociationFile, Error, Mechanism, PoseParams, RelativePose, RunConfig,
    SearchOptions,
};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::output::{self, CsvRow, Record, Sink};
use crate::{CliError, CliResult, SceneArgs};

fn load(file: &Path, run: &RunConfig) -> CliResult<LoadedProblem> {
    let text = output::read(file)?;
    let problem = AssociationFile::from_json(&text)?.load(run)?;
    for w in &problem.warnings {
        warn!("{}: {w}", file.display());
    }
    if problem.graph.edges().is_empty() {
        return Err(Error::EmptyGraph.into());
    }
    Ok(problem)
}

fn echo(command: &str, run: &RunConfig) {
    eprintln!("{command}: {}", serde_json::to_string(run).expect("configs always serialize"));
}

fn search_options(_run: &RunConfig) -> SearchOptions {
    // The global pool already honors `--threads`.
    SearchOptions::default()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PoseRecord {
    /// Row-major.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl From<&RelativePose> for PoseRecord {
    fn from(p: &RelativePose) -> Self {
        PoseRecord {
            rotation: std::array::from_fn(|k| p.rotation[(k / 3, k % 3)]),
            translation: [p.translation.x, p.translation.y, p.translation.z],
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TruthReport {
    pub rotation_error_deg: f64,
    pub translation_error_deg: f64,
    /// Combined error of the returned pose.
    pub error_deg: f64,
    /// Worst combined error over the co-optimal set.
    pub tie_error_deg: f64,
    pub precision: f64,
    pub recall: f64,
    pub correct: usize,
    pub success: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Timing {
    pub load_s: f64,
    pub assign_s: f64,
    pub search_s: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EstimateResult {
    pub mechanism: Mechanism,
    pub score: f64,
    pub pose: PoseRecord,
    pub params: PoseParams,
    pub phi_range: [f64; 2],
    /// Associations consistent with the pose, as feature index pairs.
    pub inliers: Vec<[usize; 2]>,
    pub matching_cardinality: Option<usize>,
    pub ties: usize,
    pub tie_overflow: bool,
    pub cells_evaluated: usize,
    pub cells_total: usize,
    pub timing: Timing,
    pub truth: Option<TruthReport>,
    pub warnings: Vec<String>,
}

pub fn estimate(file: &Path, run: &RunConfig, sink: &Sink) -> CliResult<()> {
    echo("estimate", run);
    let start = Instant::now();
    let problem = load(file, run)?;
    let g = &problem.graph;
    let cfg = run.mechanism_config()?;
    let grid = discretize(run.grid_n)?;
    let load_s = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let assignment = if run.mechanism.needs_assignment() {
        Some(assign_marginals(g, &run.assignment_config()?)?)
    } else {
        None
    };
    let assign_s = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let r = hcm_core::search::search(g, assignment.as_ref(), &cfg, &grid, run.mechanism, &search_options(run))?;
    let search_s = start.elapsed().as_secs_f64();

    let inliers: Vec<[usize; 2]> =
        r.diagnostics.inliers.iter().map(|&k| [g.edges()[k].i, g.edges()[k].j]).collect();
    let truth = problem.truth.as_ref().map(|gt| {
        let e = PoseError::between(&r.pose, &gt.pose);
        let tie_poses: Vec<_> = r.ties.iter().map(|t| params_to_pose(&t.params)).collect();
        let worst = pose_error(&tie_poses, &gt.pose).map_or(e.combined, |w| w.combined);
        let pairs: Vec<_> = inliers.iter().map(|p| (p[0], p[1])).collect();
        let m = association_metrics(&pairs, gt);
        TruthReport {
            rotation_error_deg: e.rotation.to_degrees(),
            translation_error_deg: e.translation.to_degrees(),
            error_deg: e.combined.to_degrees(),
            tie_error_deg: worst.to_degrees(),
            precision: m.precision,
            recall: m.recall,
            correct: m.correct,
            success: m.success,
        }
    });
    let result = EstimateResult {
        mechanism: r.mechanism,
        score: r.score,
        pose: PoseRecord::from(&r.pose),
        params: r.params,
        phi_range: r.phi_range,
        inliers,
        matching_cardinality: r.diagnostics.matching_cardinality,
        ties: r.ties.len(),
        tie_overflow: r.tie_overflow,
        cells_evaluated: r.cells_evaluated,
        cells_total: grid.num_cells(),
        timing: Timing { load_s, assign_s, search_s },
        truth,
        warnings: problem.warnings.clone(),
    };
    eprintln!(
        "{} score {:.6} with {} inliers, {} tied hypotheses, {:.2} s search",
        result.mechanism,
        result.score,
        result.inliers.len(),
        result.ties,
        search_s
    );
    if let Some(t) = &result.truth {
        eprintln!(
            "error vs truth: rotation {:.3} deg, translation {:.3} deg, worst tie {:.3} deg",
            t.rotation_error_deg, t.translation_error_deg, t.tie_error_deg
        );
    }
    sink.json(&Record { command: "estimate", config: run, params: file, result })
}

#[derive(Debug, Serialize)]
struct EdgeProbability {
    i: usize,
    j: usize,
    similarity: f64,
    p: f64,
}

#[derive(Debug, Serialize)]
struct AssignResult {
    edges: Vec<EdgeProbability>,
    left_totals: Vec<f64>,
    right_totals: Vec<f64>,
    reference: f64,
    iterations: usize,
    objective: f64,
    max_violation: f64,
}

pub fn assign(file: &Path, run: &RunConfig, sink: &Sink) -> CliResult<()> {
    echo("assign", run);
    let problem = load(file, run)?;
    let g = &problem.graph;
    let a = assign_marginals(g, &run.assignment_config()?)?;
    let result = AssignResult {
        edges: g
            .edges()
            .iter()
            .zip(&a.probs)
            .map(|(e, &p)| EdgeProbability { i: e.i, j: e.j, similarity: e.similarity, p })
            .collect(),
        max_violation: a.max_violation(run.p_x, run.p_y),
        objective: a.objective(),
        left_totals: a.left_totals,
        right_totals: a.right_totals,
        reference: a.reference,
        iterations: a.iterations,
    };
    eprintln!(
        "{} associations, reference probability {:.6}, {} iterations, max violation {:.2e}",
        result.edges.len(),
        result.reference,
        result.iterations,
        result.max_violation
    );
    sink.json(&Record { command: "assign", config: run, params: file, result })
}

/// The association file carries no run settings, so the scene settings go to stderr only.
pub fn simulate(scene: &SceneArgs, run: &RunConfig, sink: &Sink) -> CliResult<()> {
    echo("simulate", run);
    let s = generate_scene(&scene.scene_config(run.seed))?;
    eprintln!(
        "scene {}: {} + {} features, {} associations, {} true matches",
        serde_json::to_string(&s.config).expect("configs always serialize"),
        s.graph.left().len(),
        s.graph.right().len(),
        s.graph.edges().len(),
        s.truth.matches().len()
    );
    sink.text(&AssociationFile::from_graph(&s.graph, Some(&s.truth)).to_json())
}

#[derive(Debug, Serialize)]
struct DiscretizationResult {
    n: usize,
    trials: usize,
    max_rotation_deg: f64,
    max_translation_deg: f64,
    median_rotation_deg: f64,
    median_translation_deg: f64,
    /// `(bin start, count)`, degrees.
    rotation_histogram: Vec<(f64, usize)>,
    translation_histogram: Vec<(f64, usize)>,
}

fn median(v: &[f64]) -> f64 {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

fn degrees(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.to_degrees()).collect()
}

pub fn discretize_error(trials: usize, bin_deg: f64, run: &RunConfig, sink: &Sink) -> CliResult<()> {
    echo("discretize-error", run);
    if trials == 0 || !(bin_deg > 0.0) {
        return Err(CliError::Usage("need --trials > 0 and --bin-deg > 0".into()));
    }
    let grid = discretize(run.grid_n)?;
    let r = discretization_mc(&grid, trials, run.seed);
    let (rot, tr) = (degrees(&r.rotation), degrees(&r.translation));
    let result = DiscretizationResult {
        n: r.n,
        trials,
        max_rotation_deg: r.max_rotation.to_degrees(),
        max_translation_deg: r.max_translation.to_degrees(),
        median_rotation_deg: median(&rot),
        median_translation_deg: median(&tr),
        rotation_histogram: histogram(&rot, bin_deg),
        translation_histogram: histogram(&tr, bin_deg),
    };
    eprintln!(
        "N={} over {} poses: max rotation {:.3} deg, max translation {:.3} deg",
        result.n, trials, result.max_rotation_deg, result.max_translation_deg
    );
    let mut rows = Vec::new();
    for (name, h) in [("rotation", &result.rotation_histogram), ("translation", &result.translation_histogram)] {
        rows.extend(h.iter().map(|&(b, c)| CsvRow::new(name, b, c as f64)));
    }
    sink.series(&rows)?;
    #[derive(Serialize)]
    struct P {
        trials: usize,
        bin_deg: f64,
    }
    sink.json(&Record { command: "discretize-error", config: run, params: P { trials, bin_deg }, result })
}

pub fn bench(features: usize, inliers: &[usize], trials: usize, run: &RunConfig, sink: &Sink) -> CliResult<()> {
    echo("bench", run);
    let rows = eval_time_bench(features, inliers, trials, run.seed)?;
    for r in &rows {
        eprintln!(
            "{:>5} inliers: MCM {:>10.0} ns, HCM {:>8.0} ns, ratio {:.1}",
            r.inliers,
            r.mcm_median_ns,
            r.hcm_median_ns,
            r.mcm_median_ns / r.hcm_median_ns
        );
    }
    let mut series = Vec::new();
    for r in &rows {
        series.push(CsvRow::new("mcm_median_ns", r.inliers as f64, r.mcm_median_ns));
        series.push(CsvRow::new("hcm_median_ns", r.inliers as f64, r.hcm_median_ns));
    }
    sink.series(&series)?;
    #[derive(Serialize)]
    struct P<'a> {
        features: usize,
        inliers: &'a [usize],
        trials: usize,
    }
    sink.json(&Record { command: "bench", config: run, params: P { features, inliers, trials }, result: rows })
}

fn check_thresholds(thresholds: &[f64]) -> CliResult<()> {
    if thresholds.is_empty() || thresholds.iter().any(|t| !(*t > 0.0)) {
        return Err(CliError::Usage("thresholds must be positive".into()));
    }
    Ok(())
}

fn scenes(n: usize, scene: &SceneArgs, seed: u64) -> CliResult<Vec<SyntheticScene>> {
    if n == 0 {
        return Err(CliError::Usage("need --scenes > 0".into()));
    }
    (0..n as u64).map(|s| Ok(generate_scene(&scene.scene_config(seed + s))?)).collect()
}

#[derive(Debug, Serialize)]
struct AucEntry {
    threshold_deg: f64,
    auc: f64,
}

#[derive(Debug, Serialize)]
struct MechanismSummary {
    mechanism: String,
    errors_deg: Vec<f64>,
    median_error_deg: f64,
    auc: Vec<AucEntry>,
}

fn summarize(mechanism: String, errors_deg: Vec<f64>, thresholds: &[f64]) -> MechanismSummary {
    let auc = pose_auc(&errors_deg, thresholds)
        .into_iter()
        .zip(thresholds)
        .map(|(auc, &threshold_deg)| AucEntry { threshold_deg, auc })
        .collect();
    MechanismSummary { mechanism, median_error_deg: median(&errors_deg), errors_deg, auc }
}

#[derive(Debug, Serialize)]
struct RecordMetrics {
    records: usize,
    pose: MechanismSummary,
    mean_precision: f64,
    mean_recall: f64,
    success_rate: f64,
}

pub fn metrics(
    records: &[PathBuf],
    n_scenes: usize,
    thresholds: &[f64],
    scene: &SceneArgs,
    run: &RunConfig,
    sink: &Sink,
) -> CliResult<()> {
    echo("metrics", run);
    check_thresholds(thresholds)?;
    let mut series = Vec::new();
    if !records.is_empty() {
        let mut truths = Vec::new();
        for path in records {
            let text = output::read(path)?;
            let rec: RecordIn = serde_json::from_str(&text).map_err(|e| {
                Error::InvalidFile { location: format!("{} line {}", path.display(), e.line()), message: e.to_string() }
            })?;
            let t = rec.result.truth.ok_or_else(|| Error::InvalidFile {
                location: path.display().to_string(),
                message: "estimate record has no ground-truth report".into(),
            })?;
            truths.push(t);
        }
        let n = truths.len() as f64;
        let errors = truths.iter().map(|t| t.error_deg).collect();
        let result = RecordMetrics {
            records: truths.len(),
            pose: summarize("records".into(), errors, thresholds),
            mean_precision: truths.iter().map(|t| t.precision).sum::<f64>() / n,
            mean_recall: truths.iter().map(|t| t.recall).sum::<f64>() / n,
            success_rate: truths.iter().filter(|t| t.success).count() as f64 / n,
        };
        for a in &result.pose.auc {
            series.push(CsvRow::new("records", a.threshold_deg, a.auc));
            eprintln!("AUC@{} deg: {:.4}", a.threshold_deg, a.auc);
        }
        sink.series(&series)?;
        return sink.json(&Record { command: "metrics", config: run, params: records, result });
    }

    let cfg = run.mechanism_config()?;
    let grid = discretize(run.grid_n)?;
    let scenes = scenes(n_scenes, scene, run.seed)?;
    let mut errors: [Vec<f64>; 3] = Default::default();
    let mut names = [String::new(), String::new(), String::new()];
    for s in &scenes {
        let outcomes = compare_mechanisms(s, &cfg, &grid, &search_options(run))?;
        for (k, o) in outcomes.iter().enumerate() {
            names[k] = o.mechanism.name().to_string();
            errors[k].push(o.error.to_degrees());
        }
    }
    let result: Vec<MechanismSummary> =
        names.into_iter().zip(errors).map(|(m, e)| summarize(m, e, thresholds)).collect();
    for m in &result {
        let aucs: Vec<String> = m.auc.iter().map(|a| format!("@{} {:.4}", a.threshold_deg, a.auc)).collect();
        eprintln!("{:>8}: median error {:.3} deg, AUC {}", m.mechanism, m.median_error_deg, aucs.join(" "));
        series.extend(m.auc.iter().map(|a| CsvRow::new(m.mechanism.clone(), a.threshold_deg, a.auc)));
    }
    sink.series(&series)?;
    #[derive(Serialize)]
    struct P<'a> {
        scenes: usize,
        thresholds: &'a [f64],
        scene: &'a SceneArgs,
    }
    sink.json(&Record { command: "metrics", config: run, params: P { scenes: n_scenes, thresholds, scene }, result })
}

#[derive(Debug, Deserialize)]
struct RecordIn {
    result: EstimateResult,
}

#[derive(Debug, Serialize)]
struct SweepEntry {
    p: f64,
    c: f64,
    errors_deg: Vec<f64>,
    auc: Vec<AucEntry>,
}

pub fn sweep(
    p_values: &[f64],
    n_scenes: usize,
    thresholds: &[f64],
    scene: &SceneArgs,
    run: &RunConfig,
    sink: &Sink,
) -> CliResult<()> {
    echo("sweep", run);
    check_thresholds(thresholds)?;
    if p_values.is_empty() || p_values.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(CliError::Usage("p values must lie in (0, 1)".into()));
    }
    let grid = discretize(run.grid_n)?;
    let scenes = scenes(n_scenes, scene, run.seed)?;
    let radians: Vec<f64> = thresholds.iter().map(|t| t.to_radians()).collect();
    let rows = sensitivity_sweep(
        &scenes,
        p_values,
        run.epsilon_deg.to_radians(),
        run.outlier_range_deg.to_radians(),
        &grid,
        &search_options(run),
        &radians,
    )?;
    let mut series = Vec::new();
    let result: Vec<SweepEntry> = rows
        .into_iter()
        .map(|r| SweepEntry {
            p: r.p,
            c: r.c,
            errors_deg: degrees(&r.errors),
            auc: r.auc.iter().zip(thresholds).map(|(&auc, &threshold_deg)| AucEntry { threshold_deg, auc }).collect(),
        })
        .collect();
    for e in &result {
        let aucs: Vec<String> = e.auc.iter().map(|a| format!("@{} {:.4}", a.threshold_deg, a.auc)).collect();
        eprintln!("p {:<5} C {:>8.3}: AUC {}", e.p, e.c, aucs.join(" "));
        series.extend(e.auc.iter().map(|a| CsvRow::new(e.p.to_string(), a.threshold_deg, a.auc)));
    }
    sink.series(&series)?;
    #[derive(Serialize)]
    struct P<'a> {
        p_values: &'a [f64],
        scenes: usize,
        thresholds: &'a [f64],
        scene: &'a SceneArgs,
    }
    sink.json(&Record {
        command: "sweep",
        config: run,
        params: P { p_values, scenes: n_scenes, thresholds, scene },
        result,
    })
}
