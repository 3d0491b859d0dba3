//! `hcm`: relative pose estimation and evaluation from the command line.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hcm_core::{Mechanism, RunConfig};
use serde::Serialize;

/// Exit codes.
const EXIT_USAGE: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_EMPTY: u8 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Core(#[from] hcm_core::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use hcm_core::Error as E;
        match self {
            CliError::Usage(_) | CliError::Core(E::InvalidConfig(_)) => EXIT_USAGE,
            CliError::Core(E::EmptyGraph) => EXIT_EMPTY,
            CliError::Core(E::NotConverged { .. } | E::DegenerateAssignment { .. }) => EXIT_NUMERICAL,
            CliError::Io { .. } | CliError::Core(_) => EXIT_INPUT,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "hcm", version, about = "Relative pose under many-to-many feature association")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate the relative pose from an association file.
    Estimate {
        file: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Assign per-association probabilities.
    Assign {
        file: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Write a synthetic scene as an association file with ground truth.
    Simulate {
        #[command(flatten)]
        scene: SceneArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Pose error caused by snapping to the search grid.
    DiscretizeError {
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        /// Histogram bin width, degrees.
        #[arg(long, default_value_t = 0.5)]
        bin_deg: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Time the post-inlier scoring of MCM and HCM.
    Bench {
        #[arg(long, default_value_t = 256)]
        features: usize,
        #[arg(long, value_delimiter = ',', default_value = "128,256,512,1024")]
        inliers: Vec<usize>,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Pose AUC and association quality, from estimate records or from a
    /// mechanism comparison on synthetic scenes.
    Metrics {
        /// Estimate records; without any, synthetic scenes are generated.
        records: Vec<PathBuf>,
        #[arg(long, default_value_t = 10)]
        scenes: usize,
        /// AUC thresholds, degrees.
        #[arg(long, value_delimiter = ',', default_value = "5,10,20")]
        thresholds: Vec<f64>,
        #[command(flatten)]
        scene: SceneArgs,
        #[command(flatten)]
        common: Common,
    },
    /// HCM accuracy as the prior inlier probability varies.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "0.01,0.05,0.1,0.2,0.3,0.5,0.7")]
        p_values: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        scenes: usize,
        #[arg(long, value_delimiter = ',', default_value = "5,10,20")]
        thresholds: Vec<f64>,
        #[command(flatten)]
        scene: SceneArgs,
        #[command(flatten)]
        common: Common,
    },
}

/// Run settings and output options shared by every command.
#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the JSON record here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a CSV series (parameter, threshold_or_bin, value).
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    epsilon_deg: Option<f64>,
    #[arg(long)]
    outlier_range_deg: Option<f64>,
    #[arg(long)]
    p_x: Option<f64>,
    #[arg(long)]
    p_y: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    min_sim: Option<f64>,
    #[arg(long)]
    grid_n: Option<usize>,
    #[arg(long, value_parser = parse_mechanism)]
    mechanism: Option<Mechanism>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    max_associations: Option<usize>,
}

fn parse_mechanism(s: &str) -> Result<Mechanism, String> {
    s.parse().map_err(|e: hcm_core::Error| e.to_string())
}

#[derive(Debug, Clone, Copy, Args, Serialize)]
pub struct SceneArgs {
    #[arg(long, default_value_t = 60)]
    pub points: usize,
    #[arg(long, default_value_t = 0.1)]
    pub outlier_fraction: f64,
    #[arg(long, default_value_t = 2)]
    pub ambiguity: usize,
    #[arg(long, default_value_t = 0.0)]
    pub noise_deg: f64,
    #[arg(long, default_value_t = 120.0)]
    pub fov_deg: f64,
    #[arg(long, default_value_t = 30.0)]
    pub max_rotation_deg: f64,
    #[arg(long, default_value_t = 1.0)]
    pub min_depth: f64,
    #[arg(long, default_value_t = 2.5)]
    pub max_depth: f64,
}

impl SceneArgs {
    pub fn scene_config(&self, seed: u64) -> hcm_core::eval::SceneConfig {
        hcm_core::eval::SceneConfig {
            points: self.points,
            outlier_fraction: self.outlier_fraction,
            ambiguity: self.ambiguity,
            noise_deg: self.noise_deg,
            fov_deg: self.fov_deg,
            max_rotation_deg: self.max_rotation_deg,
            min_depth: self.min_depth,
            max_depth: self.max_depth,
            seed,
        }
    }
}

impl Common {
    /// Defaults, then the config file, then flags.
    fn resolve(&self) -> CliResult<RunConfig> {
        let mut run = match &self.config {
            Some(path) => {
                let text = output::read(path)?;
                serde_json::from_str(&text).map_err(|e| {
                    CliError::Usage(format!("{}: line {} column {}: {e}", path.display(), e.line(), e.column()))
                })?
            }
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { run.$f = v; })* };
        }
        set!(epsilon_deg, outlier_range_deg, p_x, p_y, k, min_sim, grid_n, mechanism, seed);
        if self.threads.is_some() {
            run.threads = self.threads;
        }
        if self.max_associations.is_some() {
            run.max_associations = self.max_associations;
        }
        run.validate()?;
        Ok(run)
    }

    fn sink(&self) -> output::Sink {
        output::Sink { out: self.out.clone(), csv: self.csv.clone() }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let common = match &cli.command {
        Command::Estimate { common, .. }
        | Command::Assign { common, .. }
        | Command::Simulate { common, .. }
        | Command::DiscretizeError { common, .. }
        | Command::Bench { common, .. }
        | Command::Metrics { common, .. }
        | Command::Sweep { common, .. } => common,
    };
    let run = common.resolve()?;
    if let Some(t) = run.threads {
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let sink = common.sink();
    match &cli.command {
        Command::Estimate { file, .. } => commands::estimate(file, &run, &sink),
        Command::Assign { file, .. } => commands::assign(file, &run, &sink),
        Command::Simulate { scene, .. } => commands::simulate(scene, &run, &sink),
        Command::DiscretizeError { trials, bin_deg, .. } => {
            commands::discretize_error(*trials, *bin_deg, &run, &sink)
        }
        Command::Bench { features, inliers, trials, .. } => {
            commands::bench(*features, inliers, *trials, &run, &sink)
        }
        Command::Metrics { records, scenes, thresholds, scene, .. } => {
            commands::metrics(records, *scenes, thresholds, scene, &run, &sink)
        }
        Command::Sweep { p_values, scenes, thresholds, scene, .. } => {
            commands::sweep(p_values, *scenes, thresholds, scene, &run, &sink)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
