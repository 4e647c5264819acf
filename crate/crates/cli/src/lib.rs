//! `ono` command-line front end.
//!
//! Every subcommand is first resolved into a [`Job`] with all defaults filled
//! in. The job is written to a [`RunManifest`] next to the outputs before any
//! work starts, and `ono --manifest <path>` runs the recorded job again.

use clap::{Args, Parser, Subcommand, ValueEnum};
use ono::eigen::AnalyticKernel;
use ono::training::{RunConfig, SuperResMode};
use std::ffi::OsString;
use std::path::PathBuf;

mod jobs;
mod manifest;

pub use jobs::{
    BenchJob, EvalJob, GenerateJob, GradCheckJob, Job, Problem, SplitSel, SuperResJob, TrainJob, VerifyEigenJob,
};
pub use manifest::{read_manifest, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "ono", version, about = "Orthogonal neural operators: data, training, evaluation and checks")]
struct Cli {
    /// Replay the job recorded in a run manifest.
    #[arg(long, global = true, value_name = "PATH")]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a synthetic dataset and write it in the ONOD format.
    GenerateData(GenerateArgs),
    /// Train a model; writes metrics.csv, best.onoc, final.onoc and manifest.json.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Relative L2 of a checkpoint across evaluation resolutions.
    SuperRes(SuperResArgs),
    /// Learn kernel eigenfunctions and compare them with the discretized spectrum.
    VerifyEigen(VerifyEigenArgs),
    /// Compare reverse-mode gradients with central differences.
    GradCheck(GradCheckArgs),
    /// Time one orthogonal-attention stage against the mesh size.
    BenchLinear(BenchArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    problem: Problem,
    #[arg(long)]
    n: usize,
    /// Grid points per side.
    #[arg(long)]
    resolution: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// JSON file with `model` and `train` sections; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Seeds initialization, the split and the batch order.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    feature_width: Option<usize>,
    #[arg(long)]
    eigen_count: Option<usize>,
    /// Drop the 1/M factor in the attention contraction.
    #[arg(long)]
    no_attn_normalization: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Direct,
    Query,
}

impl From<ModeArg> for SuperResMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Direct => Self::Direct,
            ModeArg::Query => Self::Query,
        }
    }
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Direct)]
    superres_mode: ModeArg,
    /// Stride of the input grid in query mode; defaults to the ratio of the
    /// data grid to the training grid.
    #[arg(long)]
    input_factor: Option<usize>,
    /// Samples to evaluate, using the split of the checkpoint's training seed.
    #[arg(long, value_enum, default_value_t = SplitSel::All)]
    split: SplitSel,
    /// Per-sample CSV `index,rel_l2`.
    #[arg(long)]
    report: PathBuf,
}

#[derive(Debug, Args)]
struct SuperResArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Grid points per side used in training; read from the checkpoint when omitted.
    #[arg(long)]
    train_res: Option<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    eval_res_list: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [ModeArg::Direct, ModeArg::Query])]
    modes: Vec<ModeArg>,
    /// Dataset on the finest evaluation grid; generated when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Samples to generate when no dataset is given.
    #[arg(long, default_value_t = 20)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// CSV `resolution,mode,mean_rel_l2,median_rel_l2`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct VerifyEigenArgs {
    /// `min`, `rbf` or `rbf:<length scale>`.
    #[arg(long, default_value = "min", value_parser = parse_kernel)]
    kernel: AnalyticKernel,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 256)]
    grid: usize,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 32)]
    width: usize,
    #[arg(long, default_value_t = 3e-3)]
    lr: f64,
    /// Sampled white-noise functions per step instead of the exact expectation.
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report CSV; nothing is written without it.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_kernel(s: &str) -> Result<AnalyticKernel, ono::Error> {
    s.parse()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScopeArg {
    Primitive,
    Layer,
    Model,
}

impl From<ScopeArg> for ono::diagnostics::GradScope {
    fn from(s: ScopeArg) -> Self {
        match s {
            ScopeArg::Primitive => Self::Primitive,
            ScopeArg::Layer => Self::Layer,
            ScopeArg::Model => Self::Model,
        }
    }
}

#[derive(Debug, Args)]
struct GradCheckArgs {
    #[arg(long, value_enum, default_value_t = ScopeArg::Model)]
    scope: ScopeArg,
    #[arg(long, default_value_t = 3)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV of per-check errors; nothing is written without it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [256usize, 512, 1024, 2048])]
    m_list: Vec<usize>,
    #[arg(long, default_value_t = 16)]
    k: usize,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV `m,seconds`; nothing is written without it.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn resolve(cmd: Command) -> anyhow::Result<Job> {
    Ok(match cmd {
        Command::GenerateData(a) => Job::GenerateData(GenerateJob {
            problem: a.problem,
            n: a.n,
            resolution: a.resolution,
            seed: a.seed,
            out: a.out,
        }),
        Command::Train(a) => {
            let mut run = match &a.config {
                Some(path) => jobs::read_run_config(path)?,
                None => RunConfig::default(),
            };
            if let Some(v) = a.epochs {
                run.train.epochs = v;
            }
            if let Some(v) = a.batch_size {
                run.train.batch_size = v;
            }
            if let Some(v) = a.seed {
                run.model.seed = v;
                run.train.seed = v;
            }
            if let Some(v) = a.lr {
                run.train.max_lr = v;
            }
            if let Some(v) = a.layers {
                run.model.layers = v;
            }
            if let Some(v) = a.width {
                run.model.width = v;
            }
            if let Some(v) = a.feature_width {
                run.model.feature_width = v;
            }
            if let Some(v) = a.eigen_count {
                run.model.eigen_count = v;
            }
            if a.no_attn_normalization {
                run.model.attn_normalization = false;
            }
            let data = jobs::load_data(&a.data)?;
            run.model.coord_dim = data.mesh.dim();
            run.model.in_channels = data.f_channels;
            run.model.out_channels = data.u_channels;
            Job::Train(TrainJob {
                data: a.data,
                run,
                out_dir: a.out_dir,
            })
        }
        Command::Eval(a) => {
            let mode = a.superres_mode.into();
            let input_factor = match (a.input_factor, mode) {
                (Some(f), _) => f,
                (None, SuperResMode::Direct) => 1,
                (None, SuperResMode::Query) => {
                    let ckpt = jobs::load_ckpt(&a.checkpoint)?;
                    let data = jobs::load_data(&a.data)?;
                    jobs::grid_ratio(&data, ckpt.meta.train_grid.map(|g| g.nx))?
                }
            };
            Job::Eval(EvalJob {
                checkpoint: a.checkpoint,
                data: a.data,
                mode,
                input_factor,
                split: a.split,
                report: a.report,
            })
        }
        Command::SuperRes(a) => {
            let train_res = match a.train_res {
                Some(r) => r,
                None => jobs::load_ckpt(&a.checkpoint)?
                    .meta
                    .train_grid
                    .map(|g| g.nx)
                    .ok_or_else(|| anyhow::anyhow!("checkpoint has no training grid; pass --train-res"))?,
            };
            Job::SuperRes(SuperResJob {
                checkpoint: a.checkpoint,
                train_res,
                eval_res_list: a.eval_res_list,
                modes: a.modes.into_iter().map(Into::into).collect(),
                data: a.data,
                n: a.n,
                seed: a.seed,
                out: a.out,
            })
        }
        Command::VerifyEigen(a) => Job::VerifyEigen(VerifyEigenJob {
            kernel: a.kernel,
            recovery: ono::eigen::RecoveryConfig {
                grid: a.grid,
                width: a.width,
                k: a.k,
                steps: a.steps,
                batch: a.batch,
                lr: a.lr,
                seed: a.seed,
            },
            out: a.out,
        }),
        Command::GradCheck(a) => Job::GradCheck(GradCheckJob {
            scope: a.scope.into(),
            trials: a.trials,
            seed: a.seed,
            out: a.out,
        }),
        Command::BenchLinear(a) => Job::BenchLinear(BenchJob {
            m_list: a.m_list,
            k: a.k,
            reps: a.reps,
            seed: a.seed,
            out: a.out,
        }),
    })
}

/// Parses `argv` (program name first) and runs it.
///
/// Returns 0 on success, 1 on a runtime failure (including a failed check)
/// and 2 on a usage error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let job = match (cli.manifest, cli.command) {
        (Some(_), Some(_)) => {
            eprintln!("error: --manifest replays a recorded run and takes no subcommand");
            return 2;
        }
        (None, None) => {
            eprintln!("error: a subcommand or --manifest is required\n\nFor more information, try '--help'.");
            return 2;
        }
        (None, Some(cmd)) => match resolve(cmd) {
            Ok(job) => job,
            Err(e) => {
                eprintln!("error: {e:#}");
                return 1;
            }
        },
        (Some(path), None) => match read_manifest(&path) {
            Ok(m) => {
                if m.tool_version != env!("CARGO_PKG_VERSION") {
                    log::warn!("manifest written by version {}, running {}", m.tool_version, env!("CARGO_PKG_VERSION"));
                }
                m.job
            }
            Err(e) => {
                eprintln!("error: {e:#}");
                return 1;
            }
        },
    };
    match jobs::execute(job) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
