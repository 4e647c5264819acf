use crate::manifest::{write_manifest, RunManifest};
use anyhow::{bail, Context};
use clap::ValueEnum;
use ono::data::{generate_darcy2d, generate_poisson1d, load_dataset, split_indices, DarcyParams, PoissonParams};
use ono::data::Dataset;
use ono::diagnostics::{bench_layer_forward, grad_check_scope, linear_fit, GradScope, GRAD_CHECK_EPS, GRAD_CHECK_TOL};
use ono::eigen::{recover_eigenfunctions, AnalyticKernel, RecoveryConfig};
use ono::model::OnoModel;
use ono::training::{
    evaluate, load_checkpoint, save_checkpoint, train, Checkpoint, CheckpointMeta, RunConfig, SuperResMode, TrainOptions,
};
use serde::{Deserialize, Serialize};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Problem {
    #[value(name = "darcy2d")]
    Darcy2d,
    #[value(name = "poisson1d")]
    Poisson1d,
}

/// Which samples of a dataset to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SplitSel {
    All,
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateJob {
    pub problem: Problem,
    pub n: usize,
    pub resolution: usize,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainJob {
    pub data: PathBuf,
    /// Config file and flags merged, channel counts taken from the data.
    pub run: RunConfig,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalJob {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub mode: SuperResMode,
    pub input_factor: usize,
    pub split: SplitSel,
    pub report: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuperResJob {
    pub checkpoint: PathBuf,
    pub train_res: usize,
    pub eval_res_list: Vec<usize>,
    pub modes: Vec<SuperResMode>,
    pub data: Option<PathBuf>,
    pub n: usize,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyEigenJob {
    pub kernel: AnalyticKernel,
    pub recovery: RecoveryConfig,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradCheckJob {
    pub scope: GradScope,
    pub trials: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchJob {
    pub m_list: Vec<usize>,
    pub k: usize,
    pub reps: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

/// A fully resolved invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "subcommand", content = "config", rename_all = "kebab-case")]
pub enum Job {
    GenerateData(GenerateJob),
    Train(TrainJob),
    Eval(EvalJob),
    SuperRes(SuperResJob),
    VerifyEigen(VerifyEigenJob),
    GradCheck(GradCheckJob),
    BenchLinear(BenchJob),
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = OsString::from(path.as_os_str());
    s.push(suffix);
    PathBuf::from(s)
}

impl Job {
    pub fn seed(&self) -> Option<u64> {
        match self {
            Job::GenerateData(j) => Some(j.seed),
            Job::Train(j) => Some(j.run.train.seed),
            Job::Eval(_) => None,
            Job::SuperRes(j) => j.data.is_none().then_some(j.seed),
            Job::VerifyEigen(j) => Some(j.recovery.seed),
            Job::GradCheck(j) => Some(j.seed),
            Job::BenchLinear(j) => Some(j.seed),
        }
    }

    pub fn artifacts(&self) -> Vec<PathBuf> {
        match self {
            Job::GenerateData(j) => vec![j.out.clone()],
            Job::Train(j) => ["metrics.csv", "best.onoc", "final.onoc"]
                .iter()
                .map(|f| j.out_dir.join(f))
                .collect(),
            Job::Eval(j) => vec![j.report.clone()],
            Job::SuperRes(j) => vec![j.out.clone()],
            Job::VerifyEigen(j) => j.out.iter().cloned().collect(),
            Job::GradCheck(j) => j.out.iter().cloned().collect(),
            Job::BenchLinear(j) => j.out.iter().cloned().collect(),
        }
    }

    /// Where the manifest goes: `manifest.json` inside an output directory,
    /// `<out>.manifest.json` next to an output file, nowhere without an output.
    pub fn manifest_path(&self) -> Option<PathBuf> {
        match self {
            Job::Train(j) => Some(j.out_dir.join("manifest.json")),
            Job::GenerateData(GenerateJob { out, .. })
            | Job::Eval(EvalJob { report: out, .. })
            | Job::SuperRes(SuperResJob { out, .. }) => Some(sibling(out, ".manifest.json")),
            Job::VerifyEigen(VerifyEigenJob { out, .. })
            | Job::GradCheck(GradCheckJob { out, .. })
            | Job::BenchLinear(BenchJob { out, .. }) => out.as_deref().map(|o| sibling(o, ".manifest.json")),
        }
    }
}

pub fn read_run_config(path: &Path) -> anyhow::Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

pub fn load_data(path: &Path) -> anyhow::Result<Dataset> {
    load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

pub fn load_ckpt(path: &Path) -> anyhow::Result<Checkpoint> {
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

/// Input stride that maps the dataset grid onto a grid with `train_nx` points per side.
pub fn grid_ratio(data: &Dataset, train_nx: Option<usize>) -> anyhow::Result<usize> {
    let (Some(g), Some(t)) = (data.mesh.grid, train_nx) else {
        return Ok(1);
    };
    if t < 2 || g.nx < t || (g.nx - 1) % (t - 1) != 0 {
        bail!("a {}-point grid does not restrict to the {t}-point training grid", g.nx);
    }
    Ok((g.nx - 1) / (t - 1))
}

fn generate(problem: Problem, n: usize, resolution: usize, seed: u64) -> anyhow::Result<Dataset> {
    Ok(match problem {
        Problem::Darcy2d => generate_darcy2d(n, resolution, seed, &DarcyParams::default())?,
        Problem::Poisson1d => generate_poisson1d(n, resolution, seed, &PoissonParams::default())?,
    })
}

/// Runs a job; `Ok(false)` means the job ran but its check failed.
pub fn execute(job: Job) -> anyhow::Result<bool> {
    if let Job::Train(j) = &job {
        std::fs::create_dir_all(&j.out_dir).with_context(|| format!("creating {}", j.out_dir.display()))?;
    }
    if let Some(path) = job.manifest_path() {
        write_manifest(&path, &RunManifest::new(job.clone()))?;
    }
    match job {
        Job::GenerateData(j) => {
            let data = generate(j.problem, j.n, j.resolution, j.seed)?;
            ono::data::save_dataset(&data, &j.out).with_context(|| format!("writing {}", j.out.display()))?;
            println!("wrote {} samples on {} points to {}", data.len(), data.mesh.len(), j.out.display());
            Ok(true)
        }
        Job::Train(j) => run_train(&j),
        Job::Eval(j) => run_eval(&j),
        Job::SuperRes(j) => run_super_res(&j),
        Job::VerifyEigen(j) => {
            let report = recover_eigenfunctions(&j.kernel, &j.recovery)?;
            let csv = report.to_csv();
            if let Some(out) = &j.out {
                std::fs::write(out, &csv).with_context(|| format!("writing {}", out.display()))?;
            }
            print!("{csv}");
            let angles: Vec<String> = report.principal_angles_deg.iter().map(|a| format!("{a:.3}")).collect();
            println!("principal angles (deg): {}", angles.join(" "));
            println!("final loss: {:.6e}", report.final_loss);
            Ok(true)
        }
        Job::GradCheck(j) => {
            if j.trials == 0 {
                bail!("--trials must be positive");
            }
            let report = grad_check_scope(j.scope, j.trials, j.seed)?;
            if let Some(out) = &j.out {
                std::fs::write(out, report.to_csv()).with_context(|| format!("writing {}", out.display()))?;
            }
            for e in &report.entries {
                println!("trial {} {}: {:.3e}", e.trial, e.name, e.max_rel_error);
            }
            println!(
                "max relative error: {:.3e} (eps {GRAD_CHECK_EPS:e}, tolerance {GRAD_CHECK_TOL:e})",
                report.max_rel_error()
            );
            Ok(report.passed())
        }
        Job::BenchLinear(j) => {
            let points = bench_layer_forward(&j.m_list, j.k, j.reps, j.seed)?;
            let mut csv = String::from("m,seconds\n");
            for p in &points {
                csv.push_str(&format!("{},{}\n", p.m, p.seconds));
            }
            if let Some(out) = &j.out {
                std::fs::write(out, &csv).with_context(|| format!("writing {}", out.display()))?;
            }
            print!("{csv}");
            if points.len() >= 2 {
                let fit = linear_fit(&points)?;
                println!(
                    "fit: {:.3e} + {:.3e}·M s, max relative residual {:.3}",
                    fit.intercept, fit.slope, fit.max_rel_residual
                );
            }
            Ok(true)
        }
    }
}

fn run_train(j: &TrainJob) -> anyhow::Result<bool> {
    let data = load_data(&j.data)?;
    let mut model = OnoModel::new(j.run.model.clone())?;
    let split = split_indices(data.len(), j.run.train.seed);
    let metrics = j.out_dir.join("metrics.csv");
    let best = j.out_dir.join("best.onoc");
    let outcome = train(
        &mut model,
        &data,
        &split,
        &j.run.train,
        &TrainOptions {
            metrics_csv: Some(&metrics),
            best_checkpoint: Some(&best),
        },
    )?;
    let meta = CheckpointMeta {
        epoch: outcome.history.last().map_or(0, |m| m.epoch),
        step: outcome.optimizer.step,
        best_val: outcome.best_val,
        train_grid: data.mesh.grid,
        train: j.run.train.clone(),
    };
    save_checkpoint(&j.out_dir.join("final.onoc"), &model, &outcome.optimizer, &meta)?;
    for m in &outcome.history {
        println!(
            "epoch {:>3}  lr {:.3e}  train {:.5}  val {:.5}",
            m.epoch, m.lr, m.train_rel_l2, m.val_rel_l2
        );
    }
    if let (Some(v), Some(e)) = (outcome.best_val, outcome.best_epoch) {
        println!("best val {v:.5} at epoch {e}");
    }
    if !split.test.is_empty() {
        let test = evaluate(&model, &data, &split.test, SuperResMode::Direct, 1)?;
        println!("test mean {:.5} median {:.5}", test.mean, test.median);
    }
    if outcome.skipped_steps > 0 {
        log::warn!("{} steps skipped for non-finite gradients", outcome.skipped_steps);
    }
    Ok(true)
}

fn run_eval(j: &EvalJob) -> anyhow::Result<bool> {
    let ckpt = load_ckpt(&j.checkpoint)?;
    let data = load_data(&j.data)?;
    let indices: Vec<usize> = match j.split {
        SplitSel::All => (0..data.len()).collect(),
        sel => {
            let s = split_indices(data.len(), ckpt.meta.train.seed);
            match sel {
                SplitSel::Train => s.train,
                SplitSel::Val => s.val,
                _ => s.test,
            }
        }
    };
    let report = evaluate(&ckpt.model, &data, &indices, j.mode, j.input_factor)?;
    std::fs::write(&j.report, report.to_csv()).with_context(|| format!("writing {}", j.report.display()))?;
    println!("mean {:.6} median {:.6} over {} samples", report.mean, report.median, indices.len());
    Ok(true)
}

fn run_super_res(j: &SuperResJob) -> anyhow::Result<bool> {
    if j.eval_res_list.is_empty() {
        bail!("--eval-res-list is empty");
    }
    let ckpt = load_ckpt(&j.checkpoint)?;
    let data = match &j.data {
        Some(path) => load_data(path)?,
        None => {
            let problem = match ckpt.model.config.coord_dim {
                1 => Problem::Poisson1d,
                2 => Problem::Darcy2d,
                d => bail!("no generator for {d}-dimensional meshes; pass --data"),
            };
            let finest = j.eval_res_list.iter().copied().chain([j.train_res]).max().unwrap_or(j.train_res);
            generate(problem, j.n, finest, j.seed)?
        }
    };
    let Some(grid) = data.mesh.grid else {
        bail!("super-resolution needs data on a regular grid");
    };
    let all: Vec<usize> = (0..data.len()).collect();
    let mut csv = String::from("resolution,mode,mean_rel_l2,median_rel_l2\n");
    for &r in &j.eval_res_list {
        if r < 2 || r > grid.nx || (grid.nx - 1) % (r - 1) != 0 {
            bail!("resolution {r} is not a restriction of the {}-point data grid", grid.nx);
        }
        let level = if r == grid.nx {
            data.clone()
        } else {
            data.subsample((grid.nx - 1) / (r - 1))?
        };
        for &mode in &j.modes {
            let factor = match mode {
                SuperResMode::Direct => 1,
                SuperResMode::Query => grid_ratio(&level, Some(j.train_res))?,
            };
            let rep = evaluate(&ckpt.model, &level, &all, mode, factor)?;
            csv.push_str(&format!("{r},{mode},{},{}\n", rep.mean, rep.median));
        }
    }
    std::fs::write(&j.out, &csv).with_context(|| format!("writing {}", j.out.display()))?;
    print!("{csv}");
    Ok(true)
}
