//! Relative-L2 training with AdamW and a one-cycle schedule, evaluation, and checkpoints.

mod checkpoint;
mod optim;
mod schedule;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use optim::{clip_grad_norm, AdamConfig, AdamW};
pub use schedule::{onecycle_lr, ScheduleConfig};

use crate::attention::Mode;
use crate::autodiff::{Tape, Tensor, Var};
use crate::data::{Dataset, Split};
use crate::linalg::DenseMatrix;
use crate::model::{FieldInput, ModelConfig, OnoModel};
use crate::rng::indexed_stream;
use crate::{Error, Result};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

/// Targets with a smaller L2 norm make the relative error undefined.
pub const ZERO_TARGET_NORM: f64 = 1e-12;

pub const METRICS_HEADER: &str = "epoch,step,lr,train_rel_l2,val_rel_l2,wall_ms";

/// Optimization hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub max_lr: f64,
    pub pct_start: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm bound.
    pub clip_norm: f64,
    /// Seeds the split and the batch order.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            max_lr: 1e-3,
            pct_start: 0.3,
            div_factor: 25.0,
            final_div_factor: 1e4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 1e-4,
            clip_norm: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn schedule(&self, total_steps: usize) -> ScheduleConfig {
        ScheduleConfig {
            max_lr: self.max_lr,
            total_steps,
            pct_start: self.pct_start,
            div_factor: self.div_factor,
            final_div_factor: self.final_div_factor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::InvalidConfig("clip_norm must be positive".into()));
        }
        self.schedule(1).validate()
    }
}

/// Model and optimization settings together, as stored in config files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// `‖pred − target‖₂ / ‖target‖₂` over all entries.
pub fn relative_l2(pred: &DenseMatrix, target: &DenseMatrix) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let t = target.frobenius_norm();
    if t < ZERO_TARGET_NORM {
        return Err(Error::ZeroTarget);
    }
    Ok(pred.sub(target)?.frobenius_norm() / t)
}

/// Differentiable [`relative_l2`] against a constant target.
pub fn relative_l2_on_tape(tape: &mut Tape, pred: Var, target: &DenseMatrix) -> Result<Var> {
    let t = target.frobenius_norm();
    if t < ZERO_TARGET_NORM {
        return Err(Error::ZeroTarget);
    }
    let tv = tape.constant(Tensor::from(target.clone()))?;
    let diff = tape.sub(pred, tv)?;
    let sq = tape.square(diff)?;
    let s = tape.sum(sq)?;
    let n = tape.sqrt(s)?;
    Ok(tape.scale(n, 1.0 / t)?)
}

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub train_rel_l2: f64,
    /// NaN when there is no validation split.
    pub val_rel_l2: f64,
    pub wall_ms: u128,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch, self.step, self.lr, self.train_rel_l2, self.val_rel_l2, self.wall_ms
        )
    }
}

/// Where [`train`] writes its artifacts; `None` skips the artifact.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrainOptions<'a> {
    pub metrics_csv: Option<&'a Path>,
    pub best_checkpoint: Option<&'a Path>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub optimizer: AdamW,
    pub history: Vec<EpochMetrics>,
    pub best_val: Option<f64>,
    pub best_epoch: Option<usize>,
    /// Steps dropped because a gradient was not finite.
    pub skipped_steps: usize,
}

fn inputs<'a>(data: &'a Dataset, indices: &[usize]) -> Vec<FieldInput<'a>> {
    indices
        .iter()
        .map(|&i| FieldInput {
            points: &data.mesh.points,
            values: &data.samples[i].f,
        })
        .collect()
}

/// Fits every covariance buffer by training-mode passes over `indices`
/// without touching the parameters.
pub fn calibrate_buffers(model: &mut OnoModel, data: &Dataset, indices: &[usize], batch_size: usize) -> Result<()> {
    for chunk in indices.chunks(batch_size.max(1)) {
        let mut tape = Tape::new();
        let p = model.params.bind(&mut tape, false)?;
        model.forward_batch(&mut tape, &p, &inputs(data, chunk), Mode::Train)?;
    }
    Ok(())
}

/// Minimizes the mean relative L2 over the training split.
///
/// The normalizer is fitted on the training split first. Each batch updates
/// the covariance buffers and then computes the loss on the same forward.
/// Validation runs in eval mode after every epoch, and the best-validation
/// state is checkpointed when a path is given.
pub fn train(
    model: &mut OnoModel,
    data: &Dataset,
    split: &Split,
    cfg: &TrainConfig,
    opts: &TrainOptions<'_>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    model.normalizer = data.fit_normalizer(&split.train);
    let steps_per_epoch = split.train.len().div_ceil(cfg.batch_size);
    let schedule = cfg.schedule(cfg.epochs * steps_per_epoch);
    let mut optimizer = AdamW::new(cfg.adam(), &model.params);
    let mut csv = match opts.metrics_csv {
        Some(path) => {
            let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
            writeln!(f, "{METRICS_HEADER}")?;
            f.flush()?;
            Some(f)
        }
        None => None,
    };
    let mut outcome = TrainOutcome {
        optimizer: optimizer.clone(),
        history: Vec::with_capacity(cfg.epochs),
        best_val: None,
        best_epoch: None,
        skipped_steps: 0,
    };
    let start = Instant::now();
    let mut step = 0usize;
    let mut lr = schedule.initial_lr();
    for epoch in 0..cfg.epochs {
        let mut order = split.train.clone();
        order.shuffle(&mut indexed_stream(cfg.seed, "batch-order", epoch as u64));
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            lr = onecycle_lr(&schedule, step)?;
            let mut tape = Tape::new();
            let p = model.params.bind(&mut tape, true)?;
            let preds = model.forward_batch(&mut tape, &p, &inputs(data, batch), Mode::Train)?;
            let mut losses = Vec::with_capacity(batch.len());
            for (&pred, &i) in preds.iter().zip(batch) {
                losses.push(relative_l2_on_tape(&mut tape, pred, &data.samples[i].u)?);
            }
            let mut total = losses[0];
            for &l in &losses[1..] {
                total = tape.add(total, l)?;
            }
            loss_sum += tape.value(total).data()[0];
            let mean = tape.scale(total, 1.0 / batch.len() as f64)?;
            let grads_all = tape.backward(mean)?;
            let mut grads: Vec<Tensor> = p
                .vars()
                .iter()
                .zip(model.params.iter())
                .map(|(&v, param)| {
                    grads_all
                        .get(v)
                        .cloned()
                        .unwrap_or_else(|| Tensor::zeros(param.value.shape()))
                })
                .collect();
            clip_grad_norm(&mut grads, cfg.clip_norm);
            match optimizer.step(&mut model.params, &grads, lr) {
                Ok(()) => {}
                Err(Error::NonFiniteGradient(name)) => {
                    log::warn!("epoch {epoch} step {step}: non-finite gradient in {name}, step skipped");
                    outcome.skipped_steps += 1;
                }
                Err(e) => return Err(e),
            }
            step += 1;
        }
        let train_rel_l2 = loss_sum / split.train.len() as f64;
        let val_rel_l2 = if split.val.is_empty() {
            f64::NAN
        } else {
            evaluate(model, data, &split.val, SuperResMode::Direct, 1)?.mean
        };
        let metrics = EpochMetrics {
            epoch,
            step: optimizer.step,
            lr,
            train_rel_l2,
            val_rel_l2,
            wall_ms: start.elapsed().as_millis(),
        };
        if let Some(f) = csv.as_mut() {
            writeln!(f, "{}", metrics.csv_row())?;
            f.flush()?;
        }
        let score = if split.val.is_empty() { train_rel_l2 } else { val_rel_l2 };
        if score.is_finite() && outcome.best_val.is_none_or(|b| score < b) {
            outcome.best_val = Some(score);
            outcome.best_epoch = Some(epoch);
            if let Some(path) = opts.best_checkpoint {
                let meta = CheckpointMeta {
                    epoch,
                    step: optimizer.step,
                    best_val: Some(score),
                    train_grid: data.mesh.grid,
                    train: cfg.clone(),
                };
                save_checkpoint(path, model, &optimizer, &meta)?;
            }
        }
        outcome.history.push(metrics);
    }
    outcome.optimizer = optimizer;
    Ok(outcome)
}

/// How predictions are produced on an evaluation mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuperResMode {
    /// Run the model on the evaluation mesh itself.
    Direct,
    /// Feed the input on a coarser mesh and query the evaluation mesh.
    Query,
}

impl std::str::FromStr for SuperResMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(Self::Direct),
            "query" => Ok(Self::Query),
            other => Err(Error::InvalidConfig(format!("unknown super-resolution mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for SuperResMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Direct => "direct",
            Self::Query => "query",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// `(sample index, relative L2)` in evaluation order.
    pub per_sample: Vec<(usize, f64)>,
    pub mean: f64,
    pub median: f64,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,rel_l2\n");
        for (i, e) in &self.per_sample {
            s.push_str(&format!("{i},{e}\n"));
        }
        s
    }
}

/// Eval-mode relative L2 per sample.
///
/// In `Query` mode the input is restricted to the grid subsampled by
/// `input_factor` and the model is queried at every point of the dataset mesh.
pub fn evaluate(
    model: &OnoModel,
    data: &Dataset,
    indices: &[usize],
    mode: SuperResMode,
    input_factor: usize,
) -> Result<EvalReport> {
    if indices.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let coarse = match mode {
        SuperResMode::Query => Some(data.mesh.subsample_indices(input_factor)?.0),
        SuperResMode::Direct => None,
    };
    let coarse_points = coarse.as_ref().map(|idx| data.mesh.points.select_rows(idx));
    let mut per_sample = Vec::with_capacity(indices.len());
    for &i in indices {
        let s = &data.samples[i];
        let pred = match (&coarse, &coarse_points) {
            (Some(idx), Some(points)) => {
                let values = s.f.select_rows(idx);
                model.predict_query(&FieldInput { points, values: &values }, &data.mesh.points)?
            }
            _ => model.predict(&FieldInput {
                points: &data.mesh.points,
                values: &s.f,
            })?,
        };
        per_sample.push((i, relative_l2(&pred, &s.u)?));
    }
    let mut sorted: Vec<f64> = per_sample.iter().map(|p| p.1).collect();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    Ok(EvalReport {
        mean: sorted.iter().sum::<f64>() / n as f64,
        median,
        per_sample,
    })
}
