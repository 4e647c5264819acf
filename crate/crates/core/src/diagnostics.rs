//! Finite-difference gradient checks and the linear-cost timing probe.

use crate::attention::{Mode, OrthoAttentionLayer};
use crate::autodiff::{grad_check_many, AutodiffError, Tape, Tensor, Var};
use crate::blocks::{linear_attention, LinearAttnBlock};
use crate::model::{FieldInput, ModelConfig, OnoModel};
use crate::params::{Bound, ParamStore};
use crate::rng::indexed_stream;
use crate::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Central-difference step used by [`grad_check_scope`].
pub const GRAD_CHECK_EPS: f64 = 1e-5;
/// Largest acceptable relative error.
pub const GRAD_CHECK_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradScope {
    Primitive,
    Layer,
    Model,
}

impl std::str::FromStr for GradScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "primitive" => Ok(Self::Primitive),
            "layer" => Ok(Self::Layer),
            "model" => Ok(Self::Model),
            other => Err(Error::InvalidConfig(format!("unknown grad-check scope {other:?}"))),
        }
    }
}

impl std::fmt::Display for GradScope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Primitive => "primitive",
            Self::Layer => "layer",
            Self::Model => "model",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckEntry {
    pub trial: usize,
    pub name: String,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub scope: GradScope,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < GRAD_CHECK_TOL
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("scope,trial,check,max_rel_error\n");
        for e in &self.entries {
            s.push_str(&format!("{},{},{},{}\n", self.scope, e.trial, e.name, e.max_rel_error));
        }
        s
    }
}

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(lo..hi)).collect())
}

fn to_ad(e: Error) -> AutodiffError {
    match e {
        Error::Autodiff(a) => a,
        other => AutodiffError::InvalidArgument(other.to_string()),
    }
}

/// `Σ out ⊙ w`, a scalar that touches every output entry.
fn weighted_sum(tape: &mut Tape, out: Var, w: &Tensor) -> crate::autodiff::Result<Var> {
    let wv = tape.constant(w.clone())?;
    let prod = tape.mul(out, wv)?;
    tape.sum(prod)
}

type Check = (&'static str, Vec<Tensor>, Box<dyn Fn(&mut Tape, &[Var]) -> crate::autodiff::Result<Var>>);

fn primitive_checks(rng: &mut ChaCha8Rng) -> Vec<Check> {
    let (m, d) = (6, 4);
    let w_md = random(rng, m, d, -1.0, 1.0);
    let w_mm = random(rng, m, m, -1.0, 1.0);
    let mut checks: Vec<Check> = Vec::new();
    let w = w_md.clone();
    checks.push((
        "matmul",
        vec![random(rng, m, 3, -1.0, 1.0), random(rng, 3, d, -1.0, 1.0)],
        Box::new(move |t, v| {
            let o = t.matmul(v[0], v[1])?;
            weighted_sum(t, o, &w)
        }),
    ));
    let w = w_mm.clone();
    checks.push((
        "matmul_transposed",
        vec![random(rng, m, d, -1.0, 1.0), random(rng, m, d, -1.0, 1.0)],
        Box::new(move |t, v| {
            let o = t.matmul_t(v[0], v[1], false, true)?;
            weighted_sum(t, o, &w)
        }),
    ));
    let w = w_md.clone();
    checks.push((
        "layer_norm",
        vec![
            random(rng, m, d, -2.0, 2.0),
            random(rng, 1, d, 0.5, 1.5),
            random(rng, 1, d, -0.5, 0.5),
        ],
        Box::new(move |t, v| {
            let o = t.layer_norm(v[0], v[1], v[2])?;
            weighted_sum(t, o, &w)
        }),
    ));
    let w = w_md.clone();
    checks.push((
        "pointwise",
        vec![random(rng, m, d, -2.0, 2.0)],
        Box::new(move |t, v| {
            let a = t.gelu(v[0])?;
            let b = t.elu_plus_one(v[0])?;
            let c = t.tanh(v[0])?;
            let e = t.exp(v[0])?;
            let s = t.square(v[0])?;
            let s = t.add_scalar(s, 0.5)?;
            let r = t.sqrt(s)?;
            let q = t.div(a, r)?;
            let sum = [b, c, e, q].into_iter().try_fold(a, |acc, x| t.add(acc, x))?;
            weighted_sum(t, sum, &w)
        }),
    ));
    let w = random(rng, 2 * m, d, -1.0, 1.0);
    checks.push((
        "concat_slice_transpose",
        vec![random(rng, m, d, -1.0, 1.0), random(rng, d, m, -1.0, 1.0)],
        Box::new(move |t, v| {
            let bt = t.transpose(v[1])?;
            let cat = t.concat(&[v[0], bt], 0)?;
            let part = t.slice(cat, 1, 1, d - 1)?;
            let rs = t.sum_rows(part)?;
            let rsum = t.sum(rs)?;
            let full = weighted_sum(t, cat, &w)?;
            t.add(full, rsum)
        }),
    ));
    let w = w_md.clone();
    checks.push((
        "linear_attention",
        vec![
            random(rng, m, d, -1.0, 1.0),
            random(rng, m, d, -1.0, 1.0),
            random(rng, m, d, -1.0, 1.0),
        ],
        Box::new(move |t, v| {
            let o = linear_attention(t, v[0], v[1], v[2])?;
            weighted_sum(t, o, &w)
        }),
    ));
    let w = w_md;
    checks.push((
        "cholesky_whitening",
        vec![random(rng, m, d, -1.0, 1.0)],
        Box::new(move |t, v| {
            let gtg = t.matmul_t(v[0], v[0], true, false)?;
            let c = t.scale(gtg, 1.0 / m as f64)?;
            let l = t.cholesky(c)?;
            let psi = t.whiten_solve(v[0], l)?;
            weighted_sum(t, psi, &w)
        }),
    ));
    checks
}

fn layer_checks(rng: &mut ChaCha8Rng) -> Result<Vec<Check>> {
    let (m, dp, d, k) = (10, 6, 5, 4);
    let mut store = ParamStore::new();
    let mut layer = OrthoAttentionLayer::new(&mut store, rng, "ortho", dp, d, k, d, 1.0, true, 0.5)?;
    let g = random(rng, m, dp, -1.0, 1.0);
    let h = random(rng, m, d, -1.0, 1.0);
    {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false)?;
        let gv = tape.constant(g.clone())?;
        let hv = tape.constant(h.clone())?;
        layer.layer_forward(&mut tape, &p, &[gv], &[hv], Mode::Train)?;
    }
    let n_ortho = store.len();
    let w_ortho = random(rng, m, d, -1.0, 1.0);
    let mut checks: Vec<Check> = Vec::new();
    checks.push((
        "orthogonal_attention",
        [store.values(), vec![g, h]].concat(),
        Box::new(move |t, v| {
            let p = Bound::from_vars(v[..n_ortho].to_vec());
            let out = layer.apply(t, &p, v[n_ortho], v[n_ortho + 1]).map_err(to_ad)?;
            weighted_sum(t, out, &w_ortho)
        }),
    ));

    let mut bstore = ParamStore::new();
    let block = LinearAttnBlock::new(&mut bstore, rng, "block", dp, 0.5);
    let n_block = bstore.len();
    let w_block = random(rng, m, dp, -1.0, 1.0);
    checks.push((
        "linear_attention_block",
        [bstore.values(), vec![random(rng, m, dp, -1.0, 1.0)]].concat(),
        Box::new(move |t, v| {
            let p = Bound::from_vars(v[..n_block].to_vec());
            let out = block.forward(t, &p, v[n_block])?;
            weighted_sum(t, out, &w_block)
        }),
    ));
    Ok(checks)
}

/// The small end-to-end configuration used for model-scope checks.
pub fn grad_check_model_config(seed: u64) -> ModelConfig {
    ModelConfig {
        layers: 1,
        width: 8,
        feature_width: 8,
        eigen_count: 4,
        coord_dim: 1,
        init_std: 0.6,
        seed,
        ..ModelConfig::default()
    }
}

fn model_checks(rng: &mut ChaCha8Rng, seed: u64) -> Result<Vec<Check>> {
    let m = 16;
    let mut model = OnoModel::new(grad_check_model_config(seed))?;
    for s in &model.stages {
        let id = s.ortho.raw_mu;
        let k = model.params.get(id).cols();
        *model.params.get_mut(id) = random(rng, 1, k, -0.5, 0.5);
    }
    let points = crate::linalg::DenseMatrix::from_vec(m, 1, (0..m).map(|i| i as f64 / (m - 1) as f64).collect())?;
    let values = random(rng, m, 1, -1.0, 1.0).to_dense();
    {
        let mut tape = Tape::new();
        let p = model.params.bind(&mut tape, false)?;
        model.forward_batch(
            &mut tape,
            &p,
            &[FieldInput {
                points: &points,
                values: &values,
            }],
            Mode::Train,
        )?;
    }
    let target = random(rng, m, 1, -1.0, 1.0);
    let start = model.params.values();
    Ok(vec![(
        "model",
        start,
        Box::new(move |t, v| {
            let p = Bound::from_vars(v.to_vec());
            let input = FieldInput {
                points: &points,
                values: &values,
            };
            let out = model.forward(t, &p, &input).map_err(to_ad)?;
            let tv = t.constant(target.clone())?;
            let diff = t.sub(out, tv)?;
            let sq = t.square(diff)?;
            t.sum(sq)
        }),
    )])
}

/// Runs every check of `scope` on `trials` independently seeded instances.
pub fn grad_check_scope(scope: GradScope, trials: usize, seed: u64) -> Result<GradCheckReport> {
    let mut entries = Vec::new();
    for trial in 0..trials {
        let mut rng = indexed_stream(seed, "grad-check", trial as u64);
        let checks = match scope {
            GradScope::Primitive => primitive_checks(&mut rng),
            GradScope::Layer => layer_checks(&mut rng)?,
            GradScope::Model => model_checks(&mut rng, seed.wrapping_add(trial as u64))?,
        };
        for (name, points, f) in checks {
            let err = grad_check_many(|t, v| f(t, v), &points, GRAD_CHECK_EPS)?;
            entries.push(GradCheckEntry {
                trial,
                name: name.to_string(),
                max_rel_error: err,
            });
        }
    }
    Ok(GradCheckReport { scope, entries })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchPoint {
    pub m: usize,
    /// Fastest of the timed repetitions.
    pub seconds: f64,
}

/// Least-squares line `t = intercept + slope·m` through the timings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    /// `max |t − fit| / fit` over the points.
    pub max_rel_residual: f64,
}

/// Times one training-mode orthogonal-attention stage (projection, buffer
/// update, whitening, attention, nonlinearity) at each mesh size.
///
/// Sizes are visited round-robin for `reps` rounds after one untimed warmup
/// round, and each size keeps its fastest pass, so a stall hits one sample of
/// one size rather than a whole size.
pub fn bench_layer_forward(m_list: &[usize], k: usize, reps: usize, seed: u64) -> Result<Vec<BenchPoint>> {
    let width = 32;
    let mut rng = indexed_stream(seed, "bench", 0);
    let mut store = ParamStore::new();
    let mut layer = OrthoAttentionLayer::new(&mut store, &mut rng, "ortho", width, width, k, width, 0.1, true, 0.02)?;
    let mut inputs = Vec::with_capacity(m_list.len());
    for &m in m_list {
        if m < k {
            return Err(Error::MeshTooSmall { points: m, k });
        }
        inputs.push((random(&mut rng, m, width, -1.0, 1.0), random(&mut rng, m, width, -1.0, 1.0)));
    }
    let mut best = vec![f64::INFINITY; m_list.len()];
    for round in 0..=reps.max(1) {
        for ((g, h), slot) in inputs.iter().zip(best.iter_mut()) {
            let mut tape = Tape::new();
            let p = store.bind(&mut tape, false)?;
            let gv = tape.constant(g.clone())?;
            let hv = tape.constant(h.clone())?;
            let t0 = Instant::now();
            let r = layer.layer_forward(&mut tape, &p, &[gv], &[hv], Mode::Train)?;
            std::hint::black_box(tape.value(r[0]));
            let dt = t0.elapsed().as_secs_f64();
            if round > 0 {
                *slot = slot.min(dt);
            }
        }
    }
    Ok(m_list
        .iter()
        .zip(best)
        .map(|(&m, seconds)| BenchPoint { m, seconds })
        .collect())
}

pub fn linear_fit(points: &[BenchPoint]) -> Result<LinearFit> {
    if points.len() < 2 {
        return Err(Error::InvalidConfig("a linear fit needs at least two points".into()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.m as f64).sum::<f64>() / n;
    let my = points.iter().map(|p| p.seconds).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.m as f64 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidConfig("a linear fit needs distinct sizes".into()));
    }
    let sxy: f64 = points.iter().map(|p| (p.m as f64 - mx) * (p.seconds - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let max_rel_residual = points
        .iter()
        .map(|p| {
            let fit = intercept + slope * p.m as f64;
            (p.seconds - fit).abs() / fit.abs()
        })
        .fold(0.0, f64::max);
    Ok(LinearFit {
        intercept,
        slope,
        max_rel_residual,
    })
}
