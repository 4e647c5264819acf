//! Numeric checks of the eigenfunction view of orthogonal attention.
//!
//! Kernels with known spectra on `[0, 1]`, the rank-k Mercer truncation, the
//! coordinate form of the projection objective (direct Monte Carlo and closed
//! form), and recovery of leading eigenfunctions by a small whitened MLP.

use crate::autodiff::{Tape, Tensor};
use crate::layers::Linear;
use crate::linalg::{sym_eig, DenseMatrix};
use crate::params::ParamStore;
use crate::rng::stream;
use crate::training::{AdamConfig, AdamW};
use crate::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Tolerance on `a aᵀ = I` for coordinate problems.
pub const ORTHONORMAL_TOL: f64 = 1e-8;

pub const REPORT_HEADER: &str = "kernel,k,i,eigenvalue_true,eigenvalue_learned,alignment";

/// Symmetric PSD kernels on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum AnalyticKernel {
    /// `min(x, y)`; eigenvalues `1/((j − ½)²π²)`, eigenfunctions `√2 sin((j − ½)πx)`.
    Min,
    /// `exp(−(x − y)² / (2ℓ²))`.
    Rbf { length_scale: f64 },
}

impl AnalyticKernel {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match *self {
            Self::Min => x.min(y),
            Self::Rbf { length_scale } => (-(x - y).powi(2) / (2.0 * length_scale * length_scale)).exp(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Min => "min",
            Self::Rbf { .. } => "rbf",
        }
    }

    /// Eigenvalue `j` (1-based) of the continuous operator, when known.
    pub fn analytic_eigenvalue(&self, j: usize) -> Option<f64> {
        match self {
            Self::Min => {
                let w = (j as f64 - 0.5) * std::f64::consts::PI;
                Some(1.0 / (w * w))
            }
            Self::Rbf { .. } => None,
        }
    }

    /// Eigenfunction `j` (1-based) of the continuous operator, when known.
    pub fn analytic_eigenfunction(&self, j: usize, x: f64) -> Option<f64> {
        match self {
            Self::Min => Some(2f64.sqrt() * ((j as f64 - 0.5) * std::f64::consts::PI * x).sin()),
            Self::Rbf { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Rbf { length_scale } if !(length_scale > 0.0 && length_scale.is_finite()) => Err(
                Error::InvalidConfig(format!("rbf length scale must be positive, got {length_scale}")),
            ),
            _ => Ok(()),
        }
    }
}

impl std::str::FromStr for AnalyticKernel {
    type Err = Error;

    /// `min`, `rbf` (length scale 0.1) or `rbf:<length scale>`.
    fn from_str(s: &str) -> Result<Self> {
        let k = match s.split_once(':') {
            None if s == "min" => Self::Min,
            None if s == "rbf" => Self::Rbf { length_scale: 0.1 },
            Some(("rbf", l)) => Self::Rbf {
                length_scale: l
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad rbf length scale {l:?}")))?,
            },
            _ => return Err(Error::InvalidConfig(format!("unknown kernel {s:?}"))),
        };
        k.validate()?;
        Ok(k)
    }
}

/// Cell midpoints `(j + ½)/m` of a uniform partition of `[0, 1]`.
pub fn midpoint_grid(m: usize) -> Vec<f64> {
    (0..m).map(|j| (j as f64 + 0.5) / m as f64).collect()
}

pub fn kernel_matrix(kernel: &AnalyticKernel, grid: &[f64]) -> DenseMatrix {
    let m = grid.len();
    let mut k = DenseMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let v = kernel.eval(grid[i], grid[j]);
            k.set(i, j, v);
            k.set(j, i, v);
        }
    }
    k
}

/// Discrete spectrum of the integral operator on a midpoint grid.
#[derive(Debug, Clone)]
pub struct SpectralTruth {
    pub kernel: AnalyticKernel,
    pub grid: Vec<f64>,
    /// `K / M`.
    pub operator: DenseMatrix,
    /// All `M` eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Unit-norm eigenvectors of `operator` as columns.
    pub eigenvectors: DenseMatrix,
    pub k: usize,
}

impl SpectralTruth {
    pub fn m(&self) -> usize {
        self.grid.len()
    }

    /// First `k` eigenfunctions sampled on the grid, orthonormal under `(1/M)Σ`.
    pub fn eigenfunctions(&self, k: usize) -> DenseMatrix {
        self.eigenvectors.columns(0, k).scale((self.m() as f64).sqrt())
    }

    pub fn leading(&self) -> &[f64] {
        &self.eigenvalues[..self.k]
    }
}

pub fn spectral_truth(kernel: &AnalyticKernel, grid_size: usize, k: usize) -> Result<SpectralTruth> {
    kernel.validate()?;
    if k == 0 || grid_size < 4 * k {
        return Err(Error::InvalidConfig(format!(
            "spectral truth needs grid_size >= 4k and k >= 1, got grid {grid_size}, k {k}"
        )));
    }
    let grid = midpoint_grid(grid_size);
    let operator = kernel_matrix(kernel, &grid).scale(1.0 / grid_size as f64);
    let eig = sym_eig(&operator)?;
    Ok(SpectralTruth {
        kernel: *kernel,
        grid,
        operator,
        eigenvalues: eig.values,
        eigenvectors: eig.vectors,
        k,
    })
}

/// Hilbert–Schmidt norm of the discarded part of the expansion, `√(Σ_{i>k} μ_i²)`.
pub fn mercer_truncation_error(truth: &SpectralTruth, k: usize) -> Result<f64> {
    if k > truth.eigenvalues.len() {
        return Err(Error::InvalidConfig(format!(
            "truncation rank {k} exceeds the {} available eigenvalues",
            truth.eigenvalues.len()
        )));
    }
    Ok(truth.eigenvalues[k..].iter().map(|m| m * m).sum::<f64>().sqrt())
}

/// The same quantity computed directly: `‖K/M − ψ_{:k} diag(μ_{:k}) ψ_{:k}ᵀ / M‖_F`.
pub fn mercer_frobenius_error(truth: &SpectralTruth, k: usize) -> Result<f64> {
    if k > truth.eigenvalues.len() {
        return Err(Error::InvalidConfig(format!(
            "truncation rank {k} exceeds the {} available eigenvalues",
            truth.eigenvalues.len()
        )));
    }
    let m = truth.m();
    let psi = truth.eigenfunctions(k);
    let mut scaled = psi.clone();
    for i in 0..m {
        for j in 0..k {
            scaled.set(i, j, psi.get(i, j) * truth.eigenvalues[j] / m as f64);
        }
    }
    let approx = scaled.matmul(&psi.transpose())?;
    Ok(truth.operator.sub(&approx)?.frobenius_norm())
}

/// Finite-dimensional form of the projection objective.
///
/// Functions live in the span of `n` orthonormal eigenfunctions with operator
/// eigenvalues `mu`; `f` has coordinates with second moment `a_f`, and the
/// candidate eigenfunctions have coordinates given by the rows of `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateProblem {
    pub n: usize,
    pub a_f: DenseMatrix,
    pub mu: Vec<f64>,
    pub a: DenseMatrix,
}

impl CoordinateProblem {
    pub fn new(a_f: DenseMatrix, mu: Vec<f64>, a: DenseMatrix) -> Result<Self> {
        let n = mu.len();
        if a_f.shape() != (n, n) || a.cols() != n || a.rows() > n {
            return Err(Error::ShapeMismatch(format!(
                "coordinate problem with n = {n}: A_f {:?}, a {:?}",
                a_f.shape(),
                a.shape()
            )));
        }
        if a_f.asymmetry().unwrap_or(0.0) > 1e-12 * a_f.max_abs().max(1.0) {
            return Err(Error::InvalidConfig("A_f must be symmetric".into()));
        }
        let gram = a.matmul(&a.transpose())?;
        let dev = gram.max_abs_diff(&DenseMatrix::identity(a.rows()));
        if dev > ORTHONORMAL_TOL {
            return Err(Error::InvalidConfig(format!("rows of a are not orthonormal (deviation {dev:e})")));
        }
        Ok(Self { n, a_f, mu, a })
    }

    pub fn k(&self) -> usize {
        self.a.rows()
    }

    /// Random instance: `A_f = BBᵀ/n`, `mu` uniform in `(0, 1]`, `a` with
    /// orthonormal rows from Gram–Schmidt.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize) -> Result<Self> {
        if k == 0 || k > n {
            return Err(Error::InvalidConfig(format!("need 1 <= k <= n, got k {k}, n {n}")));
        }
        let b = DenseMatrix::from_vec(n, n, (0..n * n).map(|_| StandardNormal.sample(rng)).collect())?;
        let mut a_f = b.matmul(&b.transpose())?.scale(1.0 / n as f64);
        symmetrize(&mut a_f);
        let mu = (0..n).map(|_| 1.0 - rng.gen::<f64>()).collect();
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(k);
        while rows.len() < k {
            let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
            for _ in 0..2 {
                for r in &rows {
                    let d = dot(&v, r);
                    v.iter_mut().zip(r).for_each(|(x, y)| *x -= d * y);
                }
            }
            let norm = dot(&v, &v).sqrt();
            if norm > 1e-6 {
                rows.push(v.into_iter().map(|x| x / norm).collect());
            }
        }
        Self::new(a_f, mu, DenseMatrix::from_rows(&rows))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn symmetrize(m: &mut DenseMatrix) {
    for i in 0..m.rows() {
        for j in (i + 1)..m.cols() {
            let s = 0.5 * (m.get(i, j) + m.get(j, i));
            m.set(i, j, s);
            m.set(j, i, s);
        }
    }
}

/// Draws `count` coordinate vectors (rows) with second moment `a_f`.
pub fn sample_coordinates<R: Rng + ?Sized>(rng: &mut R, a_f: &DenseMatrix, count: usize) -> Result<DenseMatrix> {
    let eig = sym_eig(a_f)?;
    let n = a_f.rows();
    // R = V diag(√λ), so R Rᵀ = A_f.
    let mut root = eig.vectors.clone();
    for j in 0..n {
        let s = eig.values[j].max(0.0).sqrt();
        for i in 0..n {
            root.set(i, j, root.get(i, j) * s);
        }
    }
    let z = DenseMatrix::from_vec(count, n, (0..count * n).map(|_| StandardNormal.sample(rng)).collect())?;
    Ok(z.matmul(&root.transpose())?)
}

/// Per-sample objective without the `f`-independent constant:
/// `Σ_i ⟨ψ̂_i,f⟩² − 2 Σ_i ⟨ψ̂_i,f⟩ Σ_j μ_j ⟨ψ_j,f⟩ ⟨ψ̂_i,ψ_j⟩`.
pub fn appendix_loss_terms(prob: &CoordinateProblem, samples: &DenseMatrix) -> Result<Vec<f64>> {
    if samples.cols() != prob.n {
        return Err(Error::ShapeMismatch(format!(
            "samples have {} coordinates, problem has {}",
            samples.cols(),
            prob.n
        )));
    }
    Ok((0..samples.rows())
        .map(|s| {
            let c = samples.row(s);
            let gc: Vec<f64> = c.iter().zip(&prob.mu).map(|(x, m)| x * m).collect();
            (0..prob.k())
                .map(|i| {
                    let ai = prob.a.row(i);
                    let p = dot(ai, c);
                    p * p - 2.0 * p * dot(ai, &gc)
                })
                .sum()
        })
        .collect())
}

/// Monte Carlo estimate of the objective: mean of [`appendix_loss_terms`].
pub fn appendix_loss_direct(prob: &CoordinateProblem, samples: &DenseMatrix) -> Result<f64> {
    let t = appendix_loss_terms(prob, samples)?;
    if t.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(t.iter().sum::<f64>() / t.len() as f64)
}

/// `Σ_i a_iᵀ [A_f − A_f diag(μ) − diag(μ) A_f] a_i`.
pub fn appendix_loss_closed(prob: &CoordinateProblem) -> f64 {
    let n = prob.n;
    let mut total = 0.0;
    for i in 0..prob.k() {
        let a = prob.a.row(i);
        for p in 0..n {
            for q in 0..n {
                let m = prob.a_f.get(p, q) * (1.0 - prob.mu[q] - prob.mu[p]);
                total += a[p] * m * a[q];
            }
        }
    }
    total
}

/// Grid search of the identity-`A_f` closed form over unit vectors in `ℝ³`
/// (a single candidate eigenfunction). Returns the minimizing direction.
pub fn sphere_minimizer(mu: [f64; 3], steps: usize) -> Result<[f64; 3]> {
    let steps = steps.max(2);
    let mut best = (f64::INFINITY, [0.0; 3]);
    for it in 0..=steps {
        let theta = std::f64::consts::PI * it as f64 / steps as f64;
        for ip in 0..(2 * steps) {
            let phi = std::f64::consts::PI * ip as f64 / steps as f64;
            let a = [theta.cos(), theta.sin() * phi.cos(), theta.sin() * phi.sin()];
            let prob = CoordinateProblem::new(
                DenseMatrix::identity(3),
                mu.to_vec(),
                DenseMatrix::from_rows(&[a.to_vec()]),
            )?;
            let v = appendix_loss_closed(&prob);
            if v < best.0 {
                best = (v, a);
            }
        }
    }
    Ok(best.1)
}

/// Settings for [`recover_eigenfunctions`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoveryConfig {
    pub grid: usize,
    pub width: usize,
    pub k: usize,
    pub steps: usize,
    /// White-noise functions per step; `None` uses the expectation over white
    /// noise in closed form, `(1/M)‖(1/M)ψ̂ψ̂ᵀ − K/M‖²_F`.
    pub batch: Option<usize>,
    pub lr: f64,
    pub seed: u64,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self {
            grid: 256,
            width: 32,
            k: 3,
            steps: 2000,
            batch: None,
            lr: 3e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RecoveryReport {
    pub kernel: AnalyticKernel,
    pub k: usize,
    pub eigenvalues_true: Vec<f64>,
    /// Ritz values of the operator on the learned span, matched to truth order.
    pub eigenvalues_learned: Vec<f64>,
    /// `|cos|` between learned and true eigenfunction `i`.
    pub alignment: Vec<f64>,
    /// Principal angles between learned and true spans, ascending.
    pub principal_angles_deg: Vec<f64>,
    /// Learned eigenfunctions on the grid, matched and sign-aligned to truth.
    pub eigenfunctions: DenseMatrix,
    pub final_loss: f64,
}

impl RecoveryReport {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{REPORT_HEADER}\n");
        for i in 0..self.k {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                self.kernel.name(),
                self.k,
                i + 1,
                self.eigenvalues_true[i],
                self.eigenvalues_learned[i],
                self.alignment[i]
            ));
        }
        s
    }
}

/// Trains an MLP `ψ̂: [0,1] → ℝᵏ` whose outputs are whitened by the Cholesky
/// factor of their grid covariance, minimizing the projection-reconstruction
/// loss `(1/M)‖(1/M) ψ̂ψ̂ᵀf − (K/M) f‖²` over white-noise `f`.
///
/// The loss only sees the span of `ψ̂`, so individual eigenfunctions are read
/// off with a Rayleigh–Ritz step and matched to the truth greedily by `|cos|`.
pub fn recover_eigenfunctions(kernel: &AnalyticKernel, cfg: &RecoveryConfig) -> Result<RecoveryReport> {
    if cfg.width == 0 || cfg.batch == Some(0) || !(cfg.lr > 0.0) {
        return Err(Error::InvalidConfig("recovery needs width, batch and lr > 0".into()));
    }
    let truth = spectral_truth(kernel, cfg.grid, cfg.k)?;
    let m = cfg.grid;
    let k = cfg.k;
    let mut rng = stream(cfg.seed, "init");
    let mut store = ParamStore::new();
    let w = cfg.width;
    let l1 = Linear::new(&mut store, &mut rng, "psi.0", 1, w, true, 1.0);
    let l2 = Linear::new(&mut store, &mut rng, "psi.1", w, w, true, 1.0 / (w as f64).sqrt());
    let l3 = Linear::new(&mut store, &mut rng, "psi.2", w, k, true, 1.0 / (w as f64).sqrt());
    let x = Tensor::matrix(m, 1, truth.grid.clone());
    let op = Tensor::from(truth.operator.clone());
    let mut opt = AdamW::new(
        AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        },
        &store,
    );
    let mut noise = stream(cfg.seed, "functions");

    let features = |tape: &mut Tape, store: &ParamStore, grad: bool| -> Result<_> {
        let p = store.bind(tape, grad)?;
        let xv = tape.constant(x.clone())?;
        let h = l1.forward(tape, &p, xv)?;
        let h = tape.tanh(h)?;
        let h = l2.forward(tape, &p, h)?;
        let h = tape.tanh(h)?;
        let g = l3.forward(tape, &p, h)?;
        let gtg = tape.matmul_t(g, g, true, false)?;
        let c = tape.scale(gtg, 1.0 / m as f64)?;
        let l = tape.cholesky(c)?;
        let psi = tape.whiten_solve(g, l)?;
        Ok((p, psi))
    };

    let mut final_loss = f64::NAN;
    for step in 0..cfg.steps {
        let mut tape = Tape::new();
        let (p, psi) = features(&mut tape, &store, true)?;
        let loss = match cfg.batch {
            Some(b) => {
                let f: Vec<f64> = (0..m * b).map(|_| StandardNormal.sample(&mut noise)).collect();
                let f = tape.constant(Tensor::matrix(m, b, f))?;
                let coeff = tape.matmul_t(psi, f, true, false)?;
                let proj = tape.matmul(psi, coeff)?;
                let proj = tape.scale(proj, 1.0 / m as f64)?;
                let opv = tape.constant(op.clone())?;
                let target = tape.matmul(opv, f)?;
                let diff = tape.sub(proj, target)?;
                let sq = tape.square(diff)?;
                let s = tape.sum(sq)?;
                tape.scale(s, 1.0 / (m * b) as f64)?
            }
            None => {
                let pp = tape.matmul_t(psi, psi, false, true)?;
                let pp = tape.scale(pp, 1.0 / m as f64)?;
                let opv = tape.constant(op.clone())?;
                let diff = tape.sub(pp, opv)?;
                let sq = tape.square(diff)?;
                let s = tape.sum(sq)?;
                tape.scale(s, 1.0 / m as f64)?
            }
        };
        final_loss = tape.value(loss).data()[0];
        let grads = tape.backward(loss)?;
        let grads: Vec<Tensor> = p
            .vars()
            .iter()
            .zip(store.iter())
            .map(|(&v, param)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(param.value.shape())))
            .collect();
        // cosine decay to a tenth of the base rate
        let t = step as f64 / cfg.steps as f64;
        let lr = cfg.lr * (0.1 + 0.9 * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()));
        opt.step(&mut store, &grads, lr)?;
    }

    let mut tape = Tape::new();
    let (_, psi) = features(&mut tape, &store, false)?;
    let psi = tape.value(psi).to_dense();
    let (ritz_values, ritz_funcs) = rayleigh_ritz(&truth.operator, &psi)?;
    let true_funcs = truth.eigenfunctions(k);
    let matching = greedy_match(&ritz_funcs, &true_funcs);
    let mut eigenvalues_learned = vec![0.0; k];
    let mut alignment = vec![0.0; k];
    let mut eigenfunctions = DenseMatrix::zeros(m, k);
    for (learned, t) in matching {
        let a = ritz_funcs.column(learned);
        let b = true_funcs.column(t);
        let c = cosine(&a, &b);
        eigenvalues_learned[t] = ritz_values[learned];
        alignment[t] = c.abs();
        let sign = if c < 0.0 { -1.0 } else { 1.0 };
        for i in 0..m {
            eigenfunctions.set(i, t, sign * a[i]);
        }
    }
    Ok(RecoveryReport {
        kernel: *kernel,
        k,
        eigenvalues_true: truth.leading().to_vec(),
        eigenvalues_learned,
        alignment,
        principal_angles_deg: principal_angles_deg(&psi, &true_funcs)?,
        eigenfunctions,
        final_loss,
    })
}

/// Ritz pairs of `operator` on the span of the `(1/M)`-orthonormal columns of
/// `psi`: values descending, functions `(1/M)`-orthonormal.
pub fn rayleigh_ritz(operator: &DenseMatrix, psi: &DenseMatrix) -> Result<(Vec<f64>, DenseMatrix)> {
    let m = psi.rows() as f64;
    let q = orthonormalize_columns(psi)?;
    let mut small = q.t_matmul(&operator.matmul(&q)?)?;
    symmetrize(&mut small);
    let eig = sym_eig(&small)?;
    Ok((eig.values, q.matmul(&eig.vectors)?.scale(m.sqrt())))
}

/// Unit-norm orthonormal basis of the column span (modified Gram–Schmidt, twice).
fn orthonormalize_columns(a: &DenseMatrix) -> Result<DenseMatrix> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(a.cols());
    for j in 0..a.cols() {
        let mut v = a.column(j);
        for _ in 0..2 {
            for c in &cols {
                let d = dot(&v, c);
                v.iter_mut().zip(c).for_each(|(x, y)| *x -= d * y);
            }
        }
        let n = dot(&v, &v).sqrt();
        if !(n > 1e-12) {
            return Err(Error::InvalidConfig("learned features are rank deficient".into()));
        }
        cols.push(v.into_iter().map(|x| x / n).collect());
    }
    let mut out = DenseMatrix::zeros(a.rows(), a.cols());
    for (j, c) in cols.iter().enumerate() {
        for (i, &v) in c.iter().enumerate() {
            out.set(i, j, v);
        }
    }
    Ok(out)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

/// Pairs columns of `learned` with columns of `truth` by repeatedly taking the
/// largest remaining `|cos|`. Returns `(learned column, truth column)` pairs.
pub fn greedy_match(learned: &DenseMatrix, truth: &DenseMatrix) -> Vec<(usize, usize)> {
    let (p, q) = (learned.cols(), truth.cols());
    let lc: Vec<Vec<f64>> = (0..p).map(|j| learned.column(j)).collect();
    let tc: Vec<Vec<f64>> = (0..q).map(|j| truth.column(j)).collect();
    let mut free_l = vec![true; p];
    let mut free_t = vec![true; q];
    let mut pairs = Vec::with_capacity(p.min(q));
    for _ in 0..p.min(q) {
        let mut best = (f64::NEG_INFINITY, 0, 0);
        for (i, a) in lc.iter().enumerate().filter(|(i, _)| free_l[*i]) {
            for (j, b) in tc.iter().enumerate().filter(|(j, _)| free_t[*j]) {
                let c = cosine(a, b).abs();
                if c > best.0 {
                    best = (c, i, j);
                }
            }
        }
        free_l[best.1] = false;
        free_t[best.2] = false;
        pairs.push((best.1, best.2));
    }
    pairs
}

/// Principal angles (degrees, ascending) between the column spans of `a` and `b`.
pub fn principal_angles_deg(a: &DenseMatrix, b: &DenseMatrix) -> Result<Vec<f64>> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "principal angles of {:?} and {:?} spans",
            a.shape(),
            b.shape()
        )));
    }
    let qa = orthonormalize_columns(a)?;
    let qb = orthonormalize_columns(b)?;
    let c = qa.t_matmul(&qb)?;
    let mut cc = c.t_matmul(&c)?;
    symmetrize(&mut cc);
    let cos2 = sym_eig(&cc)?.values;
    // small angles from the sines, which stay accurate near zero
    let r = qb.sub(&qa.matmul(&c)?)?;
    let mut rr = r.t_matmul(&r)?;
    symmetrize(&mut rr);
    let mut sin2 = sym_eig(&rr)?.values;
    sin2.reverse();
    Ok(cos2
        .iter()
        .zip(&sin2)
        .map(|(&c2, &s2)| {
            let t = if c2 >= 0.5 {
                s2.clamp(0.0, 1.0).sqrt().asin()
            } else {
                c2.clamp(0.0, 1.0).sqrt().acos()
            };
            t.to_degrees()
        })
        .collect())
}
