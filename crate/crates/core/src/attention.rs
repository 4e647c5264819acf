//! Orthogonal attention.
//!
//! Features from the feature pathway are projected to `k` eigenmap channels,
//! whitened against a running estimate of their covariance so that each
//! channel behaves as an orthonormal eigenfunction, and then used as a rank-`k`
//! kernel `ψ diag(μ) ψᵀ` acting on the solution-pathway state `h`.
//!
//! The covariance is a running statistic in the batch-normalization sense:
//! updated from each training batch, frozen at evaluation, and never
//! differentiated through.

use crate::autodiff::{Tape, Tensor, Var};
use crate::layers::{FeedForward, LayerNorm};
use crate::linalg::{cholesky_jittered, inverse_lower_transpose, solve_triangular, DenseMatrix};
use crate::params::{truncated_normal, Bound, ParamId, ParamStore};
use crate::{Error, Result};
use rand::Rng;

/// Whether running statistics are updated (`Train`) or read-only (`Eval`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running covariance of the projected features and its Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceBuffer {
    covariance: DenseMatrix,
    chol: DenseMatrix,
    whitener: DenseMatrix,
    momentum: f64,
    initialized: bool,
    jitter: f64,
}

impl CovarianceBuffer {
    pub fn new(k: usize, momentum: f64) -> Result<Self> {
        if !(momentum > 0.0 && momentum <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "EMA momentum must lie in (0, 1], got {momentum}"
            )));
        }
        Ok(Self {
            covariance: DenseMatrix::identity(k),
            chol: DenseMatrix::identity(k),
            whitener: DenseMatrix::identity(k),
            momentum,
            initialized: false,
            jitter: 0.0,
        })
    }

    /// Rebuilds a buffer from stored state. The stored factor is used verbatim;
    /// only the jitter bookkeeping is recomputed.
    pub fn restore(covariance: DenseMatrix, chol: DenseMatrix, momentum: f64, initialized: bool) -> Result<Self> {
        let mut b = Self::new(covariance.rows(), momentum)?;
        if chol.shape() != covariance.shape() || !covariance.is_square() {
            return Err(Error::ShapeMismatch("covariance buffer state".into()));
        }
        if initialized {
            b.whitener = inverse_lower_transpose(&chol)?;
            let f = cholesky_jittered(&covariance)?;
            b.jitter = f.jitter;
        }
        b.covariance = covariance;
        b.chol = chol;
        b.initialized = initialized;
        Ok(b)
    }

    pub fn k(&self) -> usize {
        self.covariance.rows()
    }

    pub fn covariance(&self) -> &DenseMatrix {
        &self.covariance
    }

    pub fn chol(&self) -> &DenseMatrix {
        &self.chol
    }

    /// `L⁻ᵀ`, the matrix that right-multiplies features to whiten them.
    pub fn whitener(&self) -> &DenseMatrix {
        &self.whitener
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    /// Diagonal jitter that the last factorization needed (0 when none).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `(1 / ΣM) Σ ĝᵀĝ` over a batch of `M_i x k` projected features.
    pub fn batch_covariance(ghats: &[&Tensor]) -> Result<DenseMatrix> {
        let k = ghats
            .first()
            .map(|g| g.cols())
            .ok_or_else(|| Error::ShapeMismatch("empty covariance batch".into()))?;
        let mut acc = DenseMatrix::zeros(k, k);
        let mut rows = 0usize;
        for g in ghats {
            let gm = g.to_dense();
            if gm.cols() != k {
                return Err(Error::ShapeMismatch(format!(
                    "covariance batch mixes {k} and {} channels",
                    gm.cols()
                )));
            }
            acc = acc.add(&gm.t_matmul(&gm)?)?;
            rows += gm.rows();
        }
        if rows == 0 {
            return Err(Error::ShapeMismatch("covariance batch has no rows".into()));
        }
        let mut c = acc.scale(1.0 / rows as f64);
        for i in 0..k {
            for j in (i + 1)..k {
                let s = 0.5 * (c.get(i, j) + c.get(j, i));
                c.set(i, j, s);
                c.set(j, i, s);
            }
        }
        Ok(c)
    }

    /// Folds a training batch into the running covariance and refreshes the factor.
    ///
    /// The first update copies the batch covariance; later ones blend with
    /// `momentum`. In eval mode nothing changes. On factorization failure the
    /// buffer keeps its previous state.
    pub fn update(&mut self, ghats: &[&Tensor], mode: Mode) -> Result<()> {
        if mode == Mode::Eval {
            return Ok(());
        }
        let batch = Self::batch_covariance(ghats)?;
        if batch.rows() != self.k() {
            return Err(Error::ShapeMismatch(format!(
                "buffer holds {} channels, batch has {}",
                self.k(),
                batch.rows()
            )));
        }
        let next = if self.initialized {
            self.covariance
                .scale(1.0 - self.momentum)
                .add(&batch.scale(self.momentum))?
        } else {
            batch
        };
        let f = cholesky_jittered(&next)?;
        self.whitener = inverse_lower_transpose(&f.lower)?;
        self.chol = f.lower;
        self.jitter = f.jitter;
        self.covariance = next;
        self.initialized = true;
        Ok(())
    }

    /// `ĝ L⁻ᵀ`, computed by a triangular solve.
    pub fn orthonormalize(&self, ghat: &DenseMatrix) -> Result<DenseMatrix> {
        if !self.initialized {
            return Err(Error::UninitializedBuffer);
        }
        if ghat.cols() != self.k() {
            return Err(Error::ShapeMismatch(format!(
                "features have {} channels, buffer {}",
                ghat.cols(),
                self.k()
            )));
        }
        // X Lᵀ = G  <=>  L Xᵀ = Gᵀ
        Ok(solve_triangular(&self.chol, &ghat.transpose(), false)?.transpose())
    }
}

/// `ψ_out · diag(μ) · (s · ψ_inᵀ h) · w_v`, with `s = 1/M_in` when `normalize` is set.
///
/// The `k x d` contraction is formed first, so the cost is linear in both point counts.
pub fn attend(
    tape: &mut Tape,
    psi_out: Var,
    psi_in: Var,
    h: Var,
    mu: Var,
    w_v: Var,
    normalize: bool,
) -> Result<Var> {
    let (m_in, k) = tape.shape(psi_in);
    if tape.shape(psi_out).1 != k || tape.shape(h).0 != m_in || tape.shape(mu) != (1, k) {
        return Err(Error::ShapeMismatch(format!(
            "attend: psi_out {:?}, psi_in {:?}, h {:?}, mu {:?}",
            tape.shape(psi_out),
            tape.shape(psi_in),
            tape.shape(h),
            tape.shape(mu)
        )));
    }
    let mut coeff = tape.matmul_t(psi_in, h, true, false)?;
    if normalize {
        coeff = tape.scale(coeff, 1.0 / m_in as f64)?;
    }
    let coeff = tape.matmul(coeff, w_v)?;
    let scaled = tape.mul(psi_out, mu)?;
    Ok(tape.matmul(scaled, coeff)?)
}

/// One orthogonal-attention stage: projection, whitening, attention and the
/// `FFN(LN(· + h))` nonlinearity.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthoAttentionLayer {
    pub query_proj: ParamId,
    pub value_proj: ParamId,
    /// `log μ̂`; the eigenvalues are `exp(raw_mu)` and start at 1.
    pub raw_mu: ParamId,
    pub norm: LayerNorm,
    pub ffn: FeedForward,
    pub buffer: CovarianceBuffer,
    pub normalize_attention: bool,
    pub feature_width: usize,
    pub width: usize,
    pub out_dim: usize,
}

impl OrthoAttentionLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        feature_width: usize,
        width: usize,
        k: usize,
        out_dim: usize,
        momentum: f64,
        normalize_attention: bool,
        init_std: f64,
    ) -> Result<Self> {
        Ok(Self {
            query_proj: store.add(
                format!("{name}.query_proj"),
                truncated_normal(rng, feature_width, k, init_std),
                true,
            ),
            value_proj: store.add(
                format!("{name}.value_proj"),
                truncated_normal(rng, width, width, init_std),
                true,
            ),
            raw_mu: store.add(format!("{name}.raw_mu"), Tensor::zeros(&[1, k]), false),
            norm: LayerNorm::new(store, &format!("{name}.norm"), width),
            ffn: FeedForward::new(store, rng, &format!("{name}.ffn"), width, 4 * width, out_dim, init_std),
            buffer: CovarianceBuffer::new(k, momentum)?,
            normalize_attention,
            feature_width,
            width,
            out_dim,
        })
    }

    pub fn k(&self) -> usize {
        self.buffer.k()
    }

    /// `ĝ = g w_Q`.
    pub fn project(&self, tape: &mut Tape, p: &Bound, g: Var) -> Result<Var> {
        Ok(tape.matmul(g, p.var(self.query_proj))?)
    }

    /// `ψ = ĝ L⁻ᵀ` with the buffer treated as a constant.
    pub fn orthonormalize(&self, tape: &mut Tape, ghat: Var) -> Result<Var> {
        if !self.buffer.is_initialized() {
            return Err(Error::UninitializedBuffer);
        }
        let w = tape.constant(Tensor::from(self.buffer.whitener()))?;
        Ok(tape.matmul(ghat, w)?)
    }

    pub fn eigenvalues(&self, tape: &mut Tape, p: &Bound) -> Result<Var> {
        Ok(tape.exp(p.var(self.raw_mu))?)
    }

    /// `FFN(LN(x))`, plus the residual `h` inside the norm when given.
    pub fn nonlinearity(&self, tape: &mut Tape, p: &Bound, x: Var, residual: Option<Var>) -> Result<Var> {
        let x = match residual {
            Some(h) => tape.add(x, h)?,
            None => x,
        };
        let n = self.norm.forward(tape, p, x)?;
        Ok(self.ffn.forward(tape, p, n)?)
    }

    /// Attention output for already-whitened eigenmaps.
    pub fn attend(&self, tape: &mut Tape, p: &Bound, psi_out: Var, psi_in: Var, h: Var) -> Result<Var> {
        let mu = self.eigenvalues(tape, p)?;
        attend(
            tape,
            psi_out,
            psi_in,
            h,
            mu,
            p.var(self.value_proj),
            self.normalize_attention,
        )
    }

    /// Self-attention stage on one sample using the current buffer.
    pub fn apply(&self, tape: &mut Tape, p: &Bound, g: Var, h: Var) -> Result<Var> {
        let ghat = self.project(tape, p, g)?;
        let psi = self.orthonormalize(tape, ghat)?;
        let a = self.attend(tape, p, psi, psi, h)?;
        self.nonlinearity(tape, p, a, Some(h))
    }

    /// Stage forward over a batch. In train mode the buffer is updated from the
    /// whole batch before any sample is orthonormalized.
    pub fn layer_forward(
        &mut self,
        tape: &mut Tape,
        p: &Bound,
        g_batch: &[Var],
        h_batch: &[Var],
        mode: Mode,
    ) -> Result<Vec<Var>> {
        if g_batch.len() != h_batch.len() {
            return Err(Error::ShapeMismatch("feature and state batches differ in size".into()));
        }
        let ghats = g_batch
            .iter()
            .map(|&g| self.project(tape, p, g))
            .collect::<Result<Vec<_>>>()?;
        if mode == Mode::Train {
            let values: Vec<&Tensor> = ghats.iter().map(|&v| tape.value(v)).collect();
            self.buffer.update(&values, mode)?;
        }
        ghats
            .iter()
            .zip(h_batch)
            .map(|(&ghat, &h)| {
                let psi = self.orthonormalize(tape, ghat)?;
                let a = self.attend(tape, p, psi, psi, h)?;
                self.nonlinearity(tape, p, a, Some(h))
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        let k = self.k();
        self.feature_width * k + self.width * self.width + k + 2 * self.width + self.ffn.param_count()
    }
}
