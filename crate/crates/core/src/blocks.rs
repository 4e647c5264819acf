//! Feature pathway: pointwise encoder and the linear-attention transformer block.

use crate::autodiff::{Result, Tape, Var};
use crate::layers::{FeedForward, LayerNorm, Linear};
use crate::params::{Bound, ParamStore};
use rand::Rng;

/// Stabilizer added to the linear-attention normalizer.
pub const LINEAR_ATTENTION_EPS: f64 = 1e-6;

/// Pointwise lifting of `(x_j, f(x_j))` into the two pathways.
///
/// A shared hidden layer of width `2·d′` feeds two heads: one producing the
/// feature-pathway state `g` (width `d′`), one the solution-pathway state `h`
/// (width `d`).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderMlp {
    pub trunk: Linear,
    pub feature_head: Linear,
    pub state_head: Linear,
}

impl EncoderMlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        in_dim: usize,
        feature_width: usize,
        width: usize,
        init_std: f64,
    ) -> Self {
        let hidden = 2 * feature_width;
        Self {
            trunk: Linear::new(store, rng, "encoder.trunk", in_dim, hidden, true, init_std),
            feature_head: Linear::new(
                store,
                rng,
                "encoder.feature_head",
                hidden,
                feature_width,
                true,
                init_std,
            ),
            state_head: Linear::new(store, rng, "encoder.state_head", hidden, width, true, init_std),
        }
    }

    /// Returns `(g, h)` for an `M x (d₀ + d_f)` input.
    pub fn encode(&self, tape: &mut Tape, p: &Bound, input: Var) -> Result<(Var, Var)> {
        let t = self.trunk.forward(tape, p, input)?;
        let t = tape.gelu(t)?;
        let g = self.feature_head.forward(tape, p, t)?;
        let h = self.state_head.forward(tape, p, t)?;
        Ok((g, h))
    }

    pub fn param_count(&self) -> usize {
        self.trunk.param_count() + self.feature_head.param_count() + self.state_head.param_count()
    }
}

/// Softmax-free attention with the feature map `φ(x) = elu(x) + 1`.
///
/// `out_i = φ(q_i)·[Σ_j φ(k_j)ᵀ v_j] / (φ(q_i)·Σ_j φ(k_j)ᵀ + ε)`; the key/value
/// summaries are built once, so the cost is linear in the number of rows.
/// Queries and keys may come from different point sets.
pub fn linear_attention(tape: &mut Tape, q: Var, k: Var, v: Var) -> Result<Var> {
    let fq = tape.elu_plus_one(q)?;
    let fk = tape.elu_plus_one(k)?;
    let kv = tape.matmul_t(fk, v, true, false)?; // d x d_v
    let ksum = tape.sum_rows(fk)?; // 1 x d
    let num = tape.matmul(fq, kv)?; // M x d_v
    let den = tape.matmul_t(fq, ksum, false, true)?; // M x 1
    let den = tape.add_scalar(den, LINEAR_ATTENTION_EPS)?;
    tape.div(num, den)
}

/// Pre-norm transformer block with linear attention:
/// `g̃ = g + Attn(LN(g))`, `out = g̃ + FFN(LN(g̃))`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearAttnBlock {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub attn_norm: LayerNorm,
    pub ffn_norm: LayerNorm,
    pub ffn: FeedForward,
}

impl LinearAttnBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        width: usize,
        init_std: f64,
    ) -> Self {
        Self {
            query: Linear::new(store, rng, &format!("{name}.query"), width, width, false, init_std),
            key: Linear::new(store, rng, &format!("{name}.key"), width, width, false, init_std),
            value: Linear::new(store, rng, &format!("{name}.value"), width, width, false, init_std),
            attn_norm: LayerNorm::new(store, &format!("{name}.attn_norm"), width),
            ffn_norm: LayerNorm::new(store, &format!("{name}.ffn_norm"), width),
            ffn: FeedForward::new(store, rng, &format!("{name}.ffn"), width, 4 * width, width, init_std),
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, g: Var) -> Result<Var> {
        self.forward_cross(tape, p, g, g)
    }

    /// Block update of `g` whose attention reads keys and values from `context`.
    ///
    /// With `context == g` this is the ordinary self-attention block. Every
    /// output row depends only on its own input row and on `context`.
    pub fn forward_cross(&self, tape: &mut Tape, p: &Bound, g: Var, context: Var) -> Result<Var> {
        let n = self.attn_norm.forward(tape, p, g)?;
        let nc = if context == g {
            n
        } else {
            self.attn_norm.forward(tape, p, context)?
        };
        let q = self.query.forward(tape, p, n)?;
        let k = self.key.forward(tape, p, nc)?;
        let v = self.value.forward(tape, p, nc)?;
        let a = linear_attention(tape, q, k, v)?;
        let g_mid = tape.add(g, a)?;
        let n2 = self.ffn_norm.forward(tape, p, g_mid)?;
        let f = self.ffn.forward(tape, p, n2)?;
        tape.add(g_mid, f)
    }

    pub fn param_count(&self) -> usize {
        self.query.param_count()
            + self.key.param_count()
            + self.value.param_count()
            + 4 * self.attn_norm.dim
            + self.ffn.param_count()
    }
}
