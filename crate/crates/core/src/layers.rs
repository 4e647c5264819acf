//! Small building blocks shared by both pathways.

use crate::autodiff::{Result, Tape, Tensor, Var};
use crate::params::{truncated_normal, Bound, ParamId, ParamStore};
use rand::Rng;

/// Affine map `x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        init_std: f64,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            truncated_normal(rng, in_dim, out_dim, init_std),
            true,
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[1, out_dim]), true));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p.var(self.weight))?;
        match self.bias {
            Some(b) => tape.add(y, p.var(b)),
            None => Ok(y),
        }
    }

    pub fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + if self.bias.is_some() { self.out_dim } else { 0 }
    }
}

/// Layer-norm affine parameters, excluded from weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[1, dim], 1.0), false),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[1, dim]), false),
            dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        tape.layer_norm(x, p.var(self.gamma), p.var(self.beta))
    }
}

/// Two-layer feed-forward network with a GELU in between.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        init_std: f64,
    ) -> Self {
        Self {
            inner: Linear::new(store, rng, &format!("{name}.inner"), in_dim, hidden, true, init_std),
            outer: Linear::new(store, rng, &format!("{name}.outer"), hidden, out_dim, true, init_std),
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let h = self.inner.forward(tape, p, x)?;
        let h = tape.gelu(h)?;
        self.outer.forward(tape, p, h)
    }

    pub fn param_count(&self) -> usize {
        self.inner.param_count() + self.outer.param_count()
    }
}
