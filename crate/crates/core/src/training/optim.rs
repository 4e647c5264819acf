//! AdamW with decoupled weight decay, and global-norm gradient clipping.

use crate::autodiff::Tensor;
use crate::params::ParamStore;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// First and second moments for every parameter of one store.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamConfig,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    /// Completed optimizer steps.
    pub step: u64,
}

impl AdamW {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    /// One update at learning rate `lr`.
    ///
    /// Parameters flagged for decay are first shrunk by `lr·wd`, then moved by
    /// the bias-corrected Adam direction. A non-finite gradient aborts the step
    /// before anything changes.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != self.m.len() || params.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} gradients for {} parameters and {} moment slots",
                grads.len(),
                params.len(),
                self.m.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if g.shape() != p.value.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "gradient {:?} for parameter {} {:?}",
                    g.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(p.name.clone()));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let decay = if p.decay { lr * c.weight_decay } else { 0.0 };
            let theta = p.value.data_mut();
            for i in 0..theta.len() {
                let gi = g.data()[i];
                let mi = c.beta1 * m.data()[i] + (1.0 - c.beta1) * gi;
                let vi = c.beta2 * v.data()[i] + (1.0 - c.beta2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                theta[i] -= decay * theta[i];
                theta[i] -= lr * (mi / bc1) / ((vi / bc2).sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`; returns the norm before scaling.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(value: f64, decay: bool) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(value), decay);
        s
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = one_param(0.7, true);
        let mut opt = AdamW::new(AdamConfig { weight_decay: 0.0, ..AdamConfig::default() }, &p);
        opt.step(&mut p, &[Tensor::scalar(0.0)], 1e-2).unwrap();
        assert_eq!(p.iter().next().unwrap().value.data(), &[0.7]);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        for g in [0.3, -2.0, 1e-3] {
            let mut p = one_param(1.0, true);
            let mut opt = AdamW::new(AdamConfig { weight_decay: 0.0, ..AdamConfig::default() }, &p);
            opt.step(&mut p, &[Tensor::scalar(g)], 1e-3).unwrap();
            // m̂ = g, v̂ = g², step = lr·g/(|g| + eps)
            let expect = 1.0 - 1e-3 * g / (g.abs() + 1e-8);
            assert!((p.iter().next().unwrap().value.data()[0] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn decay_only_shrinks_multiplicatively() {
        let mut p = one_param(2.0, true);
        let mut opt = AdamW::new(AdamConfig { weight_decay: 0.1, ..AdamConfig::default() }, &p);
        opt.step(&mut p, &[Tensor::scalar(0.0)], 0.5).unwrap();
        assert!((p.iter().next().unwrap().value.data()[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-15);

        let mut exempt = one_param(2.0, false);
        let mut opt = AdamW::new(AdamConfig { weight_decay: 0.1, ..AdamConfig::default() }, &exempt);
        opt.step(&mut exempt, &[Tensor::scalar(0.0)], 0.5).unwrap();
        assert_eq!(exempt.iter().next().unwrap().value.data(), &[2.0]);
    }

    #[test]
    fn non_finite_gradient_aborts_before_any_change() {
        let mut p = one_param(1.0, true);
        let mut opt = AdamW::new(AdamConfig::default(), &p);
        let r = opt.step(&mut p, &[Tensor::scalar(f64::NAN)], 1e-3);
        assert!(matches!(r, Err(Error::NonFiniteGradient(ref n)) if n == "w"));
        assert_eq!(opt.step, 0);
        assert_eq!(p.iter().next().unwrap().value.data(), &[1.0]);
    }

    #[test]
    fn clipping_rescales_to_the_bound() {
        let mut g = vec![Tensor::row_vector(vec![3.0, 0.0]), Tensor::scalar(4.0)];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15 && (g[1].data()[0] - 0.8).abs() < 1e-15);
        let mut small = vec![Tensor::scalar(0.5)];
        clip_grad_norm(&mut small, 1.0);
        assert_eq!(small[0].data(), &[0.5]);
    }
}
