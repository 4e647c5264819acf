//! Analytic 1D Poisson pairs `−u'' = f`, `u(0) = u(1) = 0`.

use super::{Dataset, FunctionPair, Mesh, Sample};
use crate::linalg::DenseMatrix;
use crate::rng::indexed_stream;
use crate::Result;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Number of sine modes in the random source.
pub const POISSON_MODES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoissonParams {
    pub modes: usize,
}

impl Default for PoissonParams {
    fn default() -> Self {
        Self {
            modes: POISSON_MODES,
        }
    }
}

/// `f = Σ c_m sin(mπx)` and its exact solution `u = Σ c_m sin(mπx)/(mπ)²`.
pub fn poisson1d_pair(coeffs: &[f64], resolution: usize) -> FunctionPair {
    let mesh = Mesh::grid_1d(resolution);
    let mut f = vec![0.0; resolution];
    let mut u = vec![0.0; resolution];
    for (j, (fj, uj)) in f.iter_mut().zip(u.iter_mut()).enumerate() {
        let x = mesh.points.get(j, 0);
        for (m, c) in coeffs.iter().enumerate() {
            let k = (m + 1) as f64 * PI;
            let s = (k * x).sin();
            *fj += c * s;
            *uj += c * s / (k * k);
        }
    }
    FunctionPair {
        f_values: DenseMatrix::from_vec(resolution, 1, f).expect("M x 1"),
        u_values: DenseMatrix::from_vec(resolution, 1, u).expect("M x 1"),
        mesh,
    }
}

/// `n` pairs with standard-normal coefficients; sample `i` draws from its own stream.
pub fn generate_poisson1d(n: usize, resolution: usize, seed: u64, params: &PoissonParams) -> Result<Dataset> {
    let mesh = Mesh::grid_1d(resolution);
    let samples = (0..n)
        .map(|i| {
            let mut rng = indexed_stream(seed, "poisson1d", i as u64);
            let coeffs: Vec<f64> = (0..params.modes).map(|_| rng.sample(StandardNormal)).collect();
            let pair = poisson1d_pair(&coeffs, resolution);
            Sample {
                f: pair.f_values,
                u: pair.u_values,
            }
        })
        .collect();
    Dataset::new(mesh, samples, 1, 1)
}
