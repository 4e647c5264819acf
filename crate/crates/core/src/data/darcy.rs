//! Two-phase Darcy flow on the unit square.

use super::grf::{gaussian_random_field, GrfParams};
use super::{Dataset, Mesh, Sample};
use crate::linalg::{conjugate_gradient, DenseMatrix, SparseSystem};
use crate::rng::indexed_stream;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Generator settings for `−∇·(a∇u) = 1` with zero Dirichlet boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DarcyParams {
    pub grf: GrfParams,
    /// Coefficient where the field is at or above its median.
    pub high: f64,
    pub low: f64,
    pub cg_tolerance: f64,
}

impl Default for DarcyParams {
    fn default() -> Self {
        Self {
            grf: GrfParams::default(),
            high: 12.0,
            low: 3.0,
            cg_tolerance: 1e-10,
        }
    }
}

/// Assembled 5-point system for the interior nodes of an `n x n` grid.
pub struct DarcySystem {
    pub system: SparseSystem,
    pub rhs: Vec<f64>,
    /// Grid index of each unknown.
    pub interior: Vec<usize>,
}

/// Face coefficients are arithmetic means of the nodal values on either side.
pub fn darcy_system(a: &[f64], n: usize) -> Result<DarcySystem> {
    if a.len() != n * n || n < 3 {
        return Err(Error::ShapeMismatch(format!(
            "coefficient of length {} on a {n} x {n} grid",
            a.len()
        )));
    }
    let h2 = (1.0 / (n - 1) as f64).powi(2);
    let m = n - 2;
    let unknown = |i: usize, j: usize| (i - 1) * m + (j - 1);
    let mut entries = Vec::with_capacity(5 * m * m);
    let mut interior = Vec::with_capacity(m * m);
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            let row = unknown(i, j);
            interior.push(i * n + j);
            let centre = a[i * n + j];
            let mut diag = 0.0;
            for (ni, nj) in [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)] {
                let face = 0.5 * (centre + a[ni * n + nj]) / h2;
                diag += face;
                if ni >= 1 && ni <= n - 2 && nj >= 1 && nj <= n - 2 {
                    entries.push((row, unknown(ni, nj), -face));
                }
            }
            entries.push((row, row, diag));
        }
    }
    Ok(DarcySystem {
        system: SparseSystem::from_triplets(m * m, &entries, true)?,
        rhs: vec![1.0; m * m],
        interior,
    })
}

fn solve_darcy2d(a: &[f64], n: usize, tol: f64) -> Result<Vec<f64>> {
    let sys = darcy_system(a, n)?;
    let report = conjugate_gradient(&sys.system, &sys.rhs, tol, 20 * sys.rhs.len().max(10))?;
    let mut u = vec![0.0; n * n];
    for (k, &g) in sys.interior.iter().enumerate() {
        u[g] = report.solution[k];
    }
    Ok(u)
}

/// `−(a u')' = 1` on `[0, 1]` with `u(0) = u(1) = 0`, same face averaging.
pub fn solve_darcy1d(a: &[f64], tol: f64) -> Result<Vec<f64>> {
    let n = a.len();
    if n < 3 {
        return Err(Error::ShapeMismatch(format!("1D grid needs 3 points, got {n}")));
    }
    let h2 = (1.0 / (n - 1) as f64).powi(2);
    let m = n - 2;
    let mut entries = Vec::with_capacity(3 * m);
    for i in 1..n - 1 {
        let west = 0.5 * (a[i] + a[i - 1]) / h2;
        let east = 0.5 * (a[i] + a[i + 1]) / h2;
        entries.push((i - 1, i - 1, west + east));
        if i > 1 {
            entries.push((i - 1, i - 2, -west));
        }
        if i < n - 2 {
            entries.push((i - 1, i, -east));
        }
    }
    let sys = SparseSystem::from_triplets(m, &entries, true)?;
    let report = conjugate_gradient(&sys, &vec![1.0; m], tol, 20 * m.max(10))?;
    let mut u = vec![0.0; n];
    u[1..n - 1].copy_from_slice(&report.solution);
    Ok(u)
}

/// Two-level coefficient from one GRF draw, thresholded at the field median.
pub fn darcy_coefficient(field: &[f64], params: &DarcyParams) -> Vec<f64> {
    let mut sorted = field.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let median = sorted[sorted.len() / 2];
    field
        .iter()
        .map(|&v| if v >= median { params.high } else { params.low })
        .collect()
}

/// `n` samples on a `resolution x resolution` grid; sample `i` draws from its own stream.
pub fn generate_darcy2d(n: usize, resolution: usize, seed: u64, params: &DarcyParams) -> Result<Dataset> {
    if resolution < 8 {
        return Err(Error::InvalidConfig(format!("Darcy resolution must be ≥ 8, got {resolution}")));
    }
    let mesh = Mesh::grid_2d(resolution);
    let cells = resolution * resolution;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = indexed_stream(seed, "darcy", i as u64);
        let field = gaussian_random_field(&mut rng, resolution, &params.grf);
        let a = darcy_coefficient(&field, params);
        let u = solve_darcy2d(&a, resolution, params.cg_tolerance)?;
        samples.push(Sample {
            f: DenseMatrix::from_vec(cells, 1, a)?,
            u: DenseMatrix::from_vec(cells, 1, u)?,
        });
    }
    Dataset::new(mesh, samples, 1, 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_coefficient_1d_matches_parabola() {
        for n in [9usize, 33, 65] {
            let u = solve_darcy1d(&vec![1.0; n], 1e-12).unwrap();
            let h = 1.0 / (n - 1) as f64;
            let err = u
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let x = i as f64 * h;
                    (v - x * (1.0 - x) / 2.0).abs()
                })
                .fold(0.0, f64::max);
            // the 3-point stencil is exact on quadratics, so only solver error remains
            assert!(err < 1e-9, "n={n}: {err}");
        }
    }

    #[test]
    fn coefficient_takes_two_levels_split_at_median() {
        let field: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = darcy_coefficient(&field, &DarcyParams::default());
        let high = a.iter().filter(|&&v| v == 12.0).count();
        assert_eq!(high + a.iter().filter(|&&v| v == 3.0).count(), 100);
        assert_eq!(high, 50);
    }

    #[test]
    fn resolution_below_eight_is_rejected() {
        assert!(generate_darcy2d(1, 7, 0, &DarcyParams::default()).is_err());
    }
}
