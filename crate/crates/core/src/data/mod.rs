//! Synthetic PDE datasets, meshes, resampling and the `ONOD` file format.

mod darcy;
mod format;
mod grf;
mod poisson;

pub use darcy::{darcy_coefficient, darcy_system, generate_darcy2d, solve_darcy1d, DarcyParams, DarcySystem};
pub use format::{load_dataset, save_dataset, FORMAT_VERSION, MAGIC};
pub use grf::{gaussian_random_field, GrfParams};
pub use poisson::{generate_poisson1d, poisson1d_pair, PoissonParams, POISSON_MODES};

use crate::linalg::DenseMatrix;
use crate::model::Normalizer;
use crate::rng::stream;
use crate::{Error, Result};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

/// Regular-grid metadata: `nx x ny` points with uniform `spacing`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub nx: usize,
    pub ny: usize,
    pub spacing: f64,
}

/// Discretization points, optionally tagged as a regular grid.
///
/// Grid points are enumerated with the `x` index outermost:
/// point `i * ny + j` sits at `(i·h, j·h)`. One-dimensional grids use `ny = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub points: DenseMatrix,
    pub grid: Option<GridMeta>,
}

impl Mesh {
    /// `n` evenly spaced points on `[0, 1]`.
    pub fn grid_1d(n: usize) -> Self {
        let h = if n > 1 { 1.0 / (n - 1) as f64 } else { 1.0 };
        let pts: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
        Self {
            points: DenseMatrix::from_vec(n, 1, pts).expect("n x 1"),
            grid: Some(GridMeta {
                nx: n,
                ny: 1,
                spacing: h,
            }),
        }
    }

    /// `n x n` grid on the unit square.
    pub fn grid_2d(n: usize) -> Self {
        let h = if n > 1 { 1.0 / (n - 1) as f64 } else { 1.0 };
        let mut pts = Vec::with_capacity(2 * n * n);
        for i in 0..n {
            for j in 0..n {
                pts.push(i as f64 * h);
                pts.push(j as f64 * h);
            }
        }
        Self {
            points: DenseMatrix::from_vec(n * n, 2, pts).expect("n² x 2"),
            grid: Some(GridMeta {
                nx: n,
                ny: n,
                spacing: h,
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    /// Row indices kept by a strided restriction of the grid.
    pub fn subsample_indices(&self, factor: usize) -> Result<(Vec<usize>, GridMeta)> {
        let g = self.grid.ok_or(Error::NotAGrid)?;
        if factor == 0 {
            return Err(Error::IncompatibleFactor { factor, extent: g.nx - 1 });
        }
        for extent in [g.nx.saturating_sub(1), g.ny.saturating_sub(1)] {
            if extent % factor != 0 {
                return Err(Error::IncompatibleFactor { factor, extent });
            }
        }
        let nx = (g.nx - 1) / factor + 1;
        let ny = if g.ny > 1 { (g.ny - 1) / factor + 1 } else { 1 };
        let mut idx = Vec::with_capacity(nx * ny);
        for i in 0..nx {
            for j in 0..ny {
                idx.push(i * factor * g.ny + j * factor);
            }
        }
        Ok((
            idx,
            GridMeta {
                nx,
                ny,
                spacing: g.spacing * factor as f64,
            },
        ))
    }

    pub fn subsample(&self, factor: usize) -> Result<Mesh> {
        let (idx, grid) = self.subsample_indices(factor)?;
        Ok(Mesh {
            points: self.points.select_rows(&idx),
            grid: Some(grid),
        })
    }
}

/// Input function and solution sampled on one mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionPair {
    pub mesh: Mesh,
    pub f_values: DenseMatrix,
    pub u_values: DenseMatrix,
}

impl FunctionPair {
    pub fn new(mesh: Mesh, f_values: DenseMatrix, u_values: DenseMatrix) -> Result<Self> {
        if f_values.rows() != mesh.len() || u_values.rows() != mesh.len() {
            return Err(Error::ShapeMismatch(format!(
                "mesh has {} points, f {:?}, u {:?}",
                mesh.len(),
                f_values.shape(),
                u_values.shape()
            )));
        }
        Ok(Self {
            mesh,
            f_values,
            u_values,
        })
    }
}

/// Strided grid restriction of mesh, input and solution.
pub fn subsample(pair: &FunctionPair, factor: usize) -> Result<FunctionPair> {
    let (idx, grid) = pair.mesh.subsample_indices(factor)?;
    Ok(FunctionPair {
        mesh: Mesh {
            points: pair.mesh.points.select_rows(&idx),
            grid: Some(grid),
        },
        f_values: pair.f_values.select_rows(&idx),
        u_values: pair.u_values.select_rows(&idx),
    })
}

/// One input/solution sample on the dataset mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub f: DenseMatrix,
    pub u: DenseMatrix,
}

/// `N` function pairs sharing one mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub mesh: Mesh,
    pub samples: Vec<Sample>,
    /// Channel counts, kept explicitly so empty datasets still know them.
    pub f_channels: usize,
    pub u_channels: usize,
}

impl Dataset {
    pub fn new(mesh: Mesh, samples: Vec<Sample>, f_channels: usize, u_channels: usize) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if s.f.shape() != (mesh.len(), f_channels) || s.u.shape() != (mesh.len(), u_channels) {
                return Err(Error::ShapeMismatch(format!(
                    "sample {i}: f {:?}, u {:?} on a {}-point mesh with ({f_channels}, {u_channels}) channels",
                    s.f.shape(),
                    s.u.shape(),
                    mesh.len()
                )));
            }
            if !s.f.is_finite() || !s.u.is_finite() {
                return Err(Error::Malformed(format!("sample {i} has non-finite values")));
            }
        }
        Ok(Self {
            mesh,
            samples,
            f_channels,
            u_channels,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn pair(&self, i: usize) -> FunctionPair {
        FunctionPair {
            mesh: self.mesh.clone(),
            f_values: self.samples[i].f.clone(),
            u_values: self.samples[i].u.clone(),
        }
    }

    /// Strided restriction of every sample.
    pub fn subsample(&self, factor: usize) -> Result<Dataset> {
        let (idx, grid) = self.mesh.subsample_indices(factor)?;
        Ok(Dataset {
            mesh: Mesh {
                points: self.mesh.points.select_rows(&idx),
                grid: Some(grid),
            },
            samples: self
                .samples
                .iter()
                .map(|s| Sample {
                    f: s.f.select_rows(&idx),
                    u: s.u.select_rows(&idx),
                })
                .collect(),
            f_channels: self.f_channels,
            u_channels: self.u_channels,
        })
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            mesh: self.mesh.clone(),
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            f_channels: self.f_channels,
            u_channels: self.u_channels,
        }
    }

    /// Per-channel mean/std of `f` and `u` over the listed samples.
    pub fn fit_normalizer(&self, indices: &[usize]) -> Normalizer {
        let stats = |get: &dyn Fn(&Sample) -> &DenseMatrix, c: usize| -> (Vec<f64>, Vec<f64>) {
            let mut sum = vec![0.0; c];
            let mut sq = vec![0.0; c];
            let mut n = 0usize;
            for &i in indices {
                let m = get(&self.samples[i]);
                for r in 0..m.rows() {
                    for (j, v) in m.row(r).iter().enumerate() {
                        sum[j] += v;
                        sq[j] += v * v;
                    }
                }
                n += m.rows();
            }
            if n == 0 {
                return (vec![0.0; c], vec![1.0; c]);
            }
            let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
            let std = sq
                .iter()
                .zip(&mean)
                .map(|(q, m)| {
                    let var = (q / n as f64 - m * m).max(0.0);
                    if var.sqrt() > 1e-12 {
                        var.sqrt()
                    } else {
                        1.0
                    }
                })
                .collect();
            (mean, std)
        };
        let (input_mean, input_std) = stats(&|s| &s.f, self.f_channels);
        let (output_mean, output_std) = stats(&|s| &s.u, self.u_channels);
        Normalizer {
            input_mean,
            input_std,
            output_mean,
            output_std,
        }
    }
}

/// Index split into train/validation/test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// 80/10/10 split of `0..n` after a shuffle drawn from the `"split"` stream of `seed`.
pub fn split_indices(n: usize, seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, "split"));
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    Split {
        train: idx[..n_train].to_vec(),
        val: idx[n_train..n_train + n_val].to_vec(),
        test: idx[n_train + n_val..].to_vec(),
    }
}
