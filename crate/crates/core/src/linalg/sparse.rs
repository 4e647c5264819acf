use super::{LinalgError, Result};

/// Square sparse matrix in triplet form, compressed to CSR on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSystem {
    dimension: usize,
    spd: bool,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Outcome of a converged conjugate-gradient solve.
#[derive(Debug, Clone, PartialEq)]
pub struct CgReport {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// Final `‖A x − b‖ / ‖b‖`.
    pub relative_residual: f64,
}

impl SparseSystem {
    /// Builds the system from `(row, col, value)` triplets; duplicates are summed.
    ///
    /// With `spd` set the pattern and values must be symmetric.
    pub fn from_triplets(
        dimension: usize,
        entries: &[(usize, usize, f64)],
        spd: bool,
    ) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = Vec::with_capacity(entries.len());
        for &(r, c, v) in entries {
            if r >= dimension || c >= dimension {
                return Err(LinalgError::InvalidSystem(format!(
                    "entry ({r}, {c}) outside dimension {dimension}"
                )));
            }
            if !v.is_finite() {
                return Err(LinalgError::NonFinite);
            }
            sorted.push((r, c, v));
        }
        sorted.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; dimension + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
                continue;
            }
            col_idx.push(c);
            values.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
        for i in 0..dimension {
            row_ptr[i + 1] += row_ptr[i];
        }
        let sys = Self {
            dimension,
            spd,
            row_ptr,
            col_idx,
            values,
        };
        if spd {
            sys.check_symmetric()?;
        }
        Ok(sys)
    }

    fn check_symmetric(&self) -> Result<()> {
        for r in 0..self.dimension {
            for idx in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[idx];
                let v = self.values[idx];
                let mirror = self.entry(c, r);
                if (mirror - v).abs() > 1e-12 * v.abs().max(1.0) {
                    return Err(LinalgError::InvalidSystem(format!(
                        "SPD flag set but entry ({r}, {c}) = {v} has mirror {mirror}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn is_spd(&self) -> bool {
        self.spd
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn entry(&self, r: usize, c: usize) -> f64 {
        let cols = &self.col_idx[self.row_ptr[r]..self.row_ptr[r + 1]];
        match cols.binary_search(&c) {
            Ok(pos) => self.values[self.row_ptr[r] + pos],
            Err(_) => 0.0,
        }
    }

    /// `out = A x`.
    pub fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate().take(self.dimension) {
            let mut s = 0.0;
            for idx in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.values[idx] * x[self.col_idx[idx]];
            }
            *o = s;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dimension];
        self.matvec_into(x, &mut out);
        out
    }

    /// `‖A x − b‖ / ‖b‖` (absolute residual when `b = 0`).
    pub fn relative_residual(&self, x: &[f64], rhs: &[f64]) -> f64 {
        let ax = self.matvec(x);
        let r = ax
            .iter()
            .zip(rhs)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let nb = norm(rhs);
        if nb > 0.0 {
            r / nb
        } else {
            r
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Unpreconditioned conjugate gradient from a zero initial guess.
///
/// Stops once the recurrence residual drops below `tol * ‖rhs‖`, then confirms
/// against the true residual; a stale recurrence keeps iterating.
pub fn conjugate_gradient(
    sys: &SparseSystem,
    rhs: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<CgReport> {
    if !sys.spd {
        return Err(LinalgError::InvalidSystem(
            "conjugate gradient requires the SPD flag".into(),
        ));
    }
    if !(tol > 0.0) {
        return Err(LinalgError::InvalidSystem(format!("tolerance must be positive, got {tol}")));
    }
    let n = sys.dimension;
    if rhs.len() != n {
        return Err(LinalgError::ShapeMismatch(format!(
            "rhs has length {}, system dimension {n}",
            rhs.len()
        )));
    }
    let b_norm = norm(rhs);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(CgReport {
            solution: x,
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    // slightly tighter internal target so the true residual lands under `tol`
    let target = 0.5 * tol * b_norm;
    for it in 1..=max_iter {
        sys.matvec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(LinalgError::NotPositiveDefinite {
                index: it,
                pivot: pap,
            });
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= target {
            let rel = sys.relative_residual(&x, rhs);
            if rel <= tol {
                return Ok(CgReport {
                    solution: x,
                    iterations: it,
                    relative_residual: rel,
                });
            }
            // recurrence drifted; restart the residual from the truth
            let ax = sys.matvec(&x);
            for i in 0..n {
                r[i] = rhs[i] - ax[i];
            }
            p.copy_from_slice(&r);
            rr = dot(&r, &r);
            continue;
        }
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    Err(LinalgError::NoConvergence {
        iterations: max_iter,
        residual: sys.relative_residual(&x, rhs),
    })
}
