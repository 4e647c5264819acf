use super::{DenseMatrix, LinalgError, Result};

/// Relative pivot floor: a pivot at or below `PIVOT_FLOOR * max(diag)` triggers the jitter retry.
const PIVOT_FLOOR: f64 = 1e-12;
/// Jitter added to the whole diagonal, as a fraction of the mean diagonal.
const JITTER_FRACTION: f64 = 1e-6;
const SYMMETRY_TOL: f64 = 1e-10;

/// Lower Cholesky factor together with the diagonal jitter that was needed to obtain it.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    pub lower: DenseMatrix,
    /// Amount added to every diagonal entry before factorizing (0 when none was needed).
    pub jitter: f64,
}

/// Cholesky factor `L` with `L Lᵀ = c`, applying the jitter retry when needed.
pub fn cholesky(c: &DenseMatrix) -> Result<DenseMatrix> {
    cholesky_jittered(c).map(|f| f.lower)
}

/// Cholesky factorization with a single diagonal-jitter retry.
///
/// If a pivot falls to `1e-12 * max(diag)` or below, `1e-6 * mean(diag)` is
/// added to the whole diagonal and the factorization is attempted once more.
pub fn cholesky_jittered(c: &DenseMatrix) -> Result<CholeskyFactor> {
    if !c.is_square() {
        return Err(LinalgError::ShapeMismatch(format!(
            "cholesky needs a square matrix, got {}x{}",
            c.rows(),
            c.cols()
        )));
    }
    if !c.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let asym = c.asymmetry().unwrap_or(0.0);
    if asym > SYMMETRY_TOL * c.max_abs().max(1.0) {
        return Err(LinalgError::NotSymmetric(asym));
    }
    let n = c.rows();
    if n == 0 {
        return Ok(CholeskyFactor {
            lower: DenseMatrix::zeros(0, 0),
            jitter: 0.0,
        });
    }
    let diag = c.diag();
    let max_diag = diag.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let floor = PIVOT_FLOOR * max_diag.max(0.0);
    match factorize(c, 0.0, floor) {
        Ok(lower) => Ok(CholeskyFactor { lower, jitter: 0.0 }),
        Err(_) => {
            let mean_diag = diag.iter().sum::<f64>() / n as f64;
            let jitter = JITTER_FRACTION * mean_diag.abs();
            let lower = factorize(c, jitter, floor)?;
            Ok(CholeskyFactor { lower, jitter })
        }
    }
}

fn factorize(c: &DenseMatrix, jitter: f64, floor: f64) -> Result<DenseMatrix> {
    let n = c.rows();
    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut pivot = c.get(j, j) + jitter;
        for p in 0..j {
            let v = l.get(j, p);
            pivot -= v * v;
        }
        if !(pivot > floor) {
            return Err(LinalgError::NotPositiveDefinite { index: j, pivot });
        }
        let d = pivot.sqrt();
        l.set(j, j, d);
        for i in (j + 1)..n {
            // Use the lower triangle of `c`; the symmetry check above bounds the difference.
            let mut s = c.get(i, j);
            for p in 0..j {
                s -= l.get(i, p) * l.get(j, p);
            }
            l.set(i, j, s / d);
        }
    }
    Ok(l)
}

/// Solves `l x = b` (or `lᵀ x = b` when `transpose_l`) for lower-triangular `l`.
///
/// `b` may hold several right-hand sides as columns.
pub fn solve_triangular(l: &DenseMatrix, b: &DenseMatrix, transpose_l: bool) -> Result<DenseMatrix> {
    if !l.is_square() || l.rows() != b.rows() {
        return Err(LinalgError::ShapeMismatch(format!(
            "triangular solve with {}x{} factor and {}x{} rhs",
            l.rows(),
            l.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let n = l.rows();
    if let Some(i) = (0..n).find(|&i| l.get(i, i) == 0.0) {
        return Err(LinalgError::SingularFactor(i));
    }
    let m = b.cols();
    let mut x = b.clone();
    if !transpose_l {
        for i in 0..n {
            for c in 0..m {
                let mut s = x.get(i, c);
                for p in 0..i {
                    s -= l.get(i, p) * x.get(p, c);
                }
                x.set(i, c, s / l.get(i, i));
            }
        }
    } else {
        for i in (0..n).rev() {
            for c in 0..m {
                let mut s = x.get(i, c);
                for p in (i + 1)..n {
                    s -= l.get(p, i) * x.get(p, c);
                }
                x.set(i, c, s / l.get(i, i));
            }
        }
    }
    Ok(x)
}

/// `L⁻ᵀ` for a lower-triangular `L`, obtained column by column from triangular solves.
///
/// Right-multiplying features by this matrix whitens them against `L Lᵀ`.
pub fn inverse_lower_transpose(l: &DenseMatrix) -> Result<DenseMatrix> {
    let identity = DenseMatrix::identity(l.rows());
    // Lᵀ X = I  =>  X = L⁻ᵀ
    solve_triangular(l, &identity, true)
}
