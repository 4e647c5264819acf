use super::{AutodiffError, Result, Tape, Tensor, Var};

/// `|analytic − numeric| / (|analytic| + |numeric| + 1e-12)`.
pub fn central_difference_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12)
}

/// Compares reverse-mode gradients of a scalar function against central differences.
///
/// `f` builds the function on a fresh tape from the leaf it is given. Returns
/// the worst [`central_difference_error`] over all coordinates of `point`.
pub fn grad_check<F>(mut f: F, point: &Tensor, eps: f64) -> Result<f64>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(point), eps)
}

/// [`grad_check`] over several input tensors at once.
pub fn grad_check_many<F>(mut f: F, points: &[Tensor], eps: f64) -> Result<f64>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(AutodiffError::InvalidArgument(format!(
            "finite-difference step {eps} outside [1e-7, 1e-3]"
        )));
    }
    let mut eval = |inputs: &[Tensor], want_grad: bool| -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let vars = inputs
            .iter()
            .map(|t| tape.leaf(t.clone(), want_grad))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&mut tape, &vars)?;
        let value = tape
            .value(out)
            .item()
            .ok_or_else(|| AutodiffError::NotScalarLoss(tape.value(out).shape().to_vec()))?;
        if !want_grad {
            return Ok((value, Vec::new()));
        }
        let grads = tape.backward(out)?;
        let gs = vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        Ok((value, gs))
    };

    let (_, analytic) = eval(points, true)?;
    let mut worst = 0.0f64;
    let mut probe: Vec<Tensor> = points.to_vec();
    for (ti, t) in points.iter().enumerate() {
        for ci in 0..t.numel() {
            let x0 = t.data()[ci];
            probe[ti].data_mut()[ci] = x0 + eps;
            let (fp, _) = eval(&probe, false)?;
            probe[ti].data_mut()[ci] = x0 - eps;
            let (fm, _) = eval(&probe, false)?;
            probe[ti].data_mut()[ci] = x0;
            let numeric = (fp - fm) / (2.0 * eps);
            worst = worst.max(central_difference_error(analytic[ti].data()[ci], numeric));
        }
    }
    Ok(worst)
}
