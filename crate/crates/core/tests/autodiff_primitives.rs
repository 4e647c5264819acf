use ono::autodiff::{grad_check, grad_check_many, AutodiffError, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Build = fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>;

fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(lo..hi)).collect())
}

/// Weighted sum so every output coordinate gets a distinct cotangent.
fn weighted_sum(t: &mut Tape, x: Var) -> Result<Var, AutodiffError> {
    let (r, c) = t.shape(x);
    let w = Tensor::matrix(r, c, (0..r * c).map(|i| 0.3 + 0.17 * i as f64).collect());
    let w = t.constant(w)?;
    let p = t.mul(x, w)?;
    t.sum(p)
}

fn check(name: &str, shapes: &[(usize, usize)], range: (f64, f64), build: Build) {
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64 * 7919);
    for trial in 0..10 {
        let points: Vec<Tensor> = shapes
            .iter()
            .map(|&(r, c)| rand_tensor(&mut rng, r, c, range.0, range.1))
            .collect();
        let err = grad_check_many(
            |t, v| {
                let out = build(t, v)?;
                weighted_sum(t, out)
            },
            &points,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{name} trial {trial}: rel err {err:e}");
    }
}

#[test]
fn matmul_gradients() {
    check("matmul", &[(3, 4), (4, 2)], (-1.0, 1.0), |t, v| t.matmul(v[0], v[1]));
    check("matmul_ta", &[(4, 3), (4, 2)], (-1.0, 1.0), |t, v| {
        t.matmul_t(v[0], v[1], true, false)
    });
    check("matmul_tb", &[(3, 4), (2, 4)], (-1.0, 1.0), |t, v| {
        t.matmul_t(v[0], v[1], false, true)
    });
    check("matmul_tt", &[(4, 3), (2, 4)], (-1.0, 1.0), |t, v| {
        t.matmul_t(v[0], v[1], true, true)
    });
}

#[test]
fn broadcasting_arithmetic_gradients() {
    check("add", &[(3, 4), (3, 4)], (-1.0, 1.0), |t, v| t.add(v[0], v[1]));
    check("add_row", &[(3, 4), (1, 4)], (-1.0, 1.0), |t, v| t.add(v[0], v[1]));
    check("sub_col", &[(3, 4), (3, 1)], (-1.0, 1.0), |t, v| t.sub(v[0], v[1]));
    check("mul_row", &[(3, 4), (1, 4)], (-1.0, 1.0), |t, v| t.mul(v[0], v[1]));
    check("mul_scalar", &[(3, 4), (1, 1)], (-1.0, 1.0), |t, v| t.mul(v[0], v[1]));
    check("div_col", &[(3, 4), (3, 1)], (0.5, 2.0), |t, v| t.div(v[0], v[1]));
    check("div_full", &[(2, 3), (2, 3)], (0.5, 2.0), |t, v| t.div(v[0], v[1]));
    check("scale", &[(2, 3)], (-1.0, 1.0), |t, v| t.scale(v[0], -2.5));
    check("add_scalar", &[(2, 3)], (-1.0, 1.0), |t, v| t.add_scalar(v[0], 4.0));
}

#[test]
fn pointwise_gradients() {
    check("gelu", &[(3, 5)], (-3.0, 3.0), |t, v| t.gelu(v[0]));
    check("elu_plus_one", &[(3, 5)], (-3.0, 3.0), |t, v| t.elu_plus_one(v[0]));
    check("tanh", &[(3, 5)], (-2.0, 2.0), |t, v| t.tanh(v[0]));
    check("exp", &[(3, 5)], (-2.0, 2.0), |t, v| t.exp(v[0]));
    check("square", &[(3, 5)], (-2.0, 2.0), |t, v| t.square(v[0]));
    check("sqrt", &[(3, 5)], (0.5, 3.0), |t, v| t.sqrt(v[0]));
    check("relu", &[(3, 5)], (0.1, 2.0), |t, v| t.relu(v[0]));
}

#[test]
fn layer_norm_gradients() {
    check("layer_norm", &[(4, 6), (1, 6), (1, 6)], (-2.0, 2.0), |t, v| {
        t.layer_norm(v[0], v[1], v[2])
    });
}

#[test]
fn reduction_and_layout_gradients() {
    check("sum", &[(3, 4)], (-1.0, 1.0), |t, v| t.sum(v[0]));
    check("mean", &[(3, 4)], (-1.0, 1.0), |t, v| t.mean(v[0]));
    check("sum_rows", &[(3, 4)], (-1.0, 1.0), |t, v| t.sum_rows(v[0]));
    check("sum_cols", &[(3, 4)], (-1.0, 1.0), |t, v| t.sum_cols(v[0]));
    check("transpose", &[(3, 4)], (-1.0, 1.0), |t, v| t.transpose(v[0]));
    check("concat_rows", &[(2, 3), (4, 3)], (-1.0, 1.0), |t, v| t.concat(v, 0));
    check("concat_cols", &[(2, 3), (2, 1)], (-1.0, 1.0), |t, v| t.concat(v, 1));
    check("slice_rows", &[(5, 3)], (-1.0, 1.0), |t, v| t.slice(v[0], 0, 1, 3));
    check("slice_cols", &[(3, 5)], (-1.0, 1.0), |t, v| t.slice(v[0], 1, 2, 2));
}

#[test]
fn factorization_gradients() {
    // SPD input built as xᵀx/n + I so every trial point is valid
    check("cholesky", &[(6, 3)], (-1.0, 1.0), |t, v| {
        let g = t.matmul_t(v[0], v[0], true, false)?;
        let g = t.scale(g, 1.0 / 6.0)?;
        let id = t.constant(Tensor::identity(3))?;
        let c = t.add(g, id)?;
        t.cholesky(c)
    });
    check("whiten_solve", &[(5, 3), (6, 3)], (-1.0, 1.0), |t, v| {
        let g = t.matmul_t(v[1], v[1], true, false)?;
        let id = t.constant(Tensor::identity(3))?;
        let c = t.add(g, id)?;
        let l = t.cholesky(c)?;
        t.whiten_solve(v[0], l)
    });
}

#[test]
fn matmul_identity_passes_values_and_ones_gradient() {
    let mut t = Tape::new();
    let id = t.constant(Tensor::identity(3)).unwrap();
    let x = t
        .leaf(Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), true)
        .unwrap();
    let y = t.matmul(id, x).unwrap();
    assert_eq!(t.value(y), t.value(x));
    let s = t.sum(y).unwrap();
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[1.0; 6]);
}

#[test]
fn square_at_three_has_gradient_six() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::scalar(3.0), true).unwrap();
    let y = t.square(x).unwrap();
    let s = t.sum(y).unwrap();
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[6.0]);
}

#[test]
fn layer_norm_of_constant_row_is_zero_with_finite_gradient() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::full(&[2, 4], 1.5), true).unwrap();
    let gamma = t.leaf(Tensor::full(&[1, 4], 1.0), true).unwrap();
    let beta = t.leaf(Tensor::zeros(&[1, 4]), true).unwrap();
    let y = t.layer_norm(x, gamma, beta).unwrap();
    assert!(t.value(y).data().iter().all(|&v| v == 0.0));
    let s = t.sum(y).unwrap();
    let g = t.backward(s).unwrap();
    assert!(g.get(x).unwrap().is_finite());
}

#[test]
fn layer_norm_rows_are_standardized() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut t = Tape::new();
    let x = t.leaf(rand_tensor(&mut rng, 5, 7, -3.0, 3.0), false).unwrap();
    let gamma = t.constant(Tensor::full(&[1, 7], 1.0)).unwrap();
    let beta = t.constant(Tensor::zeros(&[1, 7])).unwrap();
    let y = t.layer_norm(x, gamma, beta).unwrap();
    let v = t.value(y);
    for i in 0..5 {
        let row = &v.data()[i * 7..(i + 1) * 7];
        let mean = row.iter().sum::<f64>() / 7.0;
        let var = row.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 7.0;
        assert!(mean.abs() < 1e-10);
        assert!((var - 1.0).abs() < 1e-10);
    }
}

#[test]
fn linear_loss_gradient_is_input() {
    let mut t = Tape::new();
    let w = t.leaf(Tensor::row_vector(vec![0.5, -1.0, 2.0]), true).unwrap();
    let x = t.constant(Tensor::row_vector(vec![3.0, 4.0, -5.0])).unwrap();
    let p = t.mul(w, x).unwrap();
    let s = t.sum(p).unwrap();
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(w).unwrap().data(), &[3.0, 4.0, -5.0]);
}

#[test]
fn squared_norm_gradient_is_twice_input() {
    let mut t = Tape::new();
    let w = t.leaf(Tensor::row_vector(vec![0.5, -1.0, 2.0]), true).unwrap();
    let sq = t.square(w).unwrap();
    let s = t.sum(sq).unwrap();
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(w).unwrap().data(), &[1.0, -2.0, 4.0]);
}

#[test]
fn two_layer_composition_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let points = vec![
        rand_tensor(&mut rng, 4, 3, -1.0, 1.0),
        rand_tensor(&mut rng, 3, 5, -1.0, 1.0),
        rand_tensor(&mut rng, 5, 2, -1.0, 1.0),
    ];
    let err = grad_check_many(
        |t, v| {
            let h = t.matmul(v[0], v[1])?;
            let h = t.gelu(h)?;
            let o = t.matmul(h, v[2])?;
            let o = t.square(o)?;
            t.mean(o)
        },
        &points,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "{err:e}");
}

#[test]
fn gradient_of_sum_is_sum_of_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x0 = rand_tensor(&mut rng, 3, 3, -1.0, 1.0);
    let grad_of = |which: u8| {
        let mut t = Tape::new();
        let x = t.leaf(x0.clone(), true).unwrap();
        let a = t.tanh(x).unwrap();
        let a = t.sum(a).unwrap();
        let b = t.square(x).unwrap();
        let b = t.mean(b).unwrap();
        let out = match which {
            0 => a,
            1 => b,
            _ => t.add(a, b).unwrap(),
        };
        t.backward(out).unwrap().get(x).unwrap().clone()
    };
    let (ga, gb, gab) = (grad_of(0), grad_of(1), grad_of(2));
    for i in 0..9 {
        assert!((ga.data()[i] + gb.data()[i] - gab.data()[i]).abs() < 1e-14);
    }
}

#[test]
fn constant_function_has_zero_error() {
    let err = grad_check(
        |t, x| {
            let z = t.scale(x, 0.0)?;
            let z = t.add_scalar(z, 3.0)?;
            t.sum(z)
        },
        &Tensor::row_vector(vec![1.0, 2.0]),
        1e-5,
    )
    .unwrap();
    assert_eq!(err, 0.0);
}

#[test]
fn quadratic_grad_check_is_tight() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let p = rand_tensor(&mut rng, 1, 6, -2.0, 2.0);
    let err = grad_check(
        |t, x| {
            let s = t.square(x)?;
            let s = t.scale(s, 1.7)?;
            t.sum(s)
        },
        &p,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6);
}

#[test]
fn backward_errors() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::row_vector(vec![1.0, 2.0]), true).unwrap();
    let y = t.square(x).unwrap();
    assert!(matches!(t.backward(y), Err(AutodiffError::NotScalarLoss(_))));
    let s = t.sum(y).unwrap();
    t.backward(s).unwrap();
    assert_eq!(t.backward(s).unwrap_err(), AutodiffError::TapeReused);
}

#[test]
fn shape_mismatch_reports_shapes() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::zeros(&[2, 3])).unwrap();
    let b = t.constant(Tensor::zeros(&[2, 3])).unwrap();
    match t.matmul(a, b) {
        Err(AutodiffError::ShapeMismatch { op, lhs, rhs }) => {
            assert_eq!(op, "matmul");
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        other => panic!("unexpected {other:?}"),
    }
    let c = t.constant(Tensor::zeros(&[1, 2])).unwrap();
    assert!(t.add(a, c).is_err());
}

#[test]
fn grad_check_rejects_out_of_range_eps() {
    let r = grad_check(|t, x| t.sum(x), &Tensor::scalar(1.0), 1e-2);
    assert!(matches!(r, Err(AutodiffError::InvalidArgument(_))));
}
