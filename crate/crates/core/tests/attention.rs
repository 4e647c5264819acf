use ono::attention::{attend, CovarianceBuffer, Mode, OrthoAttentionLayer};
use ono::autodiff::{grad_check_many, Tape, Tensor};
use ono::linalg::{sym_eig, DenseMatrix};
use ono::params::{Bound, ParamStore};
use ono::rng::stream;
use ono::Error;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn layer(store: &mut ParamStore, rng: &mut ChaCha8Rng, dp: usize, d: usize, k: usize, momentum: f64) -> OrthoAttentionLayer {
    OrthoAttentionLayer::new(store, rng, "ortho", dp, d, k, d, momentum, true, 0.5).unwrap()
}

fn naive_matmul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut s = 0.0;
            for l in 0..a.cols() {
                s += a.get(i, l) * b.get(l, j);
            }
            out.set(i, j, s);
        }
    }
    out
}

/// Empirical `(1/ΣM) Σ ψᵀψ`.
fn empirical_cov(psis: &[DenseMatrix]) -> DenseMatrix {
    let k = psis[0].cols();
    let mut acc = DenseMatrix::zeros(k, k);
    let mut rows = 0;
    for p in psis {
        acc = acc.add(&naive_matmul(&p.transpose(), p)).unwrap();
        rows += p.rows();
    }
    acc.scale(1.0 / rows as f64)
}

#[test]
fn project_matches_oracles() {
    let mut rng = stream(0, "t");
    let mut store = ParamStore::new();
    let l = layer(&mut store, &mut rng, 6, 4, 3, 0.1);
    let g = random(&mut rng, 10, 6);

    let mut tape = Tape::new();
    let p = store.bind(&mut tape, false).unwrap();
    let gv = tape.constant(g.clone()).unwrap();
    let ghat = l.project(&mut tape, &p, gv).unwrap();
    let oracle = naive_matmul(&g.to_dense(), &store.get(l.query_proj).to_dense());
    assert!(tape.value(ghat).to_dense().max_abs_diff(&oracle) < 1e-12);

    // selector picks the first k columns
    let mut sel = DenseMatrix::zeros(6, 3);
    for i in 0..3 {
        sel.set(i, i, 1.0);
    }
    *store.get_mut(l.query_proj) = Tensor::from(sel);
    let mut tape = Tape::new();
    let p = store.bind(&mut tape, false).unwrap();
    let gv = tape.constant(g.clone()).unwrap();
    let ghat = l.project(&mut tape, &p, gv).unwrap();
    assert_eq!(tape.value(ghat).to_dense(), g.to_dense().columns(0, 3));

    *store.get_mut(l.query_proj) = Tensor::zeros(&[6, 3]);
    let mut tape = Tape::new();
    let p = store.bind(&mut tape, false).unwrap();
    let gv = tape.constant(g).unwrap();
    let ghat = l.project(&mut tape, &p, gv).unwrap();
    assert_eq!(tape.value(ghat).to_dense().max_abs(), 0.0);
}

#[test]
fn update_examples() {
    let mut rng = stream(1, "t");
    let a = random(&mut rng, 20, 3);
    let b = random(&mut rng, 20, 3);

    let mut full = CovarianceBuffer::new(3, 1.0).unwrap();
    full.update(&[&a], Mode::Train).unwrap();
    full.update(&[&b], Mode::Train).unwrap();
    let batch = CovarianceBuffer::batch_covariance(&[&b]).unwrap();
    assert!(full.covariance().max_abs_diff(&batch) < 1e-15);

    // identity prior blended with 2·I at momentum 0.1
    let sqrt2 = 2f64.sqrt();
    let white = Tensor::matrix(2, 2, vec![sqrt2, 0.0, 0.0, sqrt2]);
    let id = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
    let mut buf = CovarianceBuffer::new(2, 0.1).unwrap();
    buf.update(&[&id], Mode::Train).unwrap();
    assert!(buf.covariance().max_abs_diff(&DenseMatrix::identity(2).scale(0.5)) < 1e-15);
    let mut buf = CovarianceBuffer::restore(DenseMatrix::identity(2), DenseMatrix::identity(2), 0.1, true).unwrap();
    let two = Tensor::matrix(2, 2, vec![2.0, 0.0, 0.0, 2.0]);
    assert_eq!(CovarianceBuffer::batch_covariance(&[&two]).unwrap(), DenseMatrix::identity(2).scale(2.0));
    buf.update(&[&two], Mode::Train).unwrap();
    assert!(buf.covariance().max_abs_diff(&DenseMatrix::identity(2).scale(1.1)) < 1e-14);

    // already white: M = 2, ĝ = √2·I gives (1/M) ĝᵀĝ = I
    let mut fresh = CovarianceBuffer::new(2, 0.1).unwrap();
    fresh.update(&[&white], Mode::Train).unwrap();
    assert!(fresh.covariance().max_abs_diff(&DenseMatrix::identity(2)) < 1e-14);
    assert!(fresh.chol().max_abs_diff(&DenseMatrix::identity(2)) < 1e-14);

    // a zero batch is singular even after the jitter retry
    let mut dead = CovarianceBuffer::new(2, 0.1).unwrap();
    let zeros = Tensor::zeros(&[4, 2]);
    assert!(dead.update(&[&zeros], Mode::Train).is_err());
    assert!(!dead.is_initialized());

    // eval mode leaves everything untouched
    let before = fresh.clone();
    fresh.update(&[&a.clone()], Mode::Eval).ok();
    assert_eq!(before, fresh);
}

#[test]
fn orthonormalize_examples() {
    let mut rng = stream(2, "t");
    let ghat = random(&mut rng, 12, 4);
    let white = CovarianceBuffer::restore(DenseMatrix::identity(4), DenseMatrix::identity(4), 0.1, true).unwrap();
    assert_eq!(white.orthonormalize(&ghat.to_dense()).unwrap(), ghat.to_dense());

    let mut buf = CovarianceBuffer::new(4, 1.0).unwrap();
    buf.update(&[&ghat], Mode::Train).unwrap();
    let psi = buf.orthonormalize(&ghat.to_dense()).unwrap();
    assert!(empirical_cov(&[psi.clone()]).max_abs_diff(&DenseMatrix::identity(4)) < 1e-8);

    let scaled = Tensor::from(ghat.to_dense().scale(3.0));
    let mut buf3 = CovarianceBuffer::new(4, 1.0).unwrap();
    buf3.update(&[&scaled], Mode::Train).unwrap();
    let psi3 = buf3.orthonormalize(&scaled.to_dense()).unwrap();
    assert!(psi3.max_abs_diff(&psi) < 1e-12);

    let cold = CovarianceBuffer::new(4, 0.1).unwrap();
    assert!(matches!(cold.orthonormalize(&ghat.to_dense()), Err(Error::UninitializedBuffer)));
}

#[test]
fn whitening_identity_over_fifty_batches() {
    let mut rng = stream(3, "whiten");
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.gen_range(1..4);
        let k = rng.gen_range(2..9);
        // correlated features: random mixing of white noise
        let mix = random(&mut rng, k, k).to_dense();
        let batch: Vec<Tensor> = (0..n)
            .map(|_| {
                let m = rng.gen_range(k + 4..40);
                Tensor::from(random(&mut rng, m, k).to_dense().matmul(&mix).unwrap())
            })
            .collect();
        let refs: Vec<&Tensor> = batch.iter().collect();
        let mut buf = CovarianceBuffer::new(k, 1.0).unwrap();
        buf.update(&refs, Mode::Train).unwrap();
        let psis: Vec<DenseMatrix> = batch.iter().map(|g| buf.orthonormalize(&g.to_dense()).unwrap()).collect();
        worst = worst.max(empirical_cov(&psis).max_abs_diff(&DenseMatrix::identity(k)));
    }
    assert!(worst < 1e-8, "worst deviation {worst}");
}

#[test]
fn attend_examples() {
    let mut rng = stream(4, "t");
    let (m, mp, k, d) = (9, 5, 3, 4);
    let psi_in = random(&mut rng, m, k);
    let psi_out = random(&mut rng, mp, k);
    let h = random(&mut rng, m, d);
    let mu = Tensor::row_vector(vec![0.5, 1.5, 2.0]);
    let wv = random(&mut rng, d, d);

    let mut tape = Tape::new();
    let vars: Vec<_> = [&psi_out, &psi_in, &h, &mu, &wv].iter().map(|t| tape.constant((*t).clone()).unwrap()).collect();
    let out = attend(&mut tape, vars[0], vars[1], vars[2], vars[3], vars[4], true).unwrap();
    let out = tape.value(out).to_dense();

    // contraction, eigenvalue scaling, projection, each by explicit loops
    let coeff = naive_matmul(&psi_in.to_dense().transpose(), &h.to_dense()).scale(1.0 / m as f64);
    let mut scaled = coeff.clone();
    for i in 0..k {
        for j in 0..d {
            scaled.set(i, j, coeff.get(i, j) * mu.data()[i]);
        }
    }
    let oracle = naive_matmul(&naive_matmul(&psi_out.to_dense(), &scaled), &wv.to_dense());
    assert!(out.max_abs_diff(&oracle) < 1e-12);

    // rank-k: output lies in span(psi_out)
    let po = psi_out.to_dense();
    let gram = naive_matmul(&po.transpose(), &po);
    let proj_coef = ono::linalg::cholesky(&gram).unwrap();
    let rhs = naive_matmul(&po.transpose(), &out);
    let y = ono::linalg::solve_triangular(&proj_coef, &rhs, false).unwrap();
    let c = ono::linalg::solve_triangular(&proj_coef, &y, true).unwrap();
    let resid = out.sub(&naive_matmul(&po, &c)).unwrap();
    assert!(resid.max_abs() < 1e-8);

    // μ = 0 kills the output
    let mut tape = Tape::new();
    let zero_mu = tape.constant(Tensor::zeros(&[1, k])).unwrap();
    let vars: Vec<_> = [&psi_out, &psi_in, &h, &wv].iter().map(|t| tape.constant((*t).clone()).unwrap()).collect();
    let out = attend(&mut tape, vars[0], vars[1], vars[2], zero_mu, vars[3], true).unwrap();
    assert_eq!(tape.value(out).to_dense().max_abs(), 0.0);

    // M = k, ψ = √M·I, μ = 1, w_v = I  →  output == h
    let mut tape = Tape::new();
    let psi = tape.constant(Tensor::from(DenseMatrix::identity(k).scale((k as f64).sqrt()))).unwrap();
    let hk = random(&mut rng, k, d);
    let hv = tape.constant(hk.clone()).unwrap();
    let one = tape.constant(Tensor::full(&[1, k], 1.0)).unwrap();
    let eye = tape.constant(Tensor::identity(d)).unwrap();
    let out = attend(&mut tape, psi, psi, hv, one, eye, true).unwrap();
    assert!(tape.value(out).to_dense().max_abs_diff(&hk.to_dense()) < 1e-14);
}

#[test]
fn induced_kernel_is_symmetric_psd() {
    let mut rng = stream(5, "t");
    for _ in 0..10 {
        let (m, k) = (30, 6);
        let g = random(&mut rng, m, k);
        let mut buf = CovarianceBuffer::new(k, 1.0).unwrap();
        buf.update(&[&g], Mode::Train).unwrap();
        let psi = buf.orthonormalize(&g.to_dense()).unwrap();
        let mu: Vec<f64> = (0..k).map(|_| rng.gen_range(-2.0f64..2.0).exp()).collect();
        let mut scaled = psi.clone();
        for i in 0..m {
            for j in 0..k {
                scaled.set(i, j, psi.get(i, j) * mu[j]);
            }
        }
        let kernel = scaled.matmul(&psi.transpose()).unwrap();
        assert!(kernel.asymmetry().unwrap() < 1e-10);
        let sym = kernel.add(&kernel.transpose()).unwrap().scale(0.5);
        let eig = sym_eig(&sym).unwrap();
        assert!(eig.values.iter().all(|&v| v >= -1e-8));
    }
}

#[test]
fn dead_attention_reduces_to_ffn_of_norm() {
    let mut rng = stream(6, "t");
    let mut store = ParamStore::new();
    let mut l = layer(&mut store, &mut rng, 5, 4, 3, 1.0);
    *store.get_mut(l.query_proj) = Tensor::zeros(&[5, 3]);
    let g = random(&mut rng, 12, 5);
    let h = random(&mut rng, 12, 4);
    // a zero projection cannot be whitened from its own (zero) covariance, so the
    // buffer comes from earlier training and the layer runs in eval mode
    l.buffer = CovarianceBuffer::restore(DenseMatrix::identity(3), DenseMatrix::identity(3), 1.0, true).unwrap();
    let mut tape = Tape::new();
    let p = store.bind(&mut tape, false).unwrap();
    let gv = tape.constant(g.clone()).unwrap();
    let hv = tape.constant(h).unwrap();
    let out = l.apply(&mut tape, &p, gv, hv).unwrap();
    let n = l.norm.forward(&mut tape, &p, hv).unwrap();
    let expect = l.ffn.forward(&mut tape, &p, n).unwrap();
    assert!(tape.value(out).max_abs_diff(tape.value(expect)) < 1e-14);
}

#[test]
fn eval_is_deterministic_and_needs_a_fitted_buffer() {
    let mut rng = stream(7, "t");
    let mut store = ParamStore::new();
    let mut l = layer(&mut store, &mut rng, 5, 4, 3, 0.1);
    let g = random(&mut rng, 12, 5);
    let h = random(&mut rng, 12, 4);
    let run = |l: &OrthoAttentionLayer| -> ono::Result<Vec<f64>> {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false)?;
        let gv = tape.constant(g.clone())?;
        let hv = tape.constant(h.clone())?;
        let out = l.apply(&mut tape, &p, gv, hv)?;
        Ok(tape.value(out).data().to_vec())
    };
    assert!(matches!(run(&l), Err(Error::UninitializedBuffer)));
    let mut tape = Tape::new();
    let p = store.bind(&mut tape, false).unwrap();
    let gv = tape.constant(g.clone()).unwrap();
    let hv = tape.constant(h.clone()).unwrap();
    l.layer_forward(&mut tape, &p, &[gv], &[hv], Mode::Train).unwrap();
    let a = run(&l).unwrap();
    let b = run(&l).unwrap();
    assert_eq!(a, b);
}

#[test]
fn layer_gradients_match_finite_differences() {
    let mut rng = stream(8, "grad");
    let mut store = ParamStore::new();
    let mut l = layer(&mut store, &mut rng, 5, 4, 3, 1.0);
    *store.get_mut(l.raw_mu) = random(&mut rng, 1, 3);
    let g = random(&mut rng, 10, 5);
    let h = random(&mut rng, 10, 4);
    {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false).unwrap();
        let gv = tape.constant(g.clone()).unwrap();
        let hv = tape.constant(h.clone()).unwrap();
        l.layer_forward(&mut tape, &p, &[gv], &[hv], Mode::Train).unwrap();
    }
    let weights = random(&mut rng, 10, 4);
    let err = grad_check_many(
        |tape, vars| {
            let p = Bound::from_vars(vars[..vars.len() - 2].to_vec());
            let gv = vars[vars.len() - 2];
            let hv = vars[vars.len() - 1];
            let out = l.apply(tape, &p, gv, hv).map_err(to_ad)?;
            let w = tape.constant(weights.clone())?;
            let prod = tape.mul(out, w)?;
            tape.sum(prod)
        },
        &[store.values(), vec![g, h]].concat(),
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-4, "max relative error {err}");
}

fn to_ad(e: Error) -> ono::autodiff::AutodiffError {
    match e {
        Error::Autodiff(a) => a,
        other => ono::autodiff::AutodiffError::InvalidArgument(other.to_string()),
    }
}

proptest! {
    #[test]
    fn batch_covariance_is_symmetric_psd(seed in 0u64..500, m in 4usize..20, k in 1usize..6) {
        let mut rng = stream(seed, "p");
        let g = random(&mut rng, m, k);
        let c = CovarianceBuffer::batch_covariance(&[&g]).unwrap();
        prop_assert_eq!(c.asymmetry().unwrap(), 0.0);
        let eig = sym_eig(&c).unwrap();
        prop_assert!(eig.values.iter().all(|&v| v >= -1e-12));
    }
}
