use ono::data::{
    darcy_coefficient, darcy_system, generate_darcy2d, generate_poisson1d, load_dataset,
    poisson1d_pair, save_dataset, split_indices, subsample, DarcyParams, Dataset, FunctionPair,
    Mesh, PoissonParams, Sample,
};
use ono::linalg::DenseMatrix;
use ono::Error;
use proptest::prelude::*;
use std::f64::consts::PI;

fn small_darcy() -> Dataset {
    generate_darcy2d(3, 17, 5, &DarcyParams::default()).unwrap()
}

#[test]
fn darcy_is_deterministic_in_seed() {
    let a = small_darcy();
    let b = small_darcy();
    assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
    let c = generate_darcy2d(3, 17, 6, &DarcyParams::default()).unwrap();
    assert_ne!(a.samples[0].f, c.samples[0].f);
}

#[test]
fn darcy_boundary_is_exactly_zero() {
    let d = small_darcy();
    let n = 17;
    for s in &d.samples {
        for i in 0..n {
            for j in 0..n {
                if i == 0 || j == 0 || i == n - 1 || j == n - 1 {
                    assert_eq!(s.u.get(i * n + j, 0), 0.0);
                }
            }
        }
    }
}

#[test]
fn darcy_solution_satisfies_the_discrete_system() {
    let n = 33;
    let d = generate_darcy2d(2, n, 11, &DarcyParams::default()).unwrap();
    for s in &d.samples {
        let sys = darcy_system(s.f.data(), n).unwrap();
        let u: Vec<f64> = sys.interior.iter().map(|&g| s.u.get(g, 0)).collect();
        let res = sys.system.relative_residual(&u, &sys.rhs);
        assert!(res < 1e-8, "relative residual {res}");
        // a is two-level and the solution of a positive source is positive inside
        assert!(s.f.data().iter().all(|&v| v == 3.0 || v == 12.0));
        assert!(u.iter().all(|&v| v > 0.0));
    }
}

#[test]
fn darcy_coefficient_is_threshold_of_median() {
    let field: Vec<f64> = (0..64).map(|i| i as f64).collect();
    let a = darcy_coefficient(&field, &DarcyParams::default());
    assert!(a[..32].iter().all(|&v| v == 3.0));
    assert!(a[32..].iter().all(|&v| v == 12.0));
}

#[test]
fn poisson_single_mode_matches_eigenrelation() {
    let p = poisson1d_pair(&[1.0], 33);
    for j in 0..33 {
        let x = p.mesh.points.get(j, 0);
        assert!((p.f_values.get(j, 0) - (PI * x).sin()).abs() < 1e-15);
        assert!((p.u_values.get(j, 0) - (PI * x).sin() / (PI * PI)).abs() < 1e-15);
    }
}

#[test]
fn poisson_zero_source_gives_zero_solution() {
    let p = poisson1d_pair(&[0.0; 4], 16);
    assert_eq!(p.u_values.max_abs(), 0.0);
}

#[test]
fn poisson_solution_satisfies_second_difference_to_second_order() {
    // −u'' ≈ f with the 3-point stencil; error should quarter as h halves
    let coeffs = [0.3, -1.2, 0.7, 0.5];
    let err = |n: usize| {
        let p = poisson1d_pair(&coeffs, n);
        let h2 = (1.0 / (n - 1) as f64).powi(2);
        (1..n - 1)
            .map(|j| {
                let u = |k: usize| p.u_values.get(k, 0);
                let lap = -(u(j - 1) - 2.0 * u(j) + u(j + 1)) / h2;
                (lap - p.f_values.get(j, 0)).abs()
            })
            .fold(0.0, f64::max)
    };
    let ratio = err(65) / err(129);
    assert!((ratio - 4.0).abs() < 0.2, "ratio {ratio}");
}

#[test]
fn poisson_dataset_is_seeded() {
    let a = generate_poisson1d(4, 32, 1, &PoissonParams::default()).unwrap();
    let b = generate_poisson1d(4, 32, 1, &PoissonParams::default()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.mesh.len(), 32);
}

#[test]
fn subsample_65_to_33_keeps_corners() {
    let d = generate_darcy2d(1, 65, 2, &DarcyParams::default()).unwrap();
    let pair = d.pair(0);
    let coarse = subsample(&pair, 2).unwrap();
    let g = coarse.mesh.grid.unwrap();
    assert_eq!((g.nx, g.ny), (33, 33));
    assert!((g.spacing - 1.0 / 32.0).abs() < 1e-15);
    for (fine, c) in [(0, 0), (64, 32), (64 * 65, 32 * 33), (65 * 65 - 1, 33 * 33 - 1)] {
        assert_eq!(coarse.f_values.get(c, 0), pair.f_values.get(fine, 0));
        assert_eq!(coarse.mesh.points.row(c), pair.mesh.points.row(fine));
    }
    assert_eq!(subsample(&pair, 1).unwrap(), pair);
}

#[test]
fn subsample_errors() {
    let pair = poisson1d_pair(&[1.0], 10);
    assert!(matches!(subsample(&pair, 2), Err(Error::IncompatibleFactor { factor: 2, extent: 9 })));
    let mut loose = pair.clone();
    loose.mesh.grid = None;
    assert!(matches!(subsample(&loose, 3), Err(Error::NotAGrid)));
}

#[test]
fn dataset_round_trips_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.onod");
    let d = small_darcy();
    save_dataset(&d, &path).unwrap();
    let back = load_dataset(&path).unwrap();
    assert_eq!(back, d);
    assert_eq!(back.to_bytes().unwrap(), d.to_bytes().unwrap());
}

#[test]
fn empty_dataset_round_trips() {
    let d = Dataset::new(Mesh::grid_1d(5), vec![], 1, 2).unwrap();
    let back = Dataset::from_bytes(&d.to_bytes().unwrap()).unwrap();
    assert_eq!(back.len(), 0);
    assert_eq!(back, d);
}

#[test]
fn gridless_dataset_round_trips() {
    let mut mesh = Mesh::grid_2d(3);
    mesh.grid = None;
    let s = Sample {
        f: DenseMatrix::from_vec(9, 1, (0..9).map(f64::from).collect()).unwrap(),
        u: DenseMatrix::zeros(9, 1),
    };
    let d = Dataset::new(mesh, vec![s], 1, 1).unwrap();
    assert_eq!(Dataset::from_bytes(&d.to_bytes().unwrap()).unwrap(), d);
}

#[test]
fn header_layout_is_little_endian() {
    let d = generate_poisson1d(2, 8, 0, &PoissonParams::default()).unwrap();
    let b = d.to_bytes().unwrap();
    assert_eq!(&b[..4], b"ONOD");
    let word = |i: usize| u32::from_le_bytes(b[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    assert_eq!([word(0), word(1), word(2), word(3), word(4), word(5)], [1, 2, 8, 1, 1, 1]);
    assert_eq!(b[28], 1);
    let header = 29 + 16;
    assert_eq!(b.len(), header + 8 * (8 + 2 * 16) + 4);
}

#[test]
fn corrupt_files_are_rejected() {
    let good = small_darcy().to_bytes().unwrap();

    let mut bad = good.clone();
    let mid = good.len() / 2;
    bad[mid] ^= 0x40;
    assert!(matches!(Dataset::from_bytes(&bad), Err(Error::ChecksumMismatch { .. })));

    let mut magic = good.clone();
    magic[0] = b'X';
    assert!(matches!(Dataset::from_bytes(&magic), Err(Error::BadMagic(_))));

    let mut version = good.clone();
    version[4] = 2;
    assert!(matches!(Dataset::from_bytes(&version), Err(Error::VersionUnsupported(2))));

    for cut in [0, 3, 20, 40, good.len() - 1] {
        assert!(matches!(Dataset::from_bytes(&good[..cut]), Err(Error::TruncatedFile(_))), "cut {cut}");
    }

    let mut huge = good.clone();
    huge[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
    assert!(Dataset::from_bytes(&huge).is_err());
}

#[test]
fn split_covers_all_indices() {
    let s = split_indices(10, 0);
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
}

fn pair_on_grid(n: usize, values: Vec<f64>) -> FunctionPair {
    let mesh = Mesh::grid_2d(n);
    let f = DenseMatrix::from_vec(n * n, 1, values.clone()).unwrap();
    let u = DenseMatrix::from_vec(n * n, 1, values.iter().map(|v| 2.0 * v).collect()).unwrap();
    FunctionPair::new(mesh, f, u).unwrap()
}

proptest! {
    #[test]
    fn subsample_composes(k in 1usize..4, seed in 0u64..1000) {
        let n = 4 * k + 1;
        let vals: Vec<f64> = (0..n * n).map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f64).collect();
        let pair = pair_on_grid(n, vals);
        let twice = subsample(&subsample(&pair, 2).unwrap(), 2).unwrap();
        let once = subsample(&pair, 4).unwrap();
        prop_assert_eq!(twice, once);
    }

    #[test]
    fn normalization_round_trips(vals in prop::collection::vec(-1e3f64..1e3, 9 * 4)) {
        let samples: Vec<Sample> = vals
            .chunks(9)
            .map(|c| Sample {
                f: DenseMatrix::from_vec(9, 1, c.to_vec()).unwrap(),
                u: DenseMatrix::from_vec(9, 1, c.iter().map(|v| v * 0.5 - 3.0).collect()).unwrap(),
            })
            .collect();
        let d = Dataset::new(Mesh::grid_2d(3), samples, 1, 1).unwrap();
        let norm = d.fit_normalizer(&[0, 1, 2]);
        for s in &d.samples {
            let back = norm.denormalize_input(&norm.normalize_input(&s.f));
            prop_assert!(back.max_abs_diff(&s.f) <= 1e-12 * (1.0 + s.f.max_abs()));
            let back = norm.denormalize_output(&norm.normalize_output(&s.u));
            prop_assert!(back.max_abs_diff(&s.u) <= 1e-12 * (1.0 + s.u.max_abs()));
        }
    }

    #[test]
    fn poisson_superposition(a in prop::collection::vec(-2.0f64..2.0, 4), b in prop::collection::vec(-2.0f64..2.0, 4)) {
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let (pa, pb, ps) = (poisson1d_pair(&a, 20), poisson1d_pair(&b, 20), poisson1d_pair(&sum, 20));
        let lin = pa.u_values.add(&pb.u_values).unwrap();
        prop_assert!(lin.max_abs_diff(&ps.u_values) < 1e-13);
    }

    #[test]
    fn decoder_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        let _ = Dataset::from_bytes(&bytes);
    }
}
