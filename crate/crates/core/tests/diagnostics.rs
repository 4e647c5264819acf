use ono::diagnostics::*;

#[test]
fn layer_scope_gradients_match_finite_differences() {
    let r = grad_check_scope(GradScope::Layer, 2, 1).unwrap();
    assert_eq!(r.entries.len(), 4);
    assert!(r.passed(), "{}", r.to_csv());
}

#[test]
fn model_scope_gradients_match_over_three_trials() {
    let r = grad_check_scope(GradScope::Model, 3, 0).unwrap();
    assert_eq!(r.entries.len(), 3);
    assert!(r.max_rel_error() < GRAD_CHECK_TOL, "{}", r.to_csv());
}

#[test]
fn scope_names_round_trip() {
    for s in [GradScope::Primitive, GradScope::Layer, GradScope::Model] {
        assert_eq!(s.to_string().parse::<GradScope>().unwrap(), s);
    }
    assert!("everything".parse::<GradScope>().is_err());
}

#[test]
fn bench_reports_each_size() {
    let pts = bench_layer_forward(&[64, 128], 8, 1, 0).unwrap();
    assert_eq!(pts.iter().map(|p| p.m).collect::<Vec<_>>(), vec![64, 128]);
    assert!(pts.iter().all(|p| p.seconds > 0.0 && p.seconds.is_finite()));
    assert!(bench_layer_forward(&[4], 8, 1, 0).is_err());
}

