use super::*;
use crate::model::{Domain, Link, ObsFamily};
use crate::simgen::{simulate, SimSpec};

fn small() -> (Hyperparameters, Dataset) {
    let spec = SimSpec { procedure: 2, k: 2, n: 12, m: 2, rho: 30.0, seed: 3, ..SimSpec::default() };
    let data = simulate(&spec).unwrap().dataset;
    let mut hp = Hyperparameters::defaults(2, ObsFamily::Normal, Link::Identity);
    hp.eta = vec![0.5; 2];
    hp.rho = 30.0;
    (hp, data)
}

fn opts(max_iters: u64) -> FitOptions {
    FitOptions { samples: 8, elbo_samples: 16, max_iters, seed: 11, ..FitOptions::default() }
}

#[test]
fn zero_iterations_returns_the_initialization() {
    let (hp, data) = small();
    let (state, report) = fit_parametric(&hp, &data, 2, &opts(0)).unwrap();
    assert_eq!(state, initialize(&hp, &data, 2, false, 11).unwrap());
    assert_eq!(report.elbo_trace.len(), 1);
    assert_eq!(report.iterations, 0);
    assert!(!report.converged);
}

#[test]
fn reports_are_bit_identical_across_runs_and_threads() {
    let (hp, data) = small();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let a = one.install(|| fit_parametric(&hp, &data, 2, &opts(4)).unwrap().1);
    let b = three.install(|| fit_parametric(&hp, &data, 2, &opts(4)).unwrap().1);
    assert_eq!(a, b);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(a.elbo_trace.len(), 5);
}

#[test]
fn resumed_session_matches_uninterrupted_run() {
    let (hp, data) = small();
    let mut full = FitSession::new(hp.clone(), &data, 2, false, opts(6)).unwrap();
    full.run(&data).unwrap();

    let mut first = FitSession::new(hp, &data, 2, false, opts(6)).unwrap();
    for _ in 0..3 {
        first.step(&data).unwrap();
    }
    let saved = serde_json::to_string(&first).unwrap();
    let mut resumed: FitSession = serde_json::from_str(&saved).unwrap();
    assert_eq!(resumed, first);
    resumed.run(&data).unwrap();
    assert_eq!(resumed, full);
}

#[test]
fn iterations_keep_invariants_and_advance_the_counter() {
    let (hp, data) = small();
    let mut s = FitSession::new(hp, &data, 3, false, opts(5)).unwrap();
    for t in 1..=5 {
        s.step(&data).unwrap();
        s.state.check_invariants().unwrap();
        assert_eq!(s.estimator.t, t);
        assert_eq!(s.state.beta.len(), 4);
    }
}

#[test]
fn monitor_counts_consecutive_small_changes() {
    let o = FitOptions { min_iters: 2, required_hits: 3, delta: 1e-3, ..FitOptions::default() };
    let mut m = ConvergenceMonitor::new(&o);
    assert!(!m.observe(-100.0));
    assert!(m.observe(-100.01));
    assert!(m.observe(-100.02));
    assert!(!m.observe(-110.0));
    assert_eq!(m.hits, 0);
    for _ in 0..3 {
        m.observe(-110.0);
    }
    assert_eq!(m.hits, 3);
    assert!(m.converged(5));
    assert!(!m.converged(1));
    m.reset();
    assert!(!m.converged(5));
}

#[test]
fn rejects_bad_options_and_mismatched_data() {
    let (hp, data) = small();
    assert!(fit_parametric(&hp, &data, 2, &FitOptions { samples: 1, ..opts(1) }).is_err());
    assert!(fit_parametric(&hp, &data, 2, &FitOptions { min_iters: 5, ..opts(1) }).is_err());
    let pois = Hyperparameters::defaults(2, ObsFamily::Poisson, Link::SoftPlus);
    let err = fit_parametric(&pois, &data, 2, &opts(1)).unwrap_err();
    assert!(matches!(err, Error::Domain(_)), "{err:?}");
    let _ = Domain::Real;
}
