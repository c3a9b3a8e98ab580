//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when a criterion fails that is not listed in `KNOWN_RED`.
//!
//! Positional arguments select criteria by name prefix, e.g.
//! `cargo test --test acceptance -- gradients determinism`.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};
use statrs::distribution::{Continuous, Discrete};
use statrs::function::gamma::ln_gamma;

use ndm::dist::{DistParams, Point};
use ndm::eval::{evaluate, nrmse_mu, Estimate, Evaluation};
use ndm::model::{
    elbo, Dataset, Domain, FactorParams, GroundTruth, Hyperparameters, Link, LocalParams, ObsFamily,
    VariationalState, MU_Q_SCALE,
};
use ndm::np::{fit_nonparametric, NonparametricOptions};
use ndm::simgen::{simulate, SimOutput, SimSpec};
use ndm::vi::{fit_parametric, update_mu_sigma, FitMode, FitOptions, FitSession, GlobalUpdate};

/// Criteria that are expected to print FAIL with the reference algorithm.
const KNOWN_RED: &[&str] = &["nonparametric-from-one"];

struct Line {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn within(start: Instant, budget_secs: u64) -> (bool, String) {
    let t = start.elapsed();
    (t < Duration::from_secs(budget_secs), format!("{:.1}s of {budget_secs}s", t.as_secs_f64()))
}

// ---------------------------------------------------------------------------
// Gradients
// ---------------------------------------------------------------------------

fn dirichlet_ln_pdf(alpha: &[f64], x: &[f64]) -> f64 {
    let a0: f64 = alpha.iter().sum();
    ln_gamma(a0) - alpha.iter().map(|a| ln_gamma(*a)).sum::<f64>()
        + alpha.iter().zip(x).map(|(a, v)| (a - 1.0) * v.ln()).sum::<f64>()
}

/// Richardson-extrapolated central difference of `f` at `theta`.
fn central_difference(f: impl Fn(f64) -> f64, theta: f64) -> f64 {
    let h = 1e-3 * theta.abs().max(0.1);
    let d = |h: f64| (f(theta + h) - f(theta - h)) / (2.0 * h);
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

fn relative_error(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(got.abs()).max(1.0)
}

fn gradients() -> Line {
    let start = Instant::now();
    let mut r = rng(1);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (mean, scale) = (r.random_range(-5.0..5.0), r.random_range(0.2..4.0));
        let q = DistParams::normal(mean, scale).unwrap();
        let x = q.sample(&mut r);
        let v = match x {
            Point::Real(v) => v,
            _ => unreachable!(),
        };
        let g = q.grad_log_q(&x).unwrap();
        let pdf = |m: f64, s: f64| statrs::distribution::Normal::new(m, s).unwrap().ln_pdf(v);
        worst = worst.max(relative_error(g[0], central_difference(|m| pdf(m, scale), mean)));
        worst = worst.max(relative_error(g[1], central_difference(|s| pdf(mean, s), scale)));

        let rate = r.random_range(0.5..50.0);
        let q = DistParams::poisson(rate).unwrap();
        let x = q.sample(&mut r);
        let k = match x {
            Point::Count(k) => k,
            _ => unreachable!(),
        };
        let g = q.grad_log_q(&x).unwrap();
        let fd = central_difference(|l| statrs::distribution::Poisson::new(l).unwrap().ln_pmf(k), rate);
        worst = worst.max(relative_error(g[0], fd));

        let dim = r.random_range(2..7);
        let alpha: Vec<f64> = (0..dim).map(|_| r.random_range(0.3..10.0)).collect();
        let q = DistParams::dirichlet(alpha.clone()).unwrap();
        let x = q.sample(&mut r);
        let xs = match &x {
            Point::Vector(v) => v.clone(),
            _ => unreachable!(),
        };
        let g = q.grad_log_q(&x).unwrap();
        for i in 0..dim {
            let fd = central_difference(
                |a| {
                    let mut al = alpha.clone();
                    al[i] = a;
                    dirichlet_ln_pdf(&al, &xs)
                },
                alpha[i],
            );
            worst = worst.max(relative_error(g[i], fd));
        }
    }

    // Each score component has mean zero under its own distribution.
    let n = 100_000;
    let mut worst_z = 0.0f64;
    let families = [
        DistParams::normal(1.5, 0.7).unwrap(),
        DistParams::normal(-3.0, 2.5).unwrap(),
        DistParams::poisson(3.2).unwrap(),
        DistParams::poisson(40.0).unwrap(),
        DistParams::dirichlet(vec![0.5, 2.0, 7.0]).unwrap(),
        DistParams::dirichlet(vec![3.0, 3.0]).unwrap(),
    ];
    for q in &families {
        let draws: Vec<Vec<f64>> = (0..n).map(|_| q.grad_log_q(&q.sample(&mut r)).unwrap()).collect();
        for c in 0..draws[0].len() {
            let mean = draws.iter().map(|d| d[c]).sum::<f64>() / n as f64;
            let var = draws.iter().map(|d| (d[c] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            worst_z = worst_z.max(mean.abs() / (var / n as f64).sqrt());
        }
    }
    let (fast, t) = within(start, 60);
    Line {
        name: "gradients",
        pass: worst < 1e-5 && worst_z < 4.0 && fast,
        detail: format!("max relative error {worst:.2e}, max score |z| {worst_z:.2}, {t}"),
    }
}

// ---------------------------------------------------------------------------
// Shared simulation settings
// ---------------------------------------------------------------------------

fn recovery_spec(seed: u64) -> SimSpec {
    SimSpec {
        procedure: 2,
        domain: Domain::Real,
        k: 3,
        n: 200,
        m: 5,
        alpha0: 10.0,
        alpha: 1.0,
        sigma: 2.0,
        min_separation: Some(4.0),
        seed,
        ..SimSpec::default()
    }
}

fn recovery_model(sim: &SimOutput) -> Hyperparameters {
    let mut hp = Hyperparameters::defaults(5, ObsFamily::Normal, Link::Identity);
    hp.sigma0 = 2.0;
    hp.alpha = 1.0;
    hp.eta = sim.truth().spreads.clone();
    hp
}

fn recovery_options(seed: u64) -> FitOptions {
    FitOptions { samples: 16, seed, ..FitOptions::default() }
}

fn small_problem(n: usize, k: usize, m: usize, seed: u64) -> (Hyperparameters, SimOutput) {
    let spec = SimSpec { procedure: 2, k, n, m, sigma: 2.0, seed, ..SimSpec::default() };
    let sim = simulate(&spec).unwrap();
    let mut hp = Hyperparameters::defaults(m, ObsFamily::Normal, Link::Identity);
    hp.eta = sim.truth().spreads.clone();
    (hp, sim)
}

// ---------------------------------------------------------------------------
// Conjugate updates
// ---------------------------------------------------------------------------

fn conjugacy() -> Line {
    let start = Instant::now();
    let (hp, sim) = small_problem(20, 2, 3, 3);
    let opts = FitOptions { samples: 16, max_iters: 10, seed: 3, ..FitOptions::default() };
    let mut session = FitSession::new(hp.clone(), &sim.dataset, 2, false, opts).unwrap();
    session.run(&sim.dataset).unwrap();
    let mut state = session.state.clone();
    update_mu_sigma(&hp, &mut state, GlobalUpdate::Exact).unwrap();

    let samples = 4000;
    let base = elbo(&hp, &sim.dataset, &state, samples, 17).unwrap();
    let mut r = rng(2);
    let sign = |r: &mut ChaCha8Rng| if r.random_bool(0.5) { 1e-3 } else { -1e-3 };
    let mut best_gain = f64::NEG_INFINITY;
    for _ in 0..50 {
        let mut p = state.clone();
        let k = r.random_range(0..2);
        let f = &mut p.factors[k];
        for v in &mut f.mu {
            *v += sign(&mut r);
        }
        for i in 0..3 {
            for j in i..3 {
                let d = sign(&mut r);
                f.psi[(i, j)] += d;
                if i != j {
                    f.psi[(j, i)] += d;
                }
            }
        }
        let e = elbo(&hp, &sim.dataset, &p, samples, 17).unwrap();
        best_gain = best_gain.max(e.value - base.value);
    }
    let (fast, t) = within(start, 300);
    Line {
        name: "conjugacy",
        pass: best_gain <= 2.0 * base.std_err && fast,
        detail: format!("best perturbation gain {best_gain:.3e} vs 2 SE = {:.3e}, {t}", 2.0 * base.std_err),
    }
}

// ---------------------------------------------------------------------------
// ELBO against an independent brute force
// ---------------------------------------------------------------------------

fn random_state(n: usize, k: usize, m: usize, r: &mut ChaCha8Rng) -> VariationalState {
    let spd = |r: &mut ChaCha8Rng| {
        let a = DMatrix::from_fn(m, m, |_, _| r.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(m, m) * 2.0
    };
    VariationalState {
        beta: (0..=k).map(|_| r.random_range(1.0..4.0)).collect(),
        factors: (0..k)
            .map(|_| FactorParams { mu: (0..m).map(|_| r.random_range(-2.0..2.0)).collect(), nu: m as f64 + 4.0, psi: spd(r) })
            .collect(),
        locals: (0..n)
            .map(|_| LocalParams {
                pi: (0..k).map(|_| r.random_range(2.0..6.0)).collect(),
                xbar_mean: (0..k).map(|_| (0..m).map(|_| r.random_range(-2.0..2.0)).collect()).collect(),
                xbar_scale: (0..k).map(|_| (0..m).map(|_| r.random_range(0.2..0.6)).collect()).collect(),
                p: r.random_range(40.0..80.0),
            })
            .collect(),
        remainder: None,
    }
}

fn dirichlet_draw(alpha: &[f64], r: &mut ChaCha8Rng) -> Vec<f64> {
    let g: Vec<f64> = alpha.iter().map(|a| Gamma::new(*a, 1.0).unwrap().sample(r)).collect();
    let s: f64 = g.iter().sum();
    g.iter().map(|v| v / s).collect()
}

fn normal_ln(x: f64, m: f64, s: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI).ln() - s.ln() - 0.5 * ((x - m) / s).powi(2)
}

fn mvn_ln(x: &[f64], mean: &[f64], cov: &DMatrix<f64>) -> f64 {
    let m = x.len();
    let d = DVector::from_iterator(m, x.iter().zip(mean).map(|(a, b)| a - b));
    let inv = cov.clone().try_inverse().unwrap();
    -0.5 * (m as f64 * (2.0 * std::f64::consts::PI).ln() + cov.determinant().ln() + (d.transpose() * inv * &d)[0])
}

fn ln_multigamma(a: f64, m: usize) -> f64 {
    let mf = m as f64;
    mf * (mf - 1.0) / 4.0 * std::f64::consts::PI.ln() + (0..m).map(|j| ln_gamma(a - j as f64 / 2.0)).sum::<f64>()
}

fn inv_wishart_ln(x: &DMatrix<f64>, nu: f64, psi: &DMatrix<f64>) -> f64 {
    let m = x.nrows();
    let mf = m as f64;
    let xinv = x.clone().try_inverse().unwrap();
    0.5 * nu * psi.determinant().ln() - 0.5 * nu * mf * 2f64.ln() - ln_multigamma(nu / 2.0, m)
        - 0.5 * (nu + mf + 1.0) * x.determinant().ln()
        - 0.5 * (psi * xinv).trace()
}

/// Bartlett draw of W ~ Wishart(ν, Ψ⁻¹), returned as Σ = W⁻¹.
fn inv_wishart_draw(nu: f64, psi: &DMatrix<f64>, r: &mut ChaCha8Rng) -> DMatrix<f64> {
    let m = psi.nrows();
    let l = psi.clone().try_inverse().unwrap().cholesky().unwrap().l();
    let mut a = DMatrix::zeros(m, m);
    for i in 0..m {
        a[(i, i)] = ChiSquared::new(nu - i as f64).unwrap().sample(r).sqrt();
        for j in 0..i {
            a[(i, j)] = r.sample::<f64, _>(StandardNormal);
        }
    }
    let la = l * a;
    (&la * la.transpose()).try_inverse().unwrap()
}

fn brute_force_sample(hp: &Hyperparameters, y: &[Vec<f64>], q: &VariationalState, r: &mut ChaCha8Rng) -> f64 {
    let (k, m) = (q.k(), q.m());
    let a0 = match &hp.alpha0 {
        ndm::model::Concentration::Symmetric(a) => *a,
        ndm::model::Concentration::Vector(_) => unreachable!(),
    };
    let beta = dirichlet_draw(&q.beta, r);
    let mut lp = dirichlet_ln_pdf(&vec![a0; k + 1], &beta);
    let mut lq = dirichlet_ln_pdf(&q.beta, &beta);
    let mut mu = Vec::new();
    let mut sigma = Vec::new();
    for f in &q.factors {
        let draw: Vec<f64> = f.mu.iter().map(|c| c + MU_Q_SCALE * r.sample::<f64, _>(StandardNormal)).collect();
        for (v, c) in draw.iter().zip(&f.mu) {
            lp += normal_ln(*v, hp.mu0, hp.sigma0);
            lq += normal_ln(*v, *c, MU_Q_SCALE);
        }
        let s = inv_wishart_draw(f.nu, &f.psi, r);
        lp += inv_wishart_ln(&s, hp.nu0, &hp.psi0);
        lq += inv_wishart_ln(&s, f.nu, &f.psi);
        mu.push(draw);
        sigma.push(s);
    }
    for (l, yn) in q.locals.iter().zip(y) {
        let pi = dirichlet_draw(&l.pi, r);
        let prior: Vec<f64> = beta[..k].iter().map(|b| hp.alpha * b).collect();
        lp += dirichlet_ln_pdf(&prior, &pi);
        lq += dirichlet_ln_pdf(&l.pi, &pi);
        let count = rand_distr::Poisson::new(l.p).unwrap().sample(r);
        lp += statrs::distribution::Poisson::new(hp.rho).unwrap().ln_pmf(count as u64);
        lq += statrs::distribution::Poisson::new(l.p).unwrap().ln_pmf(count as u64);
        let mut signal = vec![0.0; m];
        for kk in 0..k {
            let x: Vec<f64> = (0..m)
                .map(|j| l.xbar_mean[kk][j] + l.xbar_scale[kk][j] * r.sample::<f64, _>(StandardNormal))
                .collect();
            for j in 0..m {
                lq += normal_ln(x[j], l.xbar_mean[kk][j], l.xbar_scale[kk][j]);
                signal[j] += pi[kk] * x[j];
            }
            lp += mvn_ln(&x, &mu[kk], &(&sigma[kk] / (count * pi[kk])));
        }
        for j in 0..m {
            lp += normal_ln(yn[j], signal[j], hp.eta[j]);
        }
    }
    lp - lq
}

fn elbo_oracle() -> Line {
    let start = Instant::now();
    let (n, k, m) = (5, 2, 2);
    let mut r = rng(3);
    let state = random_state(n, k, m, &mut r);
    let y: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
    let data = Dataset::new(y.clone(), Domain::Real).unwrap();
    let mut hp = Hyperparameters::defaults(m, ObsFamily::Normal, Link::Identity);
    hp.eta = vec![0.5; m];

    let lib = elbo(&hp, &data, &state, 100_000, 9).unwrap();
    let draws = 1_000_000;
    let values: Vec<f64> = (0..draws).map(|_| brute_force_sample(&hp, &y, &state, &mut r)).collect();
    let mean = values.iter().sum::<f64>() / draws as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
    let se = (lib.std_err.powi(2) + var / draws as f64).sqrt();
    let z = (lib.value - mean).abs() / se;
    let (fast, t) = within(start, 300);
    Line {
        name: "elbo-oracle",
        pass: z < 3.0 && fast,
        detail: format!("library {:.4} vs brute force {mean:.4}, |z| {z:.2}, {t}", lib.value),
    }
}

// ---------------------------------------------------------------------------
// Recovery
// ---------------------------------------------------------------------------

/// Unfitted estimate: means from the prior, proportions uniform on the simplex.
fn random_estimate(n: usize, k: usize, m: usize, hp: &Hyperparameters, seed: u64) -> Estimate {
    let mut r = rng(seed ^ 0xbad5eed);
    let mu = (0..k)
        .map(|_| (0..m).map(|_| hp.mu0 + hp.sigma0 * r.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    Estimate {
        beta: dirichlet_draw(&vec![1.0; k], &mut r),
        pi: (0..n).map(|_| dirichlet_draw(&vec![1.0; k], &mut r)).collect(),
        mu,
        xbar: None,
    }
}

fn recovery() -> Vec<Line> {
    let start = Instant::now();
    let (mut good, mut beats) = (0, 0);
    let mut rows = Vec::new();
    for seed in 0..10 {
        let sim = simulate(&recovery_spec(seed)).unwrap();
        let hp = recovery_model(&sim);
        let (state, report) = fit_parametric(&hp, &sim.dataset, 3, &recovery_options(seed)).unwrap();
        let fit = evaluate(&Estimate::from(&state.expectations()), sim.truth()).unwrap();
        let base = evaluate(&random_estimate(200, 3, 5, &hp, seed), sim.truth()).unwrap();
        good += usize::from(fit.nrmse_mu < 0.1 && fit.cosine_pi > 0.9);
        beats += usize::from(fit.nrmse_mu < base.nrmse_mu && fit.cosine_pi > base.cosine_pi);
        rows.push(format!(
            "seed {seed}: nrmse {:.3} cos_pi {:.3} after {} its (baseline {:.3}/{:.3})",
            fit.nrmse_mu, fit.cosine_pi, report.iterations, base.nrmse_mu, base.cosine_pi
        ));
    }
    for r in &rows {
        println!("    {r}");
    }
    let (fast, t) = within(start, 1800);
    vec![
        Line { name: "recovery", pass: good >= 8 && fast, detail: format!("{good}/10 seeds meet both thresholds, {t}") },
        Line { name: "recovery-baseline", pass: beats == 10, detail: format!("{beats}/10 seeds beat the random baseline") },
    ]
}

fn nonparametric() -> Vec<Line> {
    let start = Instant::now();
    let np = NonparametricOptions::default();
    let mut from_one = Vec::new();
    let mut from_eight = Vec::new();
    let mut bad_moves = 0;
    let mut accepted = 0;
    for seed in 0..10 {
        let sim = simulate(&recovery_spec(seed)).unwrap();
        let hp = recovery_model(&sim);
        for (k0, finals) in [(1, &mut from_one), (8, &mut from_eight)] {
            let (state, report) = fit_nonparametric(&hp, &sim.dataset, k0, &recovery_options(seed), &np).unwrap();
            assert_eq!(report.mode, FitMode::Nonparametric);
            for m in report.moves.iter().filter(|m| m.accepted) {
                accepted += 1;
                bad_moves += usize::from(!(m.elbo_after > m.elbo_before));
            }
            finals.push(state.k());
        }
    }
    let ones = from_one.iter().filter(|k| **k == 3).count();
    let eights = from_eight.iter().filter(|k| **k <= 5).count();
    let (fast, t) = within(start, 3600);
    vec![
        Line {
            name: "nonparametric-from-one",
            pass: ones >= 8 && fast,
            detail: format!("final K from K0=1: {from_one:?}, {ones}/10 at K=3"),
        },
        Line {
            name: "nonparametric-from-eight",
            pass: eights >= 8 && fast,
            detail: format!("final K from K0=8: {from_eight:?}, {eights}/10 at K<=5, {t}"),
        },
        Line {
            name: "nonparametric-moves",
            pass: bad_moves == 0,
            detail: format!("{accepted} accepted moves, {bad_moves} without a strict ELBO gain"),
        },
    ]
}

// ---------------------------------------------------------------------------
// Domains, determinism, metric identities
// ---------------------------------------------------------------------------

fn domain_coverage() -> Line {
    let start = Instant::now();
    let configs = [
        (Domain::Real, ObsFamily::Normal, Link::Identity),
        (Domain::Positive, ObsFamily::Gamma, Link::SoftPlus),
        (Domain::Integer, ObsFamily::Poisson, Link::SoftPlus),
        (Domain::Unit, ObsFamily::Beta, Link::Sigmoid),
    ];
    let mut failures = Vec::new();
    let mut summary = Vec::new();
    for (i, (domain, family, link)) in configs.into_iter().enumerate() {
        let spec = SimSpec { procedure: 2, domain, k: 3, n: 100, m: 5, seed: 20 + i as u64, ..SimSpec::default() };
        let sim = simulate(&spec).unwrap();
        let hp = Hyperparameters::defaults(5, family, link);
        let opts = FitOptions { samples: 16, max_iters: 300, seed: spec.seed, ..FitOptions::default() };
        let mut session = FitSession::new(hp, &sim.dataset, 3, false, opts).unwrap();
        let mut ok = true;
        while !session.finished() {
            let e = session.step(&sim.dataset);
            ok &= e.is_ok_and(|e| e.value.is_finite()) && session.state.check_invariants().is_ok();
            if !ok {
                break;
            }
        }
        let scored = evaluate(&Estimate::from(&session.state.expectations()), sim.truth());
        let scored_ok = scored.as_ref().is_ok_and(|e| e.nrmse_mu.is_finite() && e.cosine_pi.is_finite());
        if !(ok && scored_ok) {
            failures.push(format!("{domain:?}"));
        }
        summary.push(format!("{domain:?}: {} its", session.iterations));
    }
    let (fast, t) = within(start, 1800);
    Line {
        name: "domain-coverage",
        pass: failures.is_empty() && fast,
        detail: format!("{}; failing {failures:?}, {t}", summary.join(", ")),
    }
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

fn determinism() -> Line {
    let (hp, sim) = small_problem(60, 3, 4, 5);
    let parametric = || {
        let opts = FitOptions { samples: 16, max_iters: 30, seed: 5, ..FitOptions::default() };
        let mut s = FitSession::new(hp.clone(), &sim.dataset, 3, false, opts).unwrap();
        s.run(&sim.dataset).unwrap();
        serde_json::to_string(&s.report(FitMode::Parametric, Vec::new())).unwrap()
    };
    let nonparametric = || {
        let opts = FitOptions { samples: 16, max_iters: 60, seed: 5, ..FitOptions::default() };
        let np = NonparametricOptions { batch_max_iters: 15, max_rounds: 3, ..NonparametricOptions::default() };
        let (_, report) = fit_nonparametric(&hp, &sim.dataset, 4, &opts, &np).unwrap();
        serde_json::to_string(&report).unwrap()
    };
    let runs: Vec<(String, String)> =
        [1, 1, 4].into_iter().map(|t| in_pool(t, || (parametric(), nonparametric()))).collect();
    let same = runs.iter().all(|r| r == &runs[0]);
    Line {
        name: "determinism",
        pass: same,
        detail: format!("parametric and nonparametric reports over 1, 1 and 4 threads identical: {same}"),
    }
}

fn metric_gap(a: &Evaluation, b: &Evaluation) -> f64 {
    let mut gap = (a.nrmse_mu - b.nrmse_mu).abs();
    gap = gap.max((a.cosine_beta - b.cosine_beta).abs());
    gap = gap.max((a.cosine_pi - b.cosine_pi).abs());
    if let (Some(x), Some(y)) = (a.nrmse_xbar, b.nrmse_xbar) {
        gap = gap.max((x - y).abs());
    }
    gap
}

fn permute(est: &Estimate, order: &[usize]) -> Estimate {
    Estimate {
        beta: order.iter().map(|&i| est.beta[i]).collect(),
        pi: est.pi.iter().map(|r| order.iter().map(|&i| r[i]).collect()).collect(),
        mu: order.iter().map(|&i| est.mu[i].clone()).collect(),
        xbar: est.xbar.as_ref().map(|x| x.iter().map(|r| order.iter().map(|&i| r[i].clone()).collect()).collect()),
    }
}

fn metric_identities() -> Line {
    let sim = simulate(&SimSpec { procedure: 2, k: 3, n: 50, m: 4, sigma: 2.0, seed: 8, ..SimSpec::default() }).unwrap();
    let truth: &GroundTruth = sim.truth();
    let exact = Estimate { beta: truth.beta.clone(), pi: truth.pi.clone(), mu: truth.mu.clone(), xbar: Some(truth.xbar.clone()) };
    let e = evaluate(&exact, truth).unwrap();
    let mut err = e.nrmse_mu.abs().max((e.cosine_beta - 1.0).abs()).max((e.cosine_pi - 1.0).abs());
    err = err.max(e.nrmse_xbar.unwrap_or(0.0).abs());

    let mut r = rng(8);
    let mut noisy = exact.clone();
    for v in noisy.mu.iter_mut().flatten() {
        *v += 0.3 * r.sample::<f64, _>(StandardNormal);
    }
    for row in &mut noisy.pi {
        *row = dirichlet_draw(&row.iter().map(|v| 1.0 + 10.0 * v).collect::<Vec<_>>(), &mut r);
    }
    let a = evaluate(&noisy, truth).unwrap();
    let b = evaluate(&permute(&noisy, &[2, 0, 1]), truth).unwrap();
    err = err.max(metric_gap(&a, &b));

    // Hand arithmetic: one factor, truth (0, 1), estimate (0, 0).
    err = err.max((nrmse_mu(&[vec![0.0, 0.0]], &[vec![0.0, 1.0]]).unwrap() - 0.5f64.sqrt()).abs());
    Line { name: "metric-identities", pass: err <= 1e-12, detail: format!("max deviation {err:.1e}") }
}

type Suite = (&'static str, fn() -> Vec<Line>);

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |name: &str| filters.is_empty() || filters.iter().any(|f| name.starts_with(f.as_str()));
    let suites: [Suite; 8] = [
        ("gradients", || vec![gradients()]),
        ("conjugacy", || vec![conjugacy()]),
        ("elbo-oracle", || vec![elbo_oracle()]),
        ("recovery", recovery),
        ("nonparametric", nonparametric),
        ("domain-coverage", || vec![domain_coverage()]),
        ("determinism", || vec![determinism()]),
        ("metric-identities", || vec![metric_identities()]),
    ];
    let mut unexpected = 0;
    for (name, run) in suites {
        if !wanted(name) {
            continue;
        }
        for line in run() {
            let known = KNOWN_RED.contains(&line.name);
            let tag = match (line.pass, known) {
                (true, _) => "PASS",
                (false, true) => "FAIL (known)",
                (false, false) => "FAIL",
            };
            println!("{tag} {}: {}", line.name, line.detail);
            unexpected += usize::from(!line.pass && !known);
        }
    }
    if unexpected > 0 {
        println!("{unexpected} criteria failed");
        std::process::exit(1);
    }
}
