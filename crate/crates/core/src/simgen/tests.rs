use super::*;
use crate::dist::{GammaMeanShape, Poisson as PoissonDist};

fn spec(procedure: u8, domain: Domain) -> SimSpec {
    SimSpec { procedure, domain, k: 3, n: 40, m: 2, seed: 5, ..SimSpec::default() }
}

#[test]
fn domain_f_mappings() {
    let (d, _) = domain_f(Domain::Real, 0.0, 1.0).unwrap();
    assert_eq!(d, DistParams::normal(0.0, 1.0).unwrap());

    let ln2 = std::f64::consts::LN_2;
    let (d, _) = domain_f(Domain::Positive, 0.0, 0.5).unwrap();
    let DistParams::GammaMeanShape(g) = d else { panic!("{d:?}") };
    let ss = g.to_shape_scale();
    assert!((g.mean() - ln2).abs() < 1e-15);
    assert!((ss.shape() - (ln2 / 0.5).powi(2)).abs() < 1e-12);
    assert!((ss.scale() - 0.25 / ln2).abs() < 1e-12);
    assert_eq!(GammaMeanShape::new(ln2, 0.5).unwrap(), g);

    let (d, _) = domain_f(Domain::Integer, 0.0, 123.0).unwrap();
    let DistParams::Poisson(p) = d else { panic!("{d:?}") };
    assert!((p.rate() - ln2).abs() < 1e-15);
    assert_eq!(PoissonDist::new(ln2).unwrap(), p);

    let (_, clamped) = domain_f(Domain::Unit, 0.5, 0.9).unwrap();
    assert!(clamped);
    let (_, clamped) = domain_f(Domain::Unit, 0.5, 0.1).unwrap();
    assert!(!clamped);
}

#[test]
fn defaults_follow_the_benchmark_sizes() {
    let s = SimSpec::default();
    assert_eq!((s.k, s.n, s.m), (10, 1000, 20));
    assert_eq!(s.nu(), 22.0);
}

#[test]
fn same_seed_same_output_regardless_of_threads() {
    let s = SimSpec { retain_particles: true, ..spec(4, Domain::Positive) };
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| simulate(&s).unwrap());
    let b = four.install(|| simulate(&s).unwrap());
    assert_eq!(a, b);
    let c = simulate(&SimSpec { seed: 6, ..s }).unwrap();
    assert_ne!(a.dataset.y, c.dataset.y);
}

#[test]
fn truth_matches_retained_particles() {
    for procedure in [2u8, 4] {
        let s = SimSpec { retain_particles: true, ..spec(procedure, Domain::Real) };
        let out = simulate(&s).unwrap();
        let t = out.truth();
        t.validate(s.n, s.m).unwrap();
        for (n, ps) in out.particles.as_ref().unwrap().iter().enumerate() {
            assert_eq!(ps.len() as u64, t.p[n]);
            for k in 0..s.k {
                let mine: Vec<&Particle> = ps.iter().filter(|p| p.factor == k).collect();
                assert_eq!(t.pi[n][k], mine.len() as f64 / ps.len() as f64);
                assert_eq!(t.xbar_mask[n][k], mine.is_empty());
                if mine.is_empty() {
                    assert_eq!(t.xbar[n][k], t.mu[k]);
                    continue;
                }
                for j in 0..s.m {
                    let latent = |p: &Particle| match p.mode {
                        Some(mode) => t.modes.as_ref().unwrap()[k][mode][j],
                        None => p.x[j],
                    };
                    let mean = mine.iter().map(|p| latent(p)).sum::<f64>() / mine.len() as f64;
                    assert!((t.xbar[n][k][j] - mean).abs() < 1e-12);
                }
            }
            if procedure == 4 {
                for j in 0..s.m {
                    let avg = ps.iter().map(|p| p.x[j]).sum::<f64>() / ps.len() as f64;
                    assert!((out.dataset.y[n][j] - avg).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn particle_noise_shrinks_with_counts() {
    let rms = |rho: f64| {
        let s = SimSpec {
            procedure: 2,
            k: 2,
            n: 300,
            m: 2,
            rho,
            spread_scale: 1e-9,
            seed: 17,
            ..SimSpec::default()
        };
        let out = simulate(&s).unwrap();
        let t = out.truth();
        let mut sq = 0.0;
        for (n, y) in out.dataset.y.iter().enumerate() {
            for (j, v) in y.iter().enumerate() {
                let fitted: f64 = (0..s.k).map(|k| t.pi[n][k] * t.xbar[n][k][j]).sum();
                // Deviation of the particle average from the factor means.
                let centre: f64 = (0..s.k).map(|k| t.pi[n][k] * t.mu[k][j]).sum();
                assert!((v - fitted).abs() < 1e-6);
                sq += (v - centre).powi(2);
            }
        }
        (sq / (s.n * s.m) as f64).sqrt()
    };
    let ratio = rms(1e2) / rms(1e4);
    assert!((7.0..14.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn huge_local_concentration_pins_proportions_to_beta() {
    let s = SimSpec { procedure: 2, k: 3, n: 3, m: 1, alpha: 1e6, rho: 1e6, ..SimSpec::default() };
    let out = simulate(&s).unwrap();
    let t = out.truth();
    for pi in &t.pi {
        for (p, b) in pi.iter().zip(&t.beta) {
            assert!((p - b).abs() < 1e-2);
        }
    }
}

#[test]
fn factor_shares_match_beta() {
    let s = SimSpec { procedure: 2, k: 4, n: 1000, m: 1, alpha: 1e4, seed: 2, ..SimSpec::default() };
    let out = simulate(&s).unwrap();
    let t = out.truth();
    let total: f64 = t.p.iter().map(|p| *p as f64).sum();
    assert!(total >= 1e5 * 0.95);
    let chi2: f64 = (0..s.k)
        .map(|k| {
            let observed: f64 = t.pi.iter().zip(&t.p).map(|(pi, p)| pi[k] * *p as f64).sum();
            let expected = t.beta[k] * total;
            (observed - expected).powi(2) / expected
        })
        .sum();
    // 99th percentile of χ² with 3 degrees of freedom.
    assert!(chi2 < 11.345, "chi2 {chi2}");
}

#[test]
fn domains_and_counts_are_respected() {
    let out = simulate(&spec(4, Domain::Unit)).unwrap();
    assert!(out.dataset.y.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    assert!(out.truth().modes.as_ref().unwrap().iter().all(|m| !m.is_empty()));
    for p in [1u8, 2] {
        let out = simulate(&spec(p, Domain::Integer)).unwrap();
        assert!(out.dataset.y.iter().flatten().all(|v| v.fract() == 0.0 && *v >= 0.0));
        assert_eq!(out.dataset.domain, Domain::Integer);
    }
    let out = simulate(&spec(3, Domain::Integer)).unwrap();
    assert_eq!(out.dataset.domain, Domain::Real);
    assert!(!out.notes.is_empty());
    let out = simulate(&SimSpec { rho: 0.3, ..spec(2, Domain::Real) }).unwrap();
    assert!(out.truth().p.iter().all(|p| *p >= 1));
}

#[test]
fn separation_is_enforced() {
    let s = SimSpec { k: 3, m: 5, n: 5, sigma: 2.0, min_separation: Some(4.0), ..SimSpec::default() };
    let mu = simulate(&s).unwrap().truth().mu.clone();
    assert!(separated(&mu, 8.0));
    let impossible = SimSpec { k: 4, m: 1, n: 1, min_separation: Some(50.0), ..SimSpec::default() };
    assert!(simulate(&impossible).is_err());
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(simulate(&SimSpec { procedure: 5, ..SimSpec::default() }).is_err());
    assert!(simulate(&SimSpec { k: 0, ..SimSpec::default() }).is_err());
    assert!(simulate(&SimSpec { rho: -1.0, ..SimSpec::default() }).is_err());
}
