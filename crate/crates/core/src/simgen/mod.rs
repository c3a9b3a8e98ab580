//! Synthetic data with complete ground truth, from four generating
//! procedures over the four observation domains.
//!
//! 1. Local means drawn per observation; particles tightly around them;
//!    observations drawn from f around the particle average.
//! 2. Particles drawn directly around the global means; observations drawn
//!    from f around the particle average.
//! 3. Local means drawn per observation; each particle drawn from f around
//!    its local mean; observations are the particle average.
//! 4. Each factor has several modes; each particle picks a mode uniformly
//!    and is drawn from f around it; observations are the particle average.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{dirichlet_sample, DistParams, InverseWishart, MvNormal, Normal, Point, Poisson};
use crate::error::{Error, Result};
use crate::model::link::admissible_beta_spread;
use crate::model::{Dataset, Domain, GroundTruth, Link};
use crate::rng::{substream, Stream};

/// Multiplier on Σ_k for the particle spread in procedure 1.
pub const TIGHT_PARTICLES: f64 = 1e-6;
/// Mean of the per-factor mode count in procedure 4.
pub const MODE_RATE: f64 = 5.0;
const SEPARATION_ATTEMPTS: usize = 10_000;

/// f(· | μ, σ) for a domain: Normal on the real line, Gamma* with a
/// soft-plus mean on the positive reals, Poisson with a soft-plus rate on the
/// integers and Beta* through the fixed sigmoid on the unit interval.
///
/// Returns the distribution and whether a Beta spread had to be clamped.
pub fn domain_f(domain: Domain, mu: f64, sigma: f64) -> Result<(DistParams, bool)> {
    match domain {
        Domain::Real => Ok((DistParams::normal(mu, sigma)?, false)),
        Domain::Positive => Ok((DistParams::gamma_mean(Link::SoftPlus.apply(mu), sigma)?, false)),
        Domain::Integer => Ok((DistParams::poisson(Link::SoftPlus.apply(mu))?, false)),
        Domain::Unit => {
            let mean = Link::Sigmoid.apply(mu);
            let (s, clamped) = admissible_beta_spread(mean, sigma);
            Ok((DistParams::beta_mean(mean, s)?, clamped))
        }
    }
}

fn draw_scalar<R: Rng + ?Sized>(d: &DistParams, rng: &mut R) -> f64 {
    match d.sample(rng) {
        Point::Real(x) => x,
        Point::Count(c) => c as f64,
        other => unreachable!("scalar family produced {other:?}"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSpec {
    pub procedure: u8,
    pub domain: Domain,
    pub k: usize,
    pub n: usize,
    pub m: usize,
    pub alpha0: f64,
    pub alpha: f64,
    pub mu0: f64,
    /// Prior standard deviation of each global mean entry.
    pub sigma: f64,
    /// Inverse-Wishart scale; the identity when absent.
    #[serde(default, with = "crate::serde_util::opt_matrix", skip_serializing_if = "Option::is_none")]
    pub psi: Option<DMatrix<f64>>,
    /// Inverse-Wishart degrees of freedom; M + 2 when absent.
    pub nu: Option<f64>,
    pub rho: f64,
    /// Inverse-Gamma shape and scale of the per-feature spreads.
    pub spread_shape: f64,
    pub spread_scale: f64,
    /// Minimum pairwise distance between global means, in units of `sigma`.
    pub min_separation: Option<f64>,
    pub seed: u64,
    /// Keep every particle draw in the output.
    pub retain_particles: bool,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self {
            procedure: 1,
            domain: Domain::Real,
            k: 10,
            n: 1000,
            m: 20,
            alpha0: 1.0,
            alpha: 1.0,
            mu0: 0.0,
            sigma: 1.0,
            psi: None,
            nu: None,
            rho: 100.0,
            spread_shape: 3.0,
            spread_scale: 1.0,
            min_separation: None,
            seed: 0,
            retain_particles: false,
        }
    }
}

impl SimSpec {
    pub fn psi(&self) -> DMatrix<f64> {
        self.psi.clone().unwrap_or_else(|| DMatrix::identity(self.m, self.m))
    }

    pub fn nu(&self) -> f64 {
        self.nu.unwrap_or(self.m as f64 + 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(1..=4).contains(&self.procedure) {
            return bad(format!("procedure must be 1, 2, 3 or 4, got {}", self.procedure));
        }
        if self.k == 0 || self.n == 0 || self.m == 0 {
            return bad("k, n and m must all be at least 1".into());
        }
        for (name, v) in [
            ("alpha0", self.alpha0),
            ("alpha", self.alpha),
            ("sigma", self.sigma),
            ("rho", self.rho),
            ("spread_shape", self.spread_shape),
            ("spread_scale", self.spread_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !self.mu0.is_finite() {
            return bad("mu0 must be finite".into());
        }
        let psi = self.psi();
        if psi.nrows() != self.m || psi.ncols() != self.m {
            return bad(format!("psi must be {0}x{0}", self.m));
        }
        InverseWishart::new(self.nu(), psi).map_err(|e| Error::Config(format!("psi/nu: {e}")))?;
        if let Some(s) = self.min_separation {
            if !(s >= 0.0 && s.is_finite()) {
                return bad("min_separation must be non-negative".into());
            }
        }
        Ok(())
    }

    /// Domain the emitted observations actually live in. Averages of integer
    /// draws are not integers, so procedures 3 and 4 report integer data as real.
    pub fn output_domain(&self) -> Domain {
        if self.procedure >= 3 && self.domain == Domain::Integer {
            Domain::Real
        } else {
            self.domain
        }
    }
}

/// One particle: its factor, its mode (procedure 4) and its feature draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub factor: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<usize>,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutput {
    pub dataset: Dataset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub particles: Option<Vec<Vec<Particle>>>,
    pub notes: Vec<String>,
}

impl SimOutput {
    pub fn truth(&self) -> &GroundTruth {
        self.dataset.truth.as_ref().expect("simulated data carries its truth")
    }
}

struct Globals {
    beta: Vec<f64>,
    mu: Vec<Vec<f64>>,
    sigma: Vec<DMatrix<f64>>,
    mvn: Vec<MvNormal>,
    spreads: Vec<f64>,
    modes: Option<Vec<Vec<Vec<f64>>>>,
}

fn separated(mu: &[Vec<f64>], min_dist: f64) -> bool {
    mu.iter().enumerate().all(|(i, a)| {
        mu[i + 1..]
            .iter()
            .all(|b| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt() >= min_dist)
    })
}

fn draw_globals(spec: &SimSpec) -> Result<Globals> {
    let mut rng = substream(spec.seed, Stream::Simulate, 0, 0);
    let beta = dirichlet_sample(&vec![spec.alpha0; spec.k], &mut rng);
    let prior = Normal::new(spec.mu0, spec.sigma)?;
    let draw_mu = |rng: &mut crate::rng::Rng| -> Vec<Vec<f64>> {
        (0..spec.k).map(|_| (0..spec.m).map(|_| prior.sample(rng)).collect()).collect()
    };
    let mut mu = draw_mu(&mut rng);
    if let Some(sep) = spec.min_separation {
        let mut attempts = 1;
        while !separated(&mu, sep * spec.sigma) {
            if attempts == SEPARATION_ATTEMPTS {
                return Err(Error::Config(format!(
                    "no draw of {} means met separation {sep} in {SEPARATION_ATTEMPTS} attempts",
                    spec.k
                )));
            }
            mu = draw_mu(&mut rng);
            attempts += 1;
        }
    }
    let iw = InverseWishart::new(spec.nu(), spec.psi())?;
    let sigma: Vec<DMatrix<f64>> = (0..spec.k).map(|_| iw.sample(&mut rng)).collect();
    let mvn = mu
        .iter()
        .zip(&sigma)
        .map(|(m, s)| MvNormal::new(DVector::from_column_slice(m), s))
        .collect::<Result<Vec<_>>>()?;
    let spread_gamma = rand_distr::Gamma::new(spec.spread_shape, 1.0 / spec.spread_scale)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let spreads = (0..spec.m).map(|_| 1.0 / spread_gamma.sample(&mut rng)).collect();
    let modes = (spec.procedure == 4).then(|| {
        let count = Poisson::new(MODE_RATE).expect("positive rate");
        mvn.iter()
            .map(|d| {
                let mut s = 0;
                while s == 0 {
                    s = count.sample(&mut rng);
                }
                (0..s).map(|_| d.sample(&mut rng)).collect()
            })
            .collect()
    });
    Ok(Globals { beta, mu, sigma, mvn, spreads, modes })
}

struct Local {
    y: Vec<f64>,
    pi: Vec<f64>,
    xbar: Vec<Vec<f64>>,
    mask: Vec<bool>,
    p: u64,
    particles: Option<Vec<Particle>>,
    clamped: bool,
}

fn draw_local(spec: &SimSpec, g: &Globals, n: usize) -> Result<Local> {
    let (k, m) = (spec.k, spec.m);
    let mut rng = substream(spec.seed, Stream::SimObservation, n as u64, 0);
    let conc: Vec<f64> = if spec.procedure == 4 {
        g.beta.clone()
    } else {
        g.beta.iter().map(|b| b * spec.alpha).collect()
    };
    let pi_draw = dirichlet_sample(&conc, &mut rng);
    let drawn_xbar: Option<Vec<Vec<f64>>> =
        matches!(spec.procedure, 1 | 3).then(|| g.mvn.iter().map(|d| d.sample(&mut rng)).collect());
    let count = Poisson::new(spec.rho)?;
    let mut p = 0;
    while p == 0 {
        p = count.sample(&mut rng);
    }
    let assign = WeightedIndex::new(pi_draw.iter().map(|v| v.max(0.0))).map_err(|e| Error::Numerical(e.to_string()))?;
    let tight: Option<Vec<MvNormal>> = if spec.procedure == 1 {
        let xb = drawn_xbar.as_ref().expect("procedure 1 draws local means");
        Some(
            xb.iter()
                .zip(&g.sigma)
                .map(|(x, s)| MvNormal::new(DVector::from_column_slice(x), &(s * TIGHT_PARTICLES)))
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };

    let mut clamped = false;
    let mut counts = vec![0u64; k];
    // Per-factor sums of the latent particle features.
    let mut latent_sums = vec![vec![0.0; m]; k];
    let mut x_sum = vec![0.0; m];
    let mut particles = spec.retain_particles.then(Vec::new);
    for _ in 0..p {
        let z = assign.sample(&mut rng);
        counts[z] += 1;
        let (x, mode, latent): (Vec<f64>, Option<usize>, Option<Vec<f64>>) = match spec.procedure {
            1 => (tight.as_ref().expect("built above")[z].sample(&mut rng), None, None),
            2 => (g.mvn[z].sample(&mut rng), None, None),
            3 => {
                let centre = &drawn_xbar.as_ref().expect("procedure 3 draws local means")[z];
                let mut x = Vec::with_capacity(m);
                for (c, s) in centre.iter().zip(&g.spreads) {
                    let (f, c) = domain_f(spec.domain, *c, *s)?;
                    clamped |= c;
                    x.push(draw_scalar(&f, &mut rng));
                }
                (x, None, None)
            }
            _ => {
                let modes = &g.modes.as_ref().expect("procedure 4 draws modes")[z];
                let s = rng.random_range(0..modes.len());
                let mut x = Vec::with_capacity(m);
                for (c, sd) in modes[s].iter().zip(&g.spreads) {
                    let (f, c) = domain_f(spec.domain, *c, *sd)?;
                    clamped |= c;
                    x.push(draw_scalar(&f, &mut rng));
                }
                (x, Some(s), Some(modes[s].clone()))
            }
        };
        let latent_x = latent.as_ref().unwrap_or(&x);
        for (a, v) in latent_sums[z].iter_mut().zip(latent_x) {
            *a += v;
        }
        for (a, v) in x_sum.iter_mut().zip(&x) {
            *a += v;
        }
        if let Some(ps) = particles.as_mut() {
            ps.push(Particle { factor: z, mode, x });
        }
    }

    let pf = p as f64;
    let pi: Vec<f64> = counts.iter().map(|c| *c as f64 / pf).collect();
    let mask: Vec<bool> = counts.iter().map(|c| *c == 0).collect();
    let xbar: Vec<Vec<f64>> = (0..k)
        .map(|j| match (&drawn_xbar, counts[j]) {
            (Some(xb), _) => xb[j].clone(),
            (None, 0) => g.mu[j].clone(),
            (None, c) => latent_sums[j].iter().map(|s| s / c as f64).collect(),
        })
        .collect();
    let mean: Vec<f64> = x_sum.iter().map(|s| s / pf).collect();
    let y = if spec.procedure <= 2 {
        let mut y = Vec::with_capacity(m);
        for (a, s) in mean.iter().zip(&g.spreads) {
            let (f, c) = domain_f(spec.domain, *a, *s)?;
            clamped |= c;
            y.push(draw_scalar(&f, &mut rng));
        }
        y
    } else {
        mean
    };
    Ok(Local { y, pi, xbar, mask, p, particles, clamped })
}

/// Draws a dataset and its ground truth.
pub fn simulate(spec: &SimSpec) -> Result<SimOutput> {
    spec.validate()?;
    let g = draw_globals(spec)?;
    let locals: Vec<Local> = (0..spec.n).into_par_iter().map(|n| draw_local(spec, &g, n)).collect::<Result<_>>()?;

    let mut notes = Vec::new();
    if locals.iter().any(|l| l.clamped) {
        notes.push("some Beta spreads exceeded their admissible maximum and were clamped".to_string());
    }
    if spec.output_domain() != spec.domain {
        notes.push(format!(
            "procedure {} averages integer draws, so the observations are declared real",
            spec.procedure
        ));
    }
    let truth = GroundTruth {
        beta: g.beta,
        pi: locals.iter().map(|l| l.pi.clone()).collect(),
        mu: g.mu,
        sigma: g.sigma,
        xbar: locals.iter().map(|l| l.xbar.clone()).collect(),
        xbar_mask: locals.iter().map(|l| l.mask.clone()).collect(),
        p: locals.iter().map(|l| l.p).collect(),
        spreads: g.spreads,
        modes: g.modes,
    };
    let names = (0..spec.m).map(|j| format!("f{j}")).collect();
    let particles = spec.retain_particles.then(|| locals.iter().map(|l| l.particles.clone().unwrap_or_default()).collect());
    let mut dataset = Dataset::with_names(locals.into_iter().map(|l| l.y).collect(), spec.output_domain(), names)?;
    dataset.truth = Some(truth);
    Ok(SimOutput { dataset, particles, notes })
}

#[cfg(test)]
mod tests;
