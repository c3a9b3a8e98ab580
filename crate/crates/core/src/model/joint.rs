//! The log-joint density and the partial log-joints used by block updates.

use nalgebra::{DMatrix, DVector};

use super::data::Dataset;
use super::hyper::Hyperparameters;
use super::state::LatentPoint;
use crate::dist::{
    cholesky_lower, mahalanobis_sq, normal_ln_pdf, poisson_ln_pmf, Dirichlet, InverseWishart,
    POSITIVE_FLOOR,
};
use crate::error::{Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Cholesky factor and log-determinant of one factor covariance.
#[derive(Debug, Clone)]
pub struct FactorCache {
    pub chol: DMatrix<f64>,
    pub ln_det: f64,
}

impl FactorCache {
    pub fn new(sigma: &DMatrix<f64>) -> Result<Self> {
        let chol = cholesky_lower(sigma)?;
        let ln_det = 2.0 * chol.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(Self { chol, ln_det })
    }

    /// (x − μ)ᵀ Σ⁻¹ (x − μ).
    pub fn maha(&self, x: &[f64], mu: &[f64]) -> f64 {
        let d = DVector::from_iterator(x.len(), x.iter().zip(mu).map(|(a, b)| a - b));
        mahalanobis_sq(&self.chol, &d)
    }

    /// log N(x | μ, Σ/w) given the Mahalanobis term under Σ.
    #[inline]
    pub fn ln_scaled(&self, dim: usize, maha: f64, w: f64) -> f64 {
        let w = w.max(POSITIVE_FLOOR);
        let m = dim as f64;
        -m * HALF_LN_2PI - 0.5 * self.ln_det + 0.5 * m * w.ln() - 0.5 * w * maha
    }

    /// log N(x | μ, Σ/w).
    pub fn ln_local_prior(&self, x: &[f64], mu: &[f64], w: f64) -> f64 {
        self.ln_scaled(x.len(), self.maha(x, mu), w)
    }
}

/// Σ_k π_k x̄_k, the linear predictor before the link.
pub fn linear_predictor(pi_n: &[f64], xbar_n: &[Vec<f64>]) -> Vec<f64> {
    let m = xbar_n.first().map_or(0, Vec::len);
    let mut a = vec![0.0; m];
    for (p, x) in pi_n.iter().zip(xbar_n) {
        for (acc, v) in a.iter_mut().zip(x) {
            *acc += p * v;
        }
    }
    a
}

/// log p(y_n | x̄_n, π_n) from a precomputed linear predictor; `y_n` must
/// already be in the family's support.
#[inline]
pub fn ln_lik_predictor(hp: &Hyperparameters, y_n: &[f64], predictor: &[f64]) -> f64 {
    y_n.iter()
        .zip(predictor)
        .zip(&hp.eta)
        .map(|((&y, &a), &eta)| hp.family.ln_f(y, hp.link.apply(a), eta))
        .sum()
}

/// log p(y_n | x̄_n, π_n) = Σ_m log f(y_nm | g(Σ_k π_nk x̄_nkm), η_m).
pub fn log_lik_obs(hp: &Hyperparameters, y_n: &[f64], pi_n: &[f64], xbar_n: &[Vec<f64>]) -> Result<f64> {
    if pi_n.len() != xbar_n.len() {
        return Err(Error::Shape("pi and xbar disagree on K".into()));
    }
    if xbar_n.iter().any(|x| x.len() != y_n.len()) || hp.eta.len() != y_n.len() {
        return Err(Error::Shape("feature count mismatch".into()));
    }
    for &y in y_n {
        hp.family.check(y)?;
    }
    Ok(ln_lik_predictor(hp, y_n, &linear_predictor(pi_n, xbar_n)))
}

/// Which latent a partial log-joint is taken with respect to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Xbar { n: usize, k: usize },
    Count { n: usize },
    Pi { n: usize },
    Beta,
}

/// Prior and per-factor caches shared by the term evaluations.
struct Terms<'a> {
    hp: &'a Hyperparameters,
    data: &'a Dataset,
    z: &'a LatentPoint,
    caches: Vec<FactorCache>,
}

impl<'a> Terms<'a> {
    fn new(hp: &'a Hyperparameters, data: &'a Dataset, z: &'a LatentPoint) -> Result<Self> {
        z.check(hp.dim())?;
        if z.n() != data.n() || data.m() != hp.dim() {
            return Err(Error::Shape("latent point, data and hyperparameters disagree".into()));
        }
        let caches = z.sigma.iter().map(FactorCache::new).collect::<Result<_>>()?;
        Ok(Self { hp, data, z, caches })
    }

    fn beta_prior(&self) -> Result<f64> {
        let a = self.hp.alpha0.expand(self.z.beta.len())?;
        Dirichlet::new(a)?.ln_pdf(&self.z.beta)
    }

    fn pi_prior(&self, n: usize) -> Result<f64> {
        let k = self.z.k();
        let conc = self.z.beta[..k]
            .iter()
            .map(|b| (self.hp.alpha * b).max(f64::MIN_POSITIVE))
            .collect();
        Dirichlet::new(conc)?.ln_pdf(&self.z.pi[n])
    }

    fn mu_prior(&self, k: usize) -> f64 {
        self.z.mu[k]
            .iter()
            .map(|&v| normal_ln_pdf(v, self.hp.mu0, self.hp.sigma0))
            .sum()
    }

    fn sigma_prior(&self, iw: &InverseWishart, k: usize) -> f64 {
        iw.ln_pdf_with_cholesky(&self.caches[k].chol)
    }

    fn xbar_prior(&self, n: usize, k: usize) -> f64 {
        let w = self.z.p[n] * self.z.pi[n][k];
        self.caches[k].ln_local_prior(&self.z.xbar[n][k], &self.z.mu[k], w)
    }

    fn count_prior(&self, n: usize) -> f64 {
        poisson_ln_pmf(self.z.p[n], self.hp.rho)
    }

    fn likelihood(&self, n: usize) -> Result<f64> {
        log_lik_obs(self.hp, &self.data.y[n], &self.z.pi[n], &self.z.xbar[n])
    }
}

/// Full log p(y, β, π, μ, Σ, x̄, P).
pub fn log_joint(hp: &Hyperparameters, data: &Dataset, z: &LatentPoint) -> Result<f64> {
    let t = Terms::new(hp, data, z)?;
    let iw = InverseWishart::new(hp.nu0, hp.psi0.clone())?;
    let mut total = t.beta_prior()?;
    for k in 0..z.k() {
        total += t.mu_prior(k) + t.sigma_prior(&iw, k);
    }
    for n in 0..z.n() {
        total += t.pi_prior(n)? + t.count_prior(n) + t.likelihood(n)?;
        for k in 0..z.k() {
            total += t.xbar_prior(n, k);
        }
    }
    Ok(total)
}

/// The subset of log-joint terms that contain the chosen latent.
///
/// The count block sums the local-mean prior over every factor, since P_n
/// scales each factor's covariance.
pub fn partial_log_joint(which: Block, hp: &Hyperparameters, data: &Dataset, z: &LatentPoint) -> Result<f64> {
    let t = Terms::new(hp, data, z)?;
    let (n_max, k_max) = (z.n(), z.k());
    let check_n = |n: usize| {
        if n < n_max {
            Ok(())
        } else {
            Err(Error::Shape(format!("observation {n} out of range")))
        }
    };
    match which {
        Block::Xbar { n, k } => {
            check_n(n)?;
            if k >= k_max {
                return Err(Error::Shape(format!("factor {k} out of range")));
            }
            Ok(t.xbar_prior(n, k) + t.likelihood(n)?)
        }
        Block::Count { n } => {
            check_n(n)?;
            Ok((0..k_max).map(|k| t.xbar_prior(n, k)).sum::<f64>() + t.count_prior(n))
        }
        Block::Pi { n } => {
            check_n(n)?;
            let priors: f64 = (0..k_max).map(|k| t.xbar_prior(n, k)).sum();
            Ok(priors + t.likelihood(n)? + t.pi_prior(n)?)
        }
        Block::Beta => {
            let mut total = t.beta_prior()?;
            for n in 0..n_max {
                total += t.pi_prior(n)?;
            }
            Ok(total)
        }
    }
}
