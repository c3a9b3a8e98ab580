//! Monte-Carlo estimate of the evidence lower bound.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::hyper::Hyperparameters;
use super::joint::{log_joint, FactorCache};
use super::state::{LatentPoint, VariationalState, MU_Q_SCALE};
use crate::dist::{dirichlet_sample, normal_ln_pdf, poisson_ln_pmf, Dirichlet, InverseWishart, Normal, Poisson};
use crate::error::Result;
use crate::rng::{substream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboEstimate {
    pub value: f64,
    /// Standard error of the Monte-Carlo mean.
    pub std_err: f64,
    pub samples: usize,
}

/// One joint draw from q.
pub fn sample_latent<R: Rng + ?Sized>(state: &VariationalState, rng: &mut R) -> Result<LatentPoint> {
    let beta = dirichlet_sample(&state.beta, rng);
    let mut mu = Vec::with_capacity(state.k());
    let mut sigma = Vec::with_capacity(state.k());
    for f in &state.factors {
        mu.push(f.mu.iter().map(|&m| m + MU_Q_SCALE * rng.sample::<f64, _>(rand_distr::StandardNormal)).collect());
        sigma.push(InverseWishart::new(f.nu, f.psi.clone())?.sample(rng));
    }
    let mut pi = Vec::with_capacity(state.n());
    let mut xbar = Vec::with_capacity(state.n());
    let mut p = Vec::with_capacity(state.n());
    for l in &state.locals {
        pi.push(dirichlet_sample(&l.pi, rng));
        xbar.push(
            l.xbar_mean
                .iter()
                .zip(&l.xbar_scale)
                .map(|(ms, ss)| {
                    ms.iter()
                        .zip(ss)
                        .map(|(&m, &s)| Normal::new(m, s).map(|d| d.sample(rng)))
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<Vec<_>>>()?,
        );
        p.push(Poisson::new(l.p)?.sample(rng) as f64);
    }
    Ok(LatentPoint { beta, pi, mu, sigma, xbar, p })
}

/// log q(z | λ).
pub fn log_q(state: &VariationalState, z: &LatentPoint) -> Result<f64> {
    let mut total = Dirichlet::new(state.beta.clone())?.ln_pdf_unchecked(&z.beta);
    for (k, f) in state.factors.iter().enumerate() {
        total += f.mu.iter().zip(&z.mu[k]).map(|(&m, &x)| normal_ln_pdf(x, m, MU_Q_SCALE)).sum::<f64>();
        let iw = InverseWishart::new(f.nu, f.psi.clone())?;
        total += iw.ln_pdf_with_cholesky(&FactorCache::new(&z.sigma[k])?.chol);
    }
    for (n, l) in state.locals.iter().enumerate() {
        total += Dirichlet::new(l.pi.clone())?.ln_pdf_unchecked(&z.pi[n]);
        for k in 0..l.xbar_mean.len() {
            for j in 0..l.xbar_mean[k].len() {
                total += normal_ln_pdf(z.xbar[n][k][j], l.xbar_mean[k][j], l.xbar_scale[k][j]);
            }
        }
        total += poisson_ln_pmf(z.p[n], l.p);
    }
    Ok(total)
}

/// E_q[log p(y, z) − log q(z)] from `samples` joint draws.
///
/// Draw s uses its own stream derived from `seed`, so the estimate does not
/// depend on the thread count and two states compared under the same seed
/// share their random numbers.
pub fn elbo(
    hp: &Hyperparameters,
    data: &Dataset,
    state: &VariationalState,
    samples: usize,
    seed: u64,
) -> Result<ElboEstimate> {
    let samples = samples.max(1);
    let values = (0..samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = substream(seed, Stream::Elbo, s as u64, 0);
            let z = sample_latent(state, &mut rng)?;
            Ok(log_joint(hp, data, &z)? - log_q(state, &z)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(summarize(&values))
}

pub(crate) fn summarize(values: &[f64]) -> ElboEstimate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    ElboEstimate { value: mean, std_err: (var / n).sqrt(), samples: values.len() }
}
