//! Starting point for a fit, from fuzzy c-means on lightly jittered data.

use rand_distr::{Distribution, Normal};

use super::cluster::fuzzy_cmeans;
use crate::dist::POSITIVE_FLOOR;
use crate::error::{Error, Result};
use crate::model::state::expected_sigma;
use crate::model::{linear_predictor, Dataset, FactorParams, Hyperparameters, LocalParams, Remainder, VariationalState};
use crate::rng::{substream, Stream};
use nalgebra::DMatrix;

/// Multiplier mapping fuzzy memberships to Dirichlet concentrations.
pub const LABEL_SCALE: f64 = 10.0;
/// Concentration given to the remaining mass of β.
pub const REMAINDER_MASS: f64 = 0.1;
const JITTER: f64 = 1e-3;
const VARIANCE_FLOOR: f64 = 1e-6;
const MEMBERSHIP_FLOOR: f64 = 1e-3;

fn column_moments(rows: &[Vec<f64>], m: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len().max(1) as f64;
    let mean: Vec<f64> = (0..m).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let var = (0..m)
        .map(|j| rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n)
        .collect();
    (mean, var)
}

/// Builds a K-factor state. With `nonparametric` set, the remainder factor's
/// features are kept alongside.
pub fn initialize(
    hp: &Hyperparameters,
    data: &Dataset,
    k: usize,
    nonparametric: bool,
    seed: u64,
) -> Result<VariationalState> {
    hp.validate()?;
    data.validate()?;
    if k == 0 {
        return Err(Error::InvalidParameter("at least one factor is required".into()));
    }
    let (n, m) = (data.n(), data.m());
    if n == 0 {
        return Err(Error::Data("cannot initialize from an empty dataset".into()));
    }
    if m != hp.dim() {
        return Err(Error::Shape(format!("data has {m} features, hyperparameters {}", hp.dim())));
    }
    let mut rng = substream(seed, Stream::Init, 0, 0);

    let (_, raw_var) = column_moments(&data.y, m);
    let jitter: Vec<Normal<f64>> = raw_var
        .iter()
        .map(|v| {
            let sd = v.sqrt();
            Normal::new(0.0, JITTER * if sd > 0.0 { sd } else { 1.0 }).expect("finite scale")
        })
        .collect();
    let noisy: Vec<Vec<f64>> = data
        .y
        .iter()
        .map(|row| row.iter().zip(&jitter).map(|(y, d)| y + d.sample(&mut rng)).collect())
        .collect();

    let fc = fuzzy_cmeans(&noisy, k, &mut rng);
    let link = hp.link;
    let latent: Vec<Vec<f64>> = noisy.iter().map(|r| r.iter().map(|y| link.inverse(*y)).collect()).collect();
    let (_, latent_var) = column_moments(&latent, m);
    let latent_var: Vec<f64> = latent_var.into_iter().map(|v| v.max(VARIANCE_FLOOR)).collect();
    let latent_sd: Vec<f64> = latent_var.iter().map(|v| v.sqrt()).collect();

    let psi = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(latent_var));
    let nu = hp.nu0 + m as f64 + 1.0;
    let sigma_diag: Vec<f64> = expected_sigma(nu, &psi).diagonal().iter().copied().collect();
    let factors: Vec<FactorParams> = fc
        .centers
        .iter()
        .map(|c| FactorParams { mu: c.iter().map(|y| link.inverse(*y)).collect(), nu, psi: psi.clone() })
        .collect();

    let mut beta: Vec<f64> = (0..k)
        .map(|j| LABEL_SCALE * fc.memberships.iter().map(|u| u[j]).sum::<f64>() / n as f64)
        .collect();
    beta.push(REMAINDER_MASS);

    let locals: Vec<LocalParams> = fc
        .memberships
        .iter()
        .map(|u| {
            let pi: Vec<f64> = u.iter().map(|v| LABEL_SCALE * v.max(MEMBERSHIP_FLOOR)).collect();
            let total: f64 = pi.iter().sum();
            let xbar_scale = pi
                .iter()
                .map(|p| {
                    let share = p / total;
                    (0..m)
                        .map(|j| {
                            (sigma_diag[j] / (hp.rho * share)).sqrt().clamp(JITTER * latent_sd[j], latent_sd[j])
                        })
                        .collect()
                })
                .collect();
            LocalParams {
                pi,
                xbar_mean: factors.iter().map(|f| f.mu.clone()).collect(),
                xbar_scale,
                p: hp.rho,
            }
        })
        .collect();

    let remainder = nonparametric.then(|| Remainder {
        mu: data.column_means().iter().map(|y| link.inverse(*y)).collect(),
        xbar: data
            .y
            .iter()
            .zip(&locals)
            .map(|(y, l)| {
                let total: f64 = l.pi.iter().sum();
                let share: Vec<f64> = l.pi.iter().map(|p| p / total).collect();
                let fitted = linear_predictor(&share, &l.xbar_mean);
                y.iter().zip(fitted).map(|(y, a)| y - link.apply(a)).collect()
            })
            .collect(),
    });

    let mut state = VariationalState { beta, factors, locals, remainder };
    state.floor_positive();
    debug_assert!(state.beta.iter().all(|b| *b >= POSITIVE_FLOOR));
    state.check_invariants()?;
    Ok(state)
}
