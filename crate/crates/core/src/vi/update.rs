//! Closed-form updates for the factor means μ_k and covariances Σ_k.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dist::{chol_inverse, cholesky_lower, symmetrize};
use crate::error::{Error, Result};
use crate::model::{Hyperparameters, VariationalState, MU_Q_SCALE};

/// Which closed form the μ/Σ step uses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GlobalUpdate {
    /// The coordinate-ascent optimum of the ELBO for q(μ) and q(Σ):
    /// ν = ν0 + N, Ψ accumulates E_q[(x̄ − μ)(x̄ − μ)ᵀ] including the q
    /// variances, and μ is weighted by E[Σ⁻¹] = νΨ⁻¹.
    #[default]
    Exact,
    /// ν = ν0 + Σ_n w_n, Ψ from the local-mean expectations only, and μ
    /// weighted by E[Σ]⁻¹.
    Published,
}

/// Weight E[P_n]·E[π_nk] of observation n in factor k's updates.
fn weights(state: &VariationalState, k: usize) -> Vec<f64> {
    (0..state.n())
        .map(|n| state.locals[n].p * state.expected_pi(n)[k])
        .collect()
}

fn inverse_spd(m: &DMatrix<f64>, k: usize, what: &str) -> Result<DMatrix<f64>> {
    let chol = cholesky_lower(&symmetrize(m.clone()))
        .map_err(|_| Error::Numerical(format!("factor {k}: {what} not positive definite")))?;
    Ok(chol_inverse(&chol))
}

/// Updates every factor's μ, then ν and Ψ around the new μ.
///
/// With w_n = E[P_n] E[π_nk], W = Σ_n w_n and Λ the precision plug-in,
/// μ_k = (σ0⁻² I + W Λ)⁻¹ (σ0⁻² μ0 + Λ Σ_n w_n E[x̄_nk]).
pub fn update_mu_sigma(hp: &Hyperparameters, state: &mut VariationalState, rule: GlobalUpdate) -> Result<()> {
    let (m, n) = (state.m(), state.n());
    let prior_prec = hp.sigma0.powi(-2);
    for k in 0..state.k() {
        let w = weights(state, k);
        let total: f64 = w.iter().sum();
        let mut weighted = DVector::zeros(m);
        for (i, wn) in w.iter().enumerate() {
            weighted += DVector::from_column_slice(&state.locals[i].xbar_mean[k]) * *wn;
        }
        let precision = match rule {
            GlobalUpdate::Exact => {
                let f = &state.factors[k];
                inverse_spd(&f.psi, k, "scale matrix")? * f.nu
            }
            GlobalUpdate::Published => inverse_spd(&state.expected_sigma(k), k, "expected covariance")?,
        };
        let prec = DMatrix::identity(m, m) * prior_prec + &precision * total;
        let rhs = DVector::from_element(m, prior_prec * hp.mu0) + &precision * weighted;
        let mu = inverse_spd(&prec, k, "precision sum")? * rhs;

        let mut psi = hp.psi0.clone();
        for (i, wn) in w.iter().enumerate() {
            let local = &state.locals[i];
            let d = DVector::from_column_slice(&local.xbar_mean[k]) - &mu;
            psi += &d * d.transpose() * *wn;
            if rule == GlobalUpdate::Exact {
                for j in 0..m {
                    psi[(j, j)] += wn * (local.xbar_scale[k][j].powi(2) + MU_Q_SCALE * MU_Q_SCALE);
                }
            }
        }
        let f = &mut state.factors[k];
        f.mu = mu.iter().copied().collect();
        f.nu = hp.nu0
            + match rule {
                GlobalUpdate::Exact => n as f64,
                GlobalUpdate::Published => total,
            };
        f.psi = symmetrize(psi);
    }
    Ok(())
}
