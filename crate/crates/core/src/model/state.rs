//! Variational parameters and concrete latent realizations.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dist::{cholesky_lower, POSITIVE_FLOOR};
use crate::error::{Error, Result};

/// Fixed standard deviation of q(μ): the global means are near point estimates.
pub const MU_Q_SCALE: f64 = 1e-4;

/// Per-factor global parameters: q(μ_k) mean, q(Σ_k) dof and scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorParams {
    pub mu: Vec<f64>,
    pub nu: f64,
    #[serde(with = "crate::serde_util::matrix")]
    pub psi: DMatrix<f64>,
}

/// Per-observation parameters: q(π_n), q(x̄_n·) and q(P_n).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalParams {
    pub pi: Vec<f64>,
    pub xbar_mean: Vec<Vec<f64>>,
    pub xbar_scale: Vec<Vec<f64>>,
    pub p: f64,
}

/// Catch-all factor features kept from nonparametric initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Remainder {
    pub mu: Vec<f64>,
    pub xbar: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalState {
    /// Dirichlet concentration over K factors plus the remaining mass.
    pub beta: Vec<f64>,
    pub factors: Vec<FactorParams>,
    pub locals: Vec<LocalParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remainder: Option<Remainder>,
}

impl VariationalState {
    pub fn k(&self) -> usize {
        self.factors.len()
    }

    pub fn n(&self) -> usize {
        self.locals.len()
    }

    pub fn m(&self) -> usize {
        self.factors.first().map_or(0, |f| f.mu.len())
    }

    /// E[β] over all K+1 entries.
    pub fn expected_beta(&self) -> Vec<f64> {
        normalize(&self.beta)
    }

    pub fn expected_pi(&self, n: usize) -> Vec<f64> {
        normalize(&self.locals[n].pi)
    }

    /// E[Σ_k] = Ψ/(ν − M − 1); when ν ≤ M + 1 the mean does not exist and the
    /// mode Ψ/(ν + M + 1) stands in.
    pub fn expected_sigma(&self, k: usize) -> DMatrix<f64> {
        let f = &self.factors[k];
        expected_sigma(f.nu, &f.psi)
    }

    /// Applies the positivity floor to every positive parameter.
    pub fn floor_positive(&mut self) {
        for b in &mut self.beta {
            *b = b.max(POSITIVE_FLOOR);
        }
        for l in &mut self.locals {
            for v in &mut l.pi {
                *v = v.max(POSITIVE_FLOOR);
            }
            for row in &mut l.xbar_scale {
                for v in row {
                    *v = v.max(POSITIVE_FLOOR);
                }
            }
            l.p = l.p.max(POSITIVE_FLOOR);
        }
    }

    pub fn check_invariants(&self) -> Result<()> {
        let (k, m) = (self.k(), self.m());
        let fail = |msg: String| Err(Error::Numerical(format!("state invariant: {msg}")));
        if k == 0 {
            return fail("no factors".into());
        }
        if self.beta.len() != k + 1 {
            return fail(format!("beta has {} entries for K = {k}", self.beta.len()));
        }
        if self.beta.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            return fail("beta concentration not positive".into());
        }
        for (i, f) in self.factors.iter().enumerate() {
            if f.mu.len() != m || f.mu.iter().any(|v| !v.is_finite()) {
                return fail(format!("factor {i} mean invalid"));
            }
            if !(f.nu > m as f64 - 1.0) || !f.nu.is_finite() {
                return fail(format!("factor {i} dof {} not above M - 1", f.nu));
            }
            if f.psi.nrows() != m || cholesky_lower(&f.psi).is_err() {
                return fail(format!("factor {i} scale matrix not SPD"));
            }
        }
        for (n, l) in self.locals.iter().enumerate() {
            if l.pi.len() != k || l.xbar_mean.len() != k || l.xbar_scale.len() != k {
                return fail(format!("observation {n} has wrong factor count"));
            }
            if l.pi.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return fail(format!("observation {n} pi concentration not positive"));
            }
            for kk in 0..k {
                if l.xbar_mean[kk].len() != m || l.xbar_mean[kk].iter().any(|v| !v.is_finite()) {
                    return fail(format!("observation {n} factor {kk} local mean invalid"));
                }
                if l.xbar_scale[kk].len() != m || l.xbar_scale[kk].iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                    return fail(format!("observation {n} factor {kk} local scale invalid"));
                }
            }
            if !(l.p > 0.0 && l.p.is_finite()) {
                return fail(format!("observation {n} count rate not positive"));
            }
        }
        Ok(())
    }

    /// Expected values of every latent, the plug-in point used by the
    /// block updates. β keeps all K+1 entries.
    pub fn expectations(&self) -> LatentPoint {
        LatentPoint {
            beta: self.expected_beta(),
            pi: (0..self.n()).map(|n| self.expected_pi(n)).collect(),
            mu: self.factors.iter().map(|f| f.mu.clone()).collect(),
            sigma: (0..self.k()).map(|k| self.expected_sigma(k)).collect(),
            xbar: self.locals.iter().map(|l| l.xbar_mean.clone()).collect(),
            p: self.locals.iter().map(|l| l.p).collect(),
        }
    }
}

pub fn expected_sigma(nu: f64, psi: &DMatrix<f64>) -> DMatrix<f64> {
    let m = psi.nrows() as f64;
    if nu > m + 1.0 {
        psi / (nu - m - 1.0)
    } else {
        psi / (nu + m + 1.0)
    }
}

pub(crate) fn normalize(v: &[f64]) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

/// One realization of every latent variable.
///
/// `beta` holds K entries, or K+1 when the last one is the remaining mass;
/// local terms only read the first K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPoint {
    pub beta: Vec<f64>,
    pub pi: Vec<Vec<f64>>,
    pub mu: Vec<Vec<f64>>,
    #[serde(with = "crate::serde_util::matrices")]
    pub sigma: Vec<DMatrix<f64>>,
    pub xbar: Vec<Vec<Vec<f64>>>,
    pub p: Vec<f64>,
}

impl LatentPoint {
    pub fn k(&self) -> usize {
        self.mu.len()
    }

    pub fn n(&self) -> usize {
        self.pi.len()
    }

    pub fn check(&self, m: usize) -> Result<()> {
        let k = self.k();
        let fail = |msg: &str| Err(Error::Shape(format!("latent point: {msg}")));
        if self.beta.len() != k && self.beta.len() != k + 1 {
            return fail("beta length must be K or K+1");
        }
        if self.sigma.len() != k || self.mu.iter().any(|r| r.len() != m) {
            return fail("global arrays inconsistent");
        }
        let n = self.n();
        if self.xbar.len() != n || self.p.len() != n {
            return fail("local arrays inconsistent");
        }
        if self.pi.iter().any(|r| r.len() != k)
            || self.xbar.iter().any(|x| x.len() != k || x.iter().any(|v| v.len() != m))
        {
            return fail("local arrays have the wrong factor count");
        }
        Ok(())
    }
}
