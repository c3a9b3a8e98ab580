//! Fixed model constants.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::link::{Link, ObsFamily};
use crate::dist::cholesky_lower;
use crate::error::{Error, Result};

/// Default per-feature observation spread when none is configured.
pub const DEFAULT_ETA: f64 = 0.01;

/// Global Dirichlet concentration: one value for every entry, or a full vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Concentration {
    Symmetric(f64),
    Vector(Vec<f64>),
}

impl Concentration {
    /// Concentration vector of length `len`.
    pub fn expand(&self, len: usize) -> Result<Vec<f64>> {
        match self {
            Self::Symmetric(a) => Ok(vec![*a; len]),
            Self::Vector(v) if v.len() == len => Ok(v.clone()),
            Self::Vector(v) => Err(Error::Shape(format!(
                "alpha0 has {} entries but {len} are needed",
                v.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub alpha0: Concentration,
    pub alpha: f64,
    pub mu0: f64,
    /// Prior standard deviation of each global mean entry.
    pub sigma0: f64,
    #[serde(with = "crate::serde_util::matrix")]
    pub psi0: DMatrix<f64>,
    pub nu0: f64,
    pub rho: f64,
    pub eta: Vec<f64>,
    pub family: ObsFamily,
    pub link: Link,
}

impl Hyperparameters {
    /// Defaults for `m` features: α₀ = 1, α = 10, μ₀ = 0, σ₀ = 1, Ψ = I,
    /// ν = M + 2, ρ = 100, η = 0.01.
    pub fn defaults(m: usize, family: ObsFamily, link: Link) -> Self {
        Self {
            alpha0: Concentration::Symmetric(1.0),
            alpha: 10.0,
            mu0: 0.0,
            sigma0: 1.0,
            psi0: DMatrix::identity(m, m),
            nu0: m as f64 + 2.0,
            rho: 100.0,
            eta: vec![DEFAULT_ETA; m],
            family,
            link,
        }
    }

    pub fn dim(&self) -> usize {
        self.psi0.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(what.to_string()));
        let m = self.dim();
        if m == 0 || self.psi0.ncols() != m {
            return Err(Error::Shape("psi0 must be a non-empty square matrix".into()));
        }
        if self.eta.len() != m {
            return Err(Error::Shape(format!("eta has {} entries for {m} features", self.eta.len())));
        }
        match &self.alpha0 {
            Concentration::Symmetric(a) if !(*a > 0.0 && a.is_finite()) => return bad("alpha0 must be positive"),
            Concentration::Vector(v) if v.is_empty() || v.iter().any(|a| !(*a > 0.0 && a.is_finite())) => {
                return bad("alpha0 entries must be positive")
            }
            _ => {}
        }
        for (name, v) in [("alpha", self.alpha), ("sigma0", self.sigma0), ("rho", self.rho)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be positive, got {v}"));
            }
        }
        if !self.mu0.is_finite() {
            return bad("mu0 must be finite");
        }
        if !(self.nu0 > m as f64 - 1.0) || !self.nu0.is_finite() {
            return bad(&format!("nu0 must exceed M - 1 = {}", m as f64 - 1.0));
        }
        if self.eta.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return bad("eta entries must be positive");
        }
        cholesky_lower(&self.psi0)
            .map_err(|e| Error::InvalidParameter(format!("psi0: {e}")))?;
        if !self.family.supports(self.link) {
            return Err(Error::InvalidParameter(format!(
                "link {} is not compatible with the {} family (allowed: {})",
                self.link.name(),
                self.family.name(),
                self.family.links().iter().map(|l| l.name()).collect::<Vec<_>>().join(", ")
            )));
        }
        Ok(())
    }
}
