//! Observed data and optional ground truth.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::link::Domain;
use crate::error::{Error, Result};

const SIMPLEX_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// One row per observation.
    pub y: Vec<Vec<f64>>,
    pub domain: Domain,
    pub feature_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<GroundTruth>,
}

impl Dataset {
    pub fn new(y: Vec<Vec<f64>>, domain: Domain) -> Result<Self> {
        let m = y.first().map_or(0, Vec::len);
        let names = (1..=m).map(|j| format!("f{j}")).collect();
        Self::with_names(y, domain, names)
    }

    pub fn with_names(y: Vec<Vec<f64>>, domain: Domain, feature_names: Vec<String>) -> Result<Self> {
        let d = Self { y, domain, feature_names, truth: None };
        d.validate()?;
        Ok(d)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn m(&self) -> usize {
        self.feature_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.m();
        for (n, row) in self.y.iter().enumerate() {
            if row.len() != m {
                return Err(Error::Shape(format!(
                    "row {} has {} values, expected {m}",
                    n + 1,
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                if !self.domain.contains(v) {
                    return Err(Error::Data(format!(
                        "row {}, feature `{}`: {v} is not in the {} domain",
                        n + 1,
                        self.feature_names[j],
                        self.domain.name()
                    )));
                }
            }
        }
        if let Some(t) = &self.truth {
            t.validate(self.n(), m)?;
        }
        Ok(())
    }

    /// Per-feature sample means.
    pub fn column_means(&self) -> Vec<f64> {
        let n = self.n().max(1) as f64;
        (0..self.m())
            .map(|j| self.y.iter().map(|r| r[j]).sum::<f64>() / n)
            .collect()
    }
}

/// Latent quantities behind a simulated data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub beta: Vec<f64>,
    pub pi: Vec<Vec<f64>>,
    pub mu: Vec<Vec<f64>>,
    #[serde(with = "crate::serde_util::matrices")]
    pub sigma: Vec<DMatrix<f64>>,
    pub xbar: Vec<Vec<Vec<f64>>>,
    /// `true` where observation n has no particle in factor k, so the local
    /// mean is a stand-in and must be skipped when scoring.
    pub xbar_mask: Vec<Vec<bool>>,
    pub p: Vec<u64>,
    pub spreads: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<Vec<Vec<Vec<f64>>>>,
}

impl GroundTruth {
    pub fn k(&self) -> usize {
        self.beta.len()
    }

    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        let k = self.k();
        let shape = |what: &str| Err(Error::Shape(format!("ground truth: {what}")));
        if (self.beta.iter().sum::<f64>() - 1.0).abs() > SIMPLEX_TOL {
            return shape("beta does not sum to 1");
        }
        if self.pi.len() != n || self.xbar.len() != n || self.p.len() != n || self.xbar_mask.len() != n {
            return shape("local arrays do not have one entry per observation");
        }
        if self.mu.len() != k || self.sigma.len() != k {
            return shape("global arrays do not have one entry per factor");
        }
        if self.mu.iter().any(|r| r.len() != m) || self.sigma.iter().any(|s| s.nrows() != m || s.ncols() != m) {
            return shape("factor features have the wrong dimension");
        }
        for (i, row) in self.pi.iter().enumerate() {
            if row.len() != k || (row.iter().sum::<f64>() - 1.0).abs() > SIMPLEX_TOL {
                return shape(&format!("pi row {} is not on the {k}-simplex", i + 1));
            }
        }
        if self.xbar.iter().any(|x| x.len() != k || x.iter().any(|v| v.len() != m))
            || self.xbar_mask.iter().any(|r| r.len() != k)
        {
            return shape("xbar has the wrong dimensions");
        }
        if self.spreads.len() != m {
            return shape("spreads need one entry per feature");
        }
        Ok(())
    }
}
