//! Learning-rate schedules ρ_t = (t + d)^r.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ObsFamily;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRateSchedule {
    pub delay: f64,
    pub rate: f64,
}

impl LearningRateSchedule {
    pub fn new(delay: f64, rate: f64) -> Result<Self> {
        let s = Self { delay, rate };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delay >= 0.0 && self.delay.is_finite()) {
            return Err(Error::InvalidParameter(format!("schedule delay must be non-negative, got {}", self.delay)));
        }
        if !(self.rate < 0.0 && self.rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "schedule rate must be negative for decreasing steps, got {}",
                self.rate
            )));
        }
        Ok(())
    }

    /// Step size at iteration `t`; t + d is kept at or above 1.
    pub fn at(&self, t: u64) -> f64 {
        (t as f64 + self.delay).max(1.0).powf(self.rate)
    }
}

/// One schedule per stochastic block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedules {
    pub beta: LearningRateSchedule,
    pub pi: LearningRateSchedule,
    pub xbar_mean: LearningRateSchedule,
    pub xbar_scale: LearningRateSchedule,
    pub count: LearningRateSchedule,
}

impl Schedules {
    /// The published table; Beta observations use a shorter delay on the
    /// local-mean location.
    pub fn standard(family: ObsFamily) -> Self {
        let s = |d: f64, r| LearningRateSchedule { delay: d, rate: r };
        let xbar_delay = if family == ObsFamily::Beta { 2f64.powi(10) } else { 2f64.powi(20) };
        Self {
            beta: s(2f64.powi(4), -0.5),
            pi: s(2f64.powi(10), -0.8),
            xbar_mean: s(xbar_delay, -0.8),
            xbar_scale: s(2f64.powi(20), -0.8),
            count: s(2f64.powi(5), -0.7),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for s in [self.beta, self.pi, self.xbar_mean, self.xbar_scale, self.count] {
            s.validate()?;
        }
        Ok(())
    }
}
