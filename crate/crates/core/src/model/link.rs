//! Link functions and observation families.

use serde::{Deserialize, Serialize};

use crate::dist::{
    beta_ln_pdf, gamma_ln_pdf, normal_ln_pdf, poisson_ln_pmf, Beta, BetaMeanSpread,
    GammaMeanShape, POSITIVE_FLOOR,
};
use crate::error::{Error, Result};

const SIGMOID_EDGE: f64 = 1e-6;
const SIGMOID_GAIN: f64 = 10.0;
const SIGMOID_CENTER: f64 = 0.5;

/// Support declared for a data set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Real,
    Positive,
    Integer,
    Unit,
}

impl Domain {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "real" => Ok(Self::Real),
            "positive" => Ok(Self::Positive),
            "integer" => Ok(Self::Integer),
            "unit" => Ok(Self::Unit),
            other => Err(Error::Config(format!(
                "unknown domain `{other}` (expected real, positive, integer or unit)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Real => "real",
            Self::Positive => "positive",
            Self::Integer => "integer",
            Self::Unit => "unit",
        }
    }

    pub fn contains(self, y: f64) -> bool {
        if !y.is_finite() {
            return false;
        }
        match self {
            Self::Real => true,
            Self::Positive => y > 0.0,
            Self::Integer => y >= 0.0 && y.fract() == 0.0,
            Self::Unit => (0.0..=1.0).contains(&y),
        }
    }

    /// The observation family and link used for data in this domain.
    pub fn default_model(self) -> (ObsFamily, Link) {
        match self {
            Self::Real => (ObsFamily::Normal, Link::Identity),
            Self::Positive => (ObsFamily::Gamma, Link::SoftPlus),
            Self::Integer => (ObsFamily::Poisson, Link::SoftPlus),
            Self::Unit => (ObsFamily::Beta, Link::Sigmoid),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Link {
    Identity,
    SoftPlus,
    Exponential,
    Sigmoid,
    InverseExponential,
}

impl Link {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Self::Identity),
            "soft-plus" | "softplus" => Ok(Self::SoftPlus),
            "exponential" | "exp" => Ok(Self::Exponential),
            "sigmoid" => Ok(Self::Sigmoid),
            "inverse-exponential" => Ok(Self::InverseExponential),
            other => Err(Error::Config(format!("unknown link `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::SoftPlus => "soft-plus",
            Self::Exponential => "exponential",
            Self::Sigmoid => "sigmoid",
            Self::InverseExponential => "inverse-exponential",
        }
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Self::Identity => x,
            Self::SoftPlus => soft_plus(x),
            Self::Exponential => x.exp(),
            Self::Sigmoid => {
                SIGMOID_EDGE
                    + (1.0 - 2.0 * SIGMOID_EDGE) / (1.0 + (-SIGMOID_GAIN * (x - SIGMOID_CENTER)).exp())
            }
            Self::InverseExponential => (-x).exp(),
        }
    }

    /// Inverse link, clamping `y` into the open range of the link first.
    pub fn inverse(self, y: f64) -> f64 {
        match self {
            Self::Identity => y,
            Self::SoftPlus => {
                let y = y.max(1e-8);
                // ln(eʸ − 1), stable for large y
                y + (-(-y).exp_m1()).ln()
            }
            Self::Exponential => y.max(POSITIVE_FLOOR).ln(),
            Self::Sigmoid => {
                let u = ((y - SIGMOID_EDGE) / (1.0 - 2.0 * SIGMOID_EDGE)).clamp(1e-9, 1.0 - 1e-9);
                SIGMOID_CENTER + (u / (1.0 - u)).ln() / SIGMOID_GAIN
            }
            Self::InverseExponential => -y.max(POSITIVE_FLOOR).ln(),
        }
    }
}

/// ln(1 + eˣ) without overflow.
#[inline]
pub fn soft_plus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObsFamily {
    Normal,
    Poisson,
    Gamma,
    Beta,
}

impl ObsFamily {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "normal" | "gaussian" => Ok(Self::Normal),
            "poisson" => Ok(Self::Poisson),
            "gamma" => Ok(Self::Gamma),
            "beta" => Ok(Self::Beta),
            other => Err(Error::Config(format!("unknown observation family `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Normal => "normal",
            Self::Poisson => "poisson",
            Self::Gamma => "gamma",
            Self::Beta => "beta",
        }
    }

    pub fn links(self) -> &'static [Link] {
        match self {
            Self::Normal => &[Link::Identity],
            Self::Poisson | Self::Gamma => &[Link::SoftPlus, Link::Exponential],
            Self::Beta => &[Link::Sigmoid],
        }
    }

    pub fn supports(self, link: Link) -> bool {
        self.links().contains(&link)
    }

    /// Smallest domain whose values this family can score.
    pub fn accepts(self, domain: Domain) -> bool {
        matches!(
            (self, domain),
            (Self::Normal, _)
                | (Self::Poisson, Domain::Integer)
                | (Self::Gamma, Domain::Positive | Domain::Integer)
                | (Self::Beta, Domain::Unit)
        )
    }

    pub fn check(self, y: f64) -> Result<()> {
        let ok = y.is_finite()
            && match self {
                Self::Normal => true,
                Self::Poisson => y >= 0.0 && y.fract() == 0.0,
                Self::Gamma => y > 0.0,
                Self::Beta => (0.0..=1.0).contains(&y),
            };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("{y} is outside the support of the {} family", self.name())))
        }
    }

    /// Log-density of one observation given the linked mean and spread.
    ///
    /// Assumes `y` already passed [`ObsFamily::check`].
    #[inline]
    pub fn ln_f(self, y: f64, mean: f64, spread: f64) -> f64 {
        match self {
            Self::Normal => normal_ln_pdf(y, mean, spread),
            Self::Poisson => poisson_ln_pmf(y, mean.max(POSITIVE_FLOOR)),
            Self::Gamma => {
                let m = mean.max(POSITIVE_FLOOR);
                let shape = (m / spread) * (m / spread);
                gamma_ln_pdf(y, shape, spread * spread / m)
            }
            Self::Beta => {
                let (a, b) = beta_shapes(mean, spread);
                beta_ln_pdf(y.clamp(BETA_EDGE, 1.0 - BETA_EDGE), a, b)
            }
        }
    }
}

/// Observations on the unit interval are pulled this far inside it.
pub const BETA_EDGE: f64 = 1e-6;

/// Spread for a mean/spread Beta, shrunk to 0.99 of its admissible maximum
/// when too large. Returns the spread and whether it was clamped.
pub fn admissible_beta_spread(mean: f64, spread: f64) -> (f64, bool) {
    let limit = (mean * (1.0 - mean)).sqrt();
    if spread < limit {
        (spread, false)
    } else {
        (0.99 * limit, true)
    }
}

fn beta_shapes(mean: f64, spread: f64) -> (f64, f64) {
    let m = mean.clamp(BETA_EDGE, 1.0 - BETA_EDGE);
    let (s, _) = admissible_beta_spread(m, spread);
    let a = ((1.0 - m) / (s * s) - 1.0 / m) * m * m;
    let a = a.max(POSITIVE_FLOOR);
    (a, (a * (1.0 / m - 1.0)).max(POSITIVE_FLOOR))
}

/// Typed version of the Beta mean/spread mapping, clamping the spread.
pub fn beta_mean_spread(mean: f64, spread: f64) -> Result<Beta> {
    let (s, _) = admissible_beta_spread(mean, spread);
    Ok(BetaMeanSpread::new(mean, s)?.to_shapes())
}

pub fn gamma_mean_spread(mean: f64, spread: f64) -> Result<GammaMeanShape> {
    GammaMeanShape::new(mean, spread)
}
