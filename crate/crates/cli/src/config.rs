//! Flat TOML configs with `--set key=value` overrides.

use std::path::Path;

use nalgebra::DMatrix;
use ndm::model::{Concentration, Domain, Hyperparameters, Link, ObsFamily};
use ndm::np::NonparametricOptions;
use ndm::vi::{FitOptions, GlobalUpdate, LearningRateSchedule, Schedules};
use ndm::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Reads `path` (or an empty document), applies the overrides and
/// deserializes. The file alone is parsed first so that its errors carry
/// line numbers.
pub fn load<T: DeserializeOwned>(path: Option<&Path>, sets: &[String]) -> Result<T> {
    let (text, origin) = match path {
        Some(p) => (
            std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            p.display().to_string(),
        ),
        None => (String::new(), "defaults".to_string()),
    };
    if sets.is_empty() {
        return ndm::io::parse_toml(&text, &origin);
    }
    ndm::io::parse_toml::<T>(&text, &origin)?;
    let mut table: toml::Table = ndm::io::parse_toml(&text, &origin)?;
    for set in sets {
        let (key, value) = set
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set `{set}`: expected key=value")))?;
        let key = key.trim();
        let parsed: toml::Table = toml::from_str(&format!("v = {}", value.trim()))
            .or_else(|_| toml::from_str(&format!("v = {:?}", value.trim())))
            .map_err(|e| Error::Config(format!("--set {key}: {e}")))?;
        table.insert(key.to_string(), parsed["v"].clone());
    }
    T::deserialize(toml::Value::Table(table)).map_err(|e| Error::Config(format!("{origin} with overrides: {e}")))
}

/// One value for every feature or one per feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerFeature {
    All(f64),
    Each(Vec<f64>),
}

impl PerFeature {
    fn expand(&self, m: usize, key: &str) -> Result<Vec<f64>> {
        match self {
            Self::All(v) => Ok(vec![*v; m]),
            Self::Each(v) if v.len() == m => Ok(v.clone()),
            Self::Each(v) => Err(Error::Config(format!("{key} has {} entries for {m} features", v.len()))),
        }
    }
}

fn default_k() -> usize {
    10
}

fn default_checkpoint_every() -> u64 {
    50
}

/// Every key a fit config may set. Unset model keys follow the data
/// domain and the library defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// Factor count, or the starting count for nonparametric fits.
    #[serde(default = "default_k")]
    pub k: usize,
    pub family: Option<ObsFamily>,
    pub link: Option<Link>,
    pub alpha0: Option<Concentration>,
    pub alpha: Option<f64>,
    pub mu0: Option<f64>,
    pub sigma0: Option<f64>,
    pub nu0: Option<f64>,
    /// Diagonal of the inverse-Wishart scale, one value or one per feature.
    pub psi0: Option<PerFeature>,
    pub rho: Option<f64>,
    pub eta: Option<PerFeature>,

    pub samples: Option<usize>,
    pub elbo_samples: Option<usize>,
    pub max_iters: Option<u64>,
    pub min_iters: Option<u64>,
    pub delta: Option<f64>,
    pub required_hits: Option<u32>,
    pub control_variates: Option<bool>,
    pub global_update: Option<GlobalUpdate>,
    pub seed: Option<u64>,
    /// Learning-rate overrides as `[delay, rate]`; unset blocks keep the
    /// standard table.
    pub beta_schedule: Option<[f64; 2]>,
    pub pi_schedule: Option<[f64; 2]>,
    pub xbar_mean_schedule: Option<[f64; 2]>,
    pub xbar_scale_schedule: Option<[f64; 2]>,
    pub count_schedule: Option<[f64; 2]>,

    pub batch_max_iters: Option<u64>,
    pub max_rounds: Option<u64>,
    pub splits: Option<bool>,
    pub merges: Option<bool>,

    /// Iterations between checkpoints (rounds for nonparametric fits).
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: u64,
}

impl FitConfig {
    pub fn hyperparameters(&self, m: usize, domain: Domain) -> Result<Hyperparameters> {
        let (family, link) = match self.family {
            Some(f) => (f, f.links()[0]),
            None => domain.default_model(),
        };
        let mut hp = Hyperparameters::defaults(m, family, self.link.unwrap_or(link));
        if let Some(a) = &self.alpha0 {
            hp.alpha0 = a.clone();
        }
        hp.alpha = self.alpha.unwrap_or(hp.alpha);
        hp.mu0 = self.mu0.unwrap_or(hp.mu0);
        hp.sigma0 = self.sigma0.unwrap_or(hp.sigma0);
        hp.nu0 = self.nu0.unwrap_or(hp.nu0);
        if let Some(p) = &self.psi0 {
            hp.psi0 = DMatrix::from_diagonal(&p.expand(m, "psi0")?.into());
        }
        hp.rho = self.rho.unwrap_or(hp.rho);
        if let Some(e) = &self.eta {
            hp.eta = e.expand(m, "eta")?;
        }
        hp.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(hp)
    }

    fn schedules(&self, family: ObsFamily) -> Option<Schedules> {
        let blocks = [
            self.beta_schedule,
            self.pi_schedule,
            self.xbar_mean_schedule,
            self.xbar_scale_schedule,
            self.count_schedule,
        ];
        if blocks.iter().all(Option::is_none) {
            return None;
        }
        let mut s = Schedules::standard(family);
        let targets = [&mut s.beta, &mut s.pi, &mut s.xbar_mean, &mut s.xbar_scale, &mut s.count];
        for (target, given) in targets.into_iter().zip(blocks) {
            if let Some([delay, rate]) = given {
                *target = LearningRateSchedule { delay, rate };
            }
        }
        Some(s)
    }

    pub fn fit_options(&self, seed: u64, family: ObsFamily) -> Result<FitOptions> {
        let d = FitOptions::default();
        let opts = FitOptions {
            samples: self.samples.unwrap_or(d.samples),
            elbo_samples: self.elbo_samples.unwrap_or(d.elbo_samples),
            max_iters: self.max_iters.unwrap_or(d.max_iters),
            min_iters: self.min_iters.unwrap_or(d.min_iters),
            delta: self.delta.unwrap_or(d.delta),
            required_hits: self.required_hits.unwrap_or(d.required_hits),
            control_variates: self.control_variates.unwrap_or(d.control_variates),
            schedules: self.schedules(family),
            global_update: self.global_update.unwrap_or(d.global_update),
            seed,
        };
        opts.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(opts)
    }

    pub fn nonparametric(&self, no_splits: bool, no_merges: bool) -> NonparametricOptions {
        let d = NonparametricOptions::default();
        NonparametricOptions {
            batch_max_iters: self.batch_max_iters.unwrap_or(d.batch_max_iters),
            max_rounds: self.max_rounds.unwrap_or(d.max_rounds),
            splits: self.splits.unwrap_or(d.splits) && !no_splits,
            merges: self.merges.unwrap_or(d.merges) && !no_merges,
        }
    }
}
