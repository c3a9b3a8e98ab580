//! The parametric fitting loop: block updates, analytic global updates and
//! ELBO-based convergence.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bbvi::{update_beta, update_local, GlobalView, StepSettings};
use super::estimator::{GradientEstimatorState, DEFAULT_SAMPLES};
use super::init::initialize;
use super::schedule::Schedules;
use super::update::{update_mu_sigma, GlobalUpdate};
use crate::error::{Error, Result};
use crate::model::{elbo, Dataset, ElboEstimate, Hyperparameters, LatentPoint, VariationalState};
use crate::np::MoveRecord;
use crate::rng::{derive_seed, substream, Stream};

pub const DEFAULT_DELTA: f64 = 1e-4;
pub const DEFAULT_REQUIRED_HITS: u32 = 3;
pub const DEFAULT_ELBO_SAMPLES: usize = 100;
pub const DEFAULT_MAX_ITERS: u64 = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    /// Samples per block gradient.
    pub samples: usize,
    /// Samples per ELBO estimate.
    pub elbo_samples: usize,
    pub max_iters: u64,
    pub min_iters: u64,
    pub delta: f64,
    pub required_hits: u32,
    pub control_variates: bool,
    pub schedules: Option<Schedules>,
    pub global_update: GlobalUpdate,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            samples: DEFAULT_SAMPLES,
            elbo_samples: DEFAULT_ELBO_SAMPLES,
            max_iters: DEFAULT_MAX_ITERS,
            min_iters: 0,
            delta: DEFAULT_DELTA,
            required_hits: DEFAULT_REQUIRED_HITS,
            control_variates: true,
            schedules: None,
            global_update: GlobalUpdate::Exact,
            seed: 0,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.samples < 2 {
            return Err(Error::Config("samples must be at least 2".into()));
        }
        if self.elbo_samples < 2 {
            return Err(Error::Config("elbo_samples must be at least 2".into()));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Config("delta must be positive".into()));
        }
        if self.required_hits == 0 {
            return Err(Error::Config("required_hits must be at least 1".into()));
        }
        if self.min_iters > self.max_iters {
            return Err(Error::Config("min_iters exceeds max_iters".into()));
        }
        if let Some(s) = &self.schedules {
            s.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn schedules_for(&self, hp: &Hyperparameters) -> Schedules {
        self.schedules.unwrap_or_else(|| Schedules::standard(hp.family))
    }

    /// Seed of the fixed stream every ELBO estimate in this fit uses.
    pub fn elbo_seed(&self) -> u64 {
        derive_seed(self.seed, &[Stream::Elbo as u64])
    }
}

/// Counts consecutive small relative ELBO changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceMonitor {
    pub delta: f64,
    pub required_hits: u32,
    pub min_iters: u64,
    pub max_iters: u64,
    pub hits: u32,
    pub last: Option<f64>,
}

impl ConvergenceMonitor {
    pub fn new(opts: &FitOptions) -> Self {
        Self {
            delta: opts.delta,
            required_hits: opts.required_hits,
            min_iters: opts.min_iters,
            max_iters: opts.max_iters,
            hits: 0,
            last: None,
        }
    }

    /// Records a new ELBO value; returns whether the change was small.
    pub fn observe(&mut self, value: f64) -> bool {
        let small = match self.last {
            Some(prev) => ((value - prev) / prev.abs()).abs() < self.delta,
            None => false,
        };
        self.hits = if small { self.hits + 1 } else { 0 };
        self.last = Some(value);
        small
    }

    pub fn reset(&mut self) {
        self.hits = 0;
    }

    pub fn converged(&self, iterations: u64) -> bool {
        iterations >= self.min_iters && self.hits >= self.required_hits
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitWarning {
    pub iteration: u64,
    pub message: String,
}

/// One full pass of the block updates: every observation's local
/// blocks, then μ and Σ, then β. Advances the estimator's iteration counter.
pub fn iteration(
    hp: &Hyperparameters,
    data: &Dataset,
    state: &mut VariationalState,
    est: &mut GradientEstimatorState,
    schedules: &Schedules,
    rule: GlobalUpdate,
    seed: u64,
) -> Result<Vec<FitWarning>> {
    let t = est.t;
    let cfg = StepSettings { schedules, t, samples: est.samples, control_variates: est.control_variates };
    let view = GlobalView::new(hp, state)?;
    let mut messages: Vec<String> = state
        .locals
        .par_iter_mut()
        .zip(est.locals.par_iter_mut())
        .zip(data.y.par_iter())
        .enumerate()
        .flat_map_iter(|(n, ((local, acc), y))| {
            let mut rng = substream(seed, Stream::Local, t, n as u64);
            update_local(hp, &view, &cfg, y, local, acc, &mut rng)
                .into_iter()
                .map(move |m| format!("observation {n}: {m}"))
        })
        .collect();
    update_mu_sigma(hp, state, rule)?;
    let mut rng = substream(seed, Stream::Global, t, 0);
    messages.extend(update_beta(hp, &cfg, state, est, &mut rng));
    est.t += 1;
    state.check_invariants()?;
    for m in &messages {
        log::warn!("iteration {t}: {m}");
    }
    Ok(messages.into_iter().map(|message| FitWarning { iteration: t, message }).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMode {
    Parametric,
    Nonparametric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedManifest {
    pub seed: u64,
    pub elbo_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub mode: FitMode,
    pub k: usize,
    pub converged: bool,
    pub iterations: u64,
    pub elbo_trace: Vec<f64>,
    pub elbo_std_errs: Vec<f64>,
    pub warnings: Vec<FitWarning>,
    #[serde(default)]
    pub moves: Vec<MoveRecord>,
    pub expectations: LatentPoint,
    pub state: VariationalState,
    pub seeds: SeedManifest,
    pub hyperparameters: Hyperparameters,
    pub options: FitOptions,
}

/// Everything needed to continue a fit; serializes to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSession {
    pub hp: Hyperparameters,
    pub options: FitOptions,
    pub state: VariationalState,
    pub estimator: GradientEstimatorState,
    pub monitor: ConvergenceMonitor,
    pub elbo_trace: Vec<f64>,
    pub elbo_std_errs: Vec<f64>,
    pub warnings: Vec<FitWarning>,
    pub iterations: u64,
}

impl FitSession {
    /// Initializes a K-factor state and records the starting ELBO.
    pub fn new(hp: Hyperparameters, data: &Dataset, k: usize, nonparametric: bool, options: FitOptions) -> Result<Self> {
        let state = initialize(&hp, data, k, nonparametric, options.seed)?;
        Self::from_state(hp, data, state, options)
    }

    pub fn from_state(hp: Hyperparameters, data: &Dataset, state: VariationalState, options: FitOptions) -> Result<Self> {
        options.validate()?;
        hp.validate()?;
        data.validate()?;
        for (n, row) in data.y.iter().enumerate() {
            for (&y, name) in row.iter().zip(&data.feature_names) {
                hp.family
                    .check(y)
                    .map_err(|e| Error::Domain(format!("row {}, feature `{name}`: {e}", n + 1)))?;
            }
        }
        state.check_invariants()?;
        let estimator =
            GradientEstimatorState::new(state.k(), state.n(), state.m(), options.samples, options.control_variates);
        let mut s = Self {
            monitor: ConvergenceMonitor::new(&options),
            hp,
            options,
            state,
            estimator,
            elbo_trace: Vec::new(),
            elbo_std_errs: Vec::new(),
            warnings: Vec::new(),
            iterations: 0,
        };
        let e = s.elbo(data)?;
        s.record(e);
        Ok(s)
    }

    /// Changes the iteration cap, e.g. to continue a fit that hit it.
    pub fn set_max_iters(&mut self, max_iters: u64) {
        self.options.max_iters = max_iters;
        self.monitor.max_iters = max_iters;
    }

    pub fn elbo(&self, data: &Dataset) -> Result<ElboEstimate> {
        self.elbo_of(data, &self.state)
    }

    pub fn elbo_of(&self, data: &Dataset, state: &VariationalState) -> Result<ElboEstimate> {
        elbo(&self.hp, data, state, self.options.elbo_samples, self.options.elbo_seed())
    }

    fn record(&mut self, e: ElboEstimate) {
        self.monitor.observe(e.value);
        self.elbo_trace.push(e.value);
        self.elbo_std_errs.push(e.std_err);
    }

    pub fn converged(&self) -> bool {
        self.monitor.converged(self.iterations)
    }

    pub fn finished(&self) -> bool {
        self.converged() || self.iterations >= self.options.max_iters
    }

    /// Runs one iteration and records its ELBO.
    pub fn step(&mut self, data: &Dataset) -> Result<ElboEstimate> {
        let sched = self.options.schedules_for(&self.hp);
        let w = iteration(
            &self.hp,
            data,
            &mut self.state,
            &mut self.estimator,
            &sched,
            self.options.global_update,
            self.options.seed,
        )?;
        self.warnings.extend(w);
        self.iterations += 1;
        let e = self.elbo(data)?;
        self.record(e);
        Ok(e)
    }

    /// Iterates until convergence or the iteration cap, calling `checkpoint`
    /// after each iteration.
    pub fn run_with<F: FnMut(&Self) -> Result<()>>(&mut self, data: &Dataset, mut checkpoint: F) -> Result<()> {
        while !self.finished() {
            self.step(data)?;
            checkpoint(self)?;
        }
        Ok(())
    }

    pub fn run(&mut self, data: &Dataset) -> Result<()> {
        self.run_with(data, |_| Ok(()))
    }

    pub fn report(&self, mode: FitMode, moves: Vec<MoveRecord>) -> FitReport {
        FitReport {
            mode,
            k: self.state.k(),
            converged: self.converged(),
            iterations: self.iterations,
            elbo_trace: self.elbo_trace.clone(),
            elbo_std_errs: self.elbo_std_errs.clone(),
            warnings: self.warnings.clone(),
            moves,
            expectations: self.state.expectations(),
            state: self.state.clone(),
            seeds: SeedManifest { seed: self.options.seed, elbo_seed: self.options.elbo_seed() },
            hyperparameters: self.hp.clone(),
            options: self.options.clone(),
        }
    }
}

/// Fits a K-factor parametric model to convergence.
pub fn fit_parametric(hp: &Hyperparameters, data: &Dataset, k: usize, opts: &FitOptions) -> Result<(VariationalState, FitReport)> {
    let mut session = FitSession::new(hp.clone(), data, k, false, opts.clone())?;
    session.run(data)?;
    let report = session.report(FitMode::Parametric, Vec::new());
    Ok((session.state, report))
}

#[cfg(test)]
mod tests;
