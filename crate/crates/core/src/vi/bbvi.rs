//! Black-box block updates for β, π_n, x̄_{n,k} and P_n.
//!
//! Each block draws S samples from its own factor of q, scores them against
//! the partial log-joint with every other latent held at its current
//! variational expectation, and takes one RMSProp-scaled step.

use rand::Rng;
use rand_distr::StandardNormal;

use super::estimator::{score_gradient, GradientEstimate, GradientEstimatorState, LocalAccumulators};
use super::schedule::Schedules;
use crate::dist::{
    dirichlet_sample, ln_gamma, normal_ln_pdf, normal_score, poisson_ln_pmf, Dirichlet, Poisson,
    POSITIVE_FLOOR,
};
use crate::error::{Error, Result};
use crate::model::joint::ln_lik_predictor;
use crate::model::state::normalize;
use crate::model::{linear_predictor, Block, Dataset, FactorCache, Hyperparameters, LocalParams, VariationalState};

/// Global quantities held fixed during the local phase.
#[derive(Debug, Clone)]
pub struct GlobalView {
    pub mu: Vec<Vec<f64>>,
    pub caches: Vec<FactorCache>,
    /// Dirichlet(α·E[β]₁..K), the plug-in prior on each π_n.
    pub pi_prior: Dirichlet,
}

impl GlobalView {
    pub fn new(hp: &Hyperparameters, state: &VariationalState) -> Result<Self> {
        let k = state.k();
        let eb = state.expected_beta();
        let conc = eb[..k].iter().map(|b| (hp.alpha * b).max(f64::MIN_POSITIVE)).collect();
        let caches = (0..k)
            .map(|kk| {
                FactorCache::new(&state.expected_sigma(kk))
                    .map_err(|e| Error::Numerical(format!("factor {kk}: {e}")))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            mu: state.factors.iter().map(|f| f.mu.clone()).collect(),
            caches,
            pi_prior: Dirichlet::new(conc)?,
        })
    }

    fn k(&self) -> usize {
        self.mu.len()
    }

    /// log p^x̄ at a local-mean draw `x` for factor k.
    pub fn xbar_log_p(&self, hp: &Hyperparameters, y_n: &[f64], local: &LocalParams, k: usize, x: &[f64]) -> f64 {
        let pi = normalize(&local.pi);
        let mut pred = linear_predictor(&pi, &local.xbar_mean);
        for (a, (old, new)) in pred.iter_mut().zip(local.xbar_mean[k].iter().zip(x)) {
            *a += pi[k] * (new - old);
        }
        self.caches[k].ln_local_prior(x, &self.mu[k], local.p * pi[k]) + ln_lik_predictor(hp, y_n, &pred)
    }

    fn mahalanobis(&self, local: &LocalParams) -> Vec<f64> {
        (0..self.k())
            .map(|k| self.caches[k].maha(&local.xbar_mean[k], &self.mu[k]))
            .collect()
    }

    fn local_priors(&self, maha: &[f64], m: usize, p: f64, pi: &[f64]) -> f64 {
        (0..self.k()).map(|k| self.caches[k].ln_scaled(m, maha[k], p * pi[k])).sum()
    }

    /// log p^π at a proportion draw.
    pub fn pi_log_p(&self, hp: &Hyperparameters, y_n: &[f64], local: &LocalParams, pi: &[f64]) -> f64 {
        let maha = self.mahalanobis(local);
        self.local_priors(&maha, y_n.len(), local.p, pi)
            + ln_lik_predictor(hp, y_n, &linear_predictor(pi, &local.xbar_mean))
            + self.pi_prior.ln_pdf_unchecked(pi)
    }

    /// log p^P at a count draw.
    pub fn count_log_p(&self, hp: &Hyperparameters, local: &LocalParams, count: f64) -> f64 {
        let maha = self.mahalanobis(local);
        let m = local.xbar_mean.first().map_or(0, Vec::len);
        self.local_priors(&maha, m, count, &normalize(&local.pi)) + poisson_ln_pmf(count, hp.rho)
    }
}

/// log p^β at a global-proportion draw, with every π_n at its expectation.
pub fn beta_log_p(hp: &Hyperparameters, state: &VariationalState, beta: &[f64]) -> Result<f64> {
    let k = state.k();
    let a0 = hp.alpha0.expand(beta.len())?;
    let mut total = Dirichlet::new(a0)?.ln_pdf_unchecked(beta);
    let n = state.n() as f64;
    if state.n() > 0 {
        let mut log_pi_sums = vec![0.0; k];
        for i in 0..state.n() {
            for (acc, p) in log_pi_sums.iter_mut().zip(state.expected_pi(i)) {
                *acc += p.ln();
            }
        }
        let conc: Vec<f64> = beta[..k].iter().map(|b| (hp.alpha * b).max(f64::MIN_POSITIVE)).collect();
        let sum: f64 = conc.iter().sum();
        total += n * (ln_gamma(sum) - conc.iter().map(|c| ln_gamma(*c)).sum::<f64>());
        total += conc.iter().zip(&log_pi_sums).map(|(c, l)| (c - 1.0) * l).sum::<f64>();
    }
    Ok(total)
}

/// Per-sample scores (row-major, S × dim) and objectives log p − log q.
struct Draws {
    scores: Vec<f64>,
    objective: Vec<f64>,
    dim: usize,
}

impl Draws {
    fn gradient(&self) -> GradientEstimate {
        score_gradient(&self.scores, &self.objective, self.dim)
    }
}

fn xbar_draws<R: Rng + ?Sized>(
    hp: &Hyperparameters,
    view: &GlobalView,
    y_n: &[f64],
    local: &LocalParams,
    k: usize,
    samples: usize,
    rng: &mut R,
) -> Draws {
    let m = y_n.len();
    let (mean, scale) = (&local.xbar_mean[k], &local.xbar_scale[k]);
    let pi = normalize(&local.pi);
    let mut base = linear_predictor(&pi, &local.xbar_mean);
    for (a, v) in base.iter_mut().zip(mean) {
        *a -= pi[k] * v;
    }
    let w = local.p * pi[k];
    let mut scores = Vec::with_capacity(samples * 2 * m);
    let mut objective = Vec::with_capacity(samples);
    let mut x = vec![0.0; m];
    let mut pred = vec![0.0; m];
    let mut scale_scores = vec![0.0; m];
    for _ in 0..samples {
        let mut log_q = 0.0;
        for j in 0..m {
            let z: f64 = rng.sample(StandardNormal);
            x[j] = mean[j] + scale[j] * z;
            log_q += normal_ln_pdf(x[j], mean[j], scale[j]);
            let [dm, ds] = normal_score(x[j], mean[j], scale[j]);
            scores.push(dm);
            scale_scores[j] = ds;
            pred[j] = base[j] + pi[k] * x[j];
        }
        scores.extend_from_slice(&scale_scores);
        let log_p = view.caches[k].ln_local_prior(&x, &view.mu[k], w) + ln_lik_predictor(hp, y_n, &pred);
        objective.push(log_p - log_q);
    }
    Draws { scores, objective, dim: 2 * m }
}

fn pi_draws<R: Rng + ?Sized>(
    hp: &Hyperparameters,
    view: &GlobalView,
    y_n: &[f64],
    local: &LocalParams,
    samples: usize,
    rng: &mut R,
) -> Result<Draws> {
    let q = Dirichlet::new(local.pi.clone())?;
    let maha = view.mahalanobis(local);
    let m = y_n.len();
    let k = local.pi.len();
    let mut scores = Vec::with_capacity(samples * k);
    let mut objective = Vec::with_capacity(samples);
    for _ in 0..samples {
        let pi = q.sample(rng);
        let log_p = view.local_priors(&maha, m, local.p, &pi)
            + ln_lik_predictor(hp, y_n, &linear_predictor(&pi, &local.xbar_mean))
            + view.pi_prior.ln_pdf_unchecked(&pi);
        objective.push(log_p - q.ln_pdf_unchecked(&pi));
        scores.extend(q.score(&pi));
    }
    Ok(Draws { scores, objective, dim: k })
}

fn count_draws<R: Rng + ?Sized>(
    hp: &Hyperparameters,
    view: &GlobalView,
    local: &LocalParams,
    samples: usize,
    rng: &mut R,
) -> Result<Draws> {
    let q = Poisson::new(local.p)?;
    let maha = view.mahalanobis(local);
    let m = local.xbar_mean.first().map_or(0, Vec::len);
    let pi = normalize(&local.pi);
    let mut scores = Vec::with_capacity(samples);
    let mut objective = Vec::with_capacity(samples);
    for _ in 0..samples {
        let c = q.sample(rng);
        let cf = c as f64;
        let log_p = view.local_priors(&maha, m, cf, &pi) + poisson_ln_pmf(cf, hp.rho);
        objective.push(log_p - q.ln_pmf(c));
        scores.push(q.score(c));
    }
    Ok(Draws { scores, objective, dim: 1 })
}

fn beta_draws<R: Rng + ?Sized>(
    hp: &Hyperparameters,
    state: &VariationalState,
    samples: usize,
    rng: &mut R,
) -> Result<Draws> {
    let q = Dirichlet::new(state.beta.clone())?;
    let dim = state.beta.len();
    let mut scores = Vec::with_capacity(samples * dim);
    let mut objective = Vec::with_capacity(samples);
    for _ in 0..samples {
        let b = dirichlet_sample(&state.beta, rng);
        objective.push(beta_log_p(hp, state, &b)? - q.ln_pdf_unchecked(&b));
        scores.extend(q.score(&b));
    }
    Ok(Draws { scores, objective, dim })
}

/// Raw and control-variate gradient estimates for one block, without
/// touching the state.
pub fn block_gradient<R: Rng + ?Sized>(
    which: Block,
    hp: &Hyperparameters,
    data: &Dataset,
    state: &VariationalState,
    samples: usize,
    rng: &mut R,
) -> Result<GradientEstimate> {
    let draws = match which {
        Block::Beta => beta_draws(hp, state, samples, rng)?,
        Block::Xbar { n, k } => {
            let view = GlobalView::new(hp, state)?;
            xbar_draws(hp, &view, &data.y[n], &state.locals[n], k, samples, rng)
        }
        Block::Pi { n } => pi_draws(hp, &GlobalView::new(hp, state)?, &data.y[n], &state.locals[n], samples, rng)?,
        Block::Count { n } => count_draws(hp, &GlobalView::new(hp, state)?, &state.locals[n], samples, rng)?,
    };
    Ok(draws.gradient())
}

/// Settings shared by every block update of one iteration.
#[derive(Debug, Clone, Copy)]
pub struct StepSettings<'a> {
    pub schedules: &'a Schedules,
    pub t: u64,
    pub samples: usize,
    pub control_variates: bool,
}

impl StepSettings<'_> {
    fn pick(&self, g: GradientEstimate) -> Vec<f64> {
        if self.control_variates {
            g.adjusted
        } else {
            g.raw
        }
    }
}

fn finite_or(g: Vec<f64>, what: &str) -> std::result::Result<Vec<f64>, String> {
    if g.iter().all(|v| v.is_finite()) {
        Ok(g)
    } else {
        Err(format!("non-finite gradient for {what}; update skipped"))
    }
}

#[allow(clippy::too_many_arguments)]
fn step_xbar<R: Rng + ?Sized>(
    hp: &Hyperparameters,
    view: &GlobalView,
    cfg: &StepSettings,
    y_n: &[f64],
    local: &mut LocalParams,
    acc: &mut LocalAccumulators,
    k: usize,
    rng: &mut R,
) -> Option<String> {
    let m = y_n.len();
    let draws = xbar_draws(hp, view, y_n, local, k, cfg.samples, rng);
    let g = match finite_or(cfg.pick(draws.gradient()), &format!("local mean of factor {k}")) {
        Ok(g) => g,
        Err(e) => return Some(e),
    };
    let dm = acc.xbar_mean[k].step(&g[..m], cfg.schedules.xbar_mean.at(cfg.t));
    let ds = acc.xbar_scale[k].step(&g[m..], cfg.schedules.xbar_scale.at(cfg.t));
    for j in 0..m {
        local.xbar_mean[k][j] += dm[j];
        local.xbar_scale[k][j] = (local.xbar_scale[k][j] + ds[j]).max(POSITIVE_FLOOR);
    }
    None
}

fn step_pi<R: Rng + ?Sized>(
    hp: &Hyperparameters,
    view: &GlobalView,
    cfg: &StepSettings,
    y_n: &[f64],
    local: &mut LocalParams,
    acc: &mut LocalAccumulators,
    rng: &mut R,
) -> Option<String> {
    let g = match pi_draws(hp, view, y_n, local, cfg.samples, rng) {
        Ok(draws) => match finite_or(cfg.pick(draws.gradient()), "local proportions") {
            Ok(g) => g,
            Err(e) => return Some(e),
        },
        Err(e) => return Some(format!("local proportions: {e}")),
    };
    let d = acc.pi.step(&g, cfg.schedules.pi.at(cfg.t));
    for (v, s) in local.pi.iter_mut().zip(d) {
        *v = (*v + s).max(POSITIVE_FLOOR);
    }
    None
}

fn step_count<R: Rng + ?Sized>(
    hp: &Hyperparameters,
    view: &GlobalView,
    cfg: &StepSettings,
    local: &mut LocalParams,
    acc: &mut LocalAccumulators,
    rng: &mut R,
) -> Option<String> {
    let g = match count_draws(hp, view, local, cfg.samples, rng) {
        Ok(draws) => match finite_or(cfg.pick(draws.gradient()), "particle count") {
            Ok(g) => g,
            Err(e) => return Some(e),
        },
        Err(e) => return Some(format!("particle count: {e}")),
    };
    let d = acc.count.step(&g, cfg.schedules.count.at(cfg.t));
    local.p = (local.p + d[0]).max(POSITIVE_FLOOR);
    None
}

/// Updates x̄_{n,k} for every k, then π_n, then P_n. Returns a message for
/// each block that had to be skipped.
pub fn update_local<R: Rng + ?Sized>(
    hp: &Hyperparameters,
    view: &GlobalView,
    cfg: &StepSettings,
    y_n: &[f64],
    local: &mut LocalParams,
    acc: &mut LocalAccumulators,
    rng: &mut R,
) -> Vec<String> {
    let mut skipped = Vec::new();
    for k in 0..local.pi.len() {
        skipped.extend(step_xbar(hp, view, cfg, y_n, local, acc, k, rng));
    }
    skipped.extend(step_pi(hp, view, cfg, y_n, local, acc, rng));
    skipped.extend(step_count(hp, view, cfg, local, acc, rng));
    skipped
}

pub fn update_beta<R: Rng + ?Sized>(
    hp: &Hyperparameters,
    cfg: &StepSettings,
    state: &mut VariationalState,
    est: &mut GradientEstimatorState,
    rng: &mut R,
) -> Option<String> {
    let draws = match beta_draws(hp, state, cfg.samples, rng) {
        Ok(d) => d,
        Err(e) => return Some(format!("global proportions: {e}")),
    };
    match finite_or(cfg.pick(draws.gradient()), "global proportions") {
        Ok(g) => {
            let d = est.beta.step(&g, cfg.schedules.beta.at(cfg.t));
            for (v, s) in state.beta.iter_mut().zip(d) {
                *v = (*v + s).max(POSITIVE_FLOOR);
            }
            None
        }
        Err(e) => Some(e),
    }
}

/// One stochastic update of a single block at the estimator's current
/// iteration. Returns the skip message, if any.
pub fn bbvi_step<R: Rng + ?Sized>(
    which: Block,
    hp: &Hyperparameters,
    data: &Dataset,
    state: &mut VariationalState,
    est: &mut GradientEstimatorState,
    schedules: &Schedules,
    rng: &mut R,
) -> Result<Option<String>> {
    if est.samples < 2 {
        return Err(Error::InvalidParameter("at least two samples are needed per block".into()));
    }
    let cfg = StepSettings { schedules, t: est.t, samples: est.samples, control_variates: est.control_variates };
    if which == Block::Beta {
        return Ok(update_beta(hp, &cfg, state, est, rng));
    }
    let view = GlobalView::new(hp, state)?;
    Ok(match which {
        Block::Xbar { n, k } => {
            step_xbar(hp, &view, &cfg, &data.y[n], &mut state.locals[n], &mut est.locals[n], k, rng)
        }
        Block::Pi { n } => step_pi(hp, &view, &cfg, &data.y[n], &mut state.locals[n], &mut est.locals[n], rng),
        Block::Count { n } => step_count(hp, &view, &cfg, &mut state.locals[n], &mut est.locals[n], rng),
        Block::Beta => unreachable!(),
    })
}
