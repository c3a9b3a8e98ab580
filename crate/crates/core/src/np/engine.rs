//! The nonparametric loop: parametric batches alternating with merge and
//! split phases, each move kept only if it raises the ELBO.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::moves::{merge_candidate, merge_shortlist, split_candidate};
use crate::error::Result;
use crate::model::{Dataset, Hyperparameters, VariationalState};
use crate::rng::{substream, Stream};
use crate::vi::fit::{iteration, FitMode, FitOptions, FitReport, FitSession, FitWarning};
use crate::vi::GradientEstimatorState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NonparametricOptions {
    /// Iteration cap for each parametric batch.
    pub batch_max_iters: u64,
    /// Cap on batch + move rounds.
    pub max_rounds: u64,
    pub splits: bool,
    pub merges: bool,
}

impl Default for NonparametricOptions {
    fn default() -> Self {
        Self { batch_max_iters: 100, max_rounds: 20, splits: true, merges: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MoveKind {
    Split,
    Merge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoveRecord {
    pub kind: MoveKind,
    /// Factor indices in the state the move was proposed on.
    pub factors: Vec<usize>,
    pub elbo_before: f64,
    pub elbo_after: f64,
    pub accepted: bool,
    /// Iteration count of the fit when the move was evaluated.
    pub iteration: u64,
    #[serde(default)]
    pub noise_fallback: bool,
}

/// One pass of every block update on a candidate, with no convergence logic.
pub fn trial_iteration(
    hp: &Hyperparameters,
    data: &Dataset,
    candidate: &mut VariationalState,
    est: &mut GradientEstimatorState,
    opts: &FitOptions,
) -> Result<Vec<FitWarning>> {
    iteration(hp, data, candidate, est, &opts.schedules_for(hp), opts.global_update, opts.seed)
}

/// Resumable state of a nonparametric fit, checkpointed between rounds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NonparametricRun {
    pub session: FitSession,
    pub moves: Vec<MoveRecord>,
    /// Completed batch + move rounds.
    pub round: u64,
    pub finished: bool,
    pub converged: bool,
}

impl NonparametricRun {
    pub fn new(hp: &Hyperparameters, data: &Dataset, k0: usize, opts: &FitOptions) -> Result<Self> {
        let session = FitSession::new(hp.clone(), data, k0, true, opts.clone())?;
        Ok(Self { session, moves: Vec::new(), round: 0, finished: false, converged: false })
    }

    /// Changes the iteration cap; a run stopped by a cap may continue.
    pub fn set_max_iters(&mut self, max_iters: u64) {
        self.session.set_max_iters(max_iters);
        if !self.converged {
            self.finished = false;
        }
    }

    /// Runs rounds until the outer stop, calling `checkpoint` after each one.
    pub fn run_with<F: FnMut(&Self) -> Result<()>>(
        &mut self,
        data: &Dataset,
        np: &NonparametricOptions,
        mut checkpoint: F,
    ) -> Result<()> {
        while !self.finished {
            if self.round >= np.max_rounds {
                self.finished = true;
                break;
            }
            let mut engine = Engine { data, session: &mut self.session, moves: &mut self.moves };
            let batch_converged = engine.batch(np.batch_max_iters)?;
            let mut moved = false;
            if np.merges && engine.session.state.k() >= 2 {
                moved |= engine.merge_phase()?;
            }
            if np.splits {
                moved |= engine.split_phase(self.round)?;
            }
            self.round += 1;
            if !moved && batch_converged {
                self.converged = true;
                self.finished = true;
            }
            if self.session.iterations >= self.session.options.max_iters || self.round >= np.max_rounds {
                self.finished = true;
            }
            checkpoint(self)?;
        }
        Ok(())
    }

    pub fn report(&self) -> FitReport {
        let mut report = self.session.report(FitMode::Nonparametric, self.moves.clone());
        report.converged = self.converged;
        report
    }
}

struct Engine<'a> {
    data: &'a Dataset,
    session: &'a mut FitSession,
    moves: &'a mut Vec<MoveRecord>,
}

impl Engine<'_> {
    /// Runs iterations until one small ELBO change, the batch cap or the
    /// overall cap. Returns whether the batch ended on a small change.
    fn batch(&mut self, cap: u64) -> Result<bool> {
        let s = &mut *self.session;
        s.monitor.reset();
        for _ in 0..cap {
            if s.iterations >= s.options.max_iters {
                break;
            }
            s.step(self.data)?;
            if s.monitor.hits >= 1 {
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// Runs a trial iteration on the candidate and keeps it if its ELBO beats
    /// the current one.
    fn consider(
        &mut self,
        kind: MoveKind,
        factors: Vec<usize>,
        mut candidate: VariationalState,
        mut est: GradientEstimatorState,
        noise_fallback: bool,
    ) -> Result<bool> {
        let s = &mut *self.session;
        let before = *s.elbo_trace.last().expect("trace starts with the initial ELBO");
        let mut record = MoveRecord {
            kind,
            factors,
            elbo_before: before,
            elbo_after: f64::NEG_INFINITY,
            accepted: false,
            iteration: s.iterations,
            noise_fallback,
        };
        let trial = trial_iteration(&s.hp, self.data, &mut candidate, &mut est, &s.options)
            .and_then(|w| s.elbo_of(self.data, &candidate).map(|e| (w, e)));
        match trial {
            Ok((warnings, e)) => {
                record.elbo_after = e.value;
                if e.value > before {
                    record.accepted = true;
                    s.state = candidate;
                    s.estimator = est;
                    s.warnings.extend(warnings);
                    s.iterations += 1;
                    s.elbo_trace.push(e.value);
                    s.elbo_std_errs.push(e.std_err);
                    s.monitor.last = Some(e.value);
                    s.monitor.reset();
                }
            }
            Err(err) => s.warnings.push(FitWarning {
                iteration: s.iterations,
                message: format!("{kind:?} candidate on {:?} failed: {err}", record.factors),
            }),
        }
        debug_assert_eq!(record.accepted, record.elbo_after > record.elbo_before);
        let accepted = record.accepted;
        log::info!(
            "{kind:?} on {:?}: ELBO {:.3} -> {:.3}, {}",
            record.factors,
            record.elbo_before,
            record.elbo_after,
            if accepted { "accepted" } else { "rejected" }
        );
        self.moves.push(record);
        Ok(accepted)
    }

    fn merge_phase(&mut self) -> Result<bool> {
        let shortlist = merge_shortlist(&self.session.state);
        // Track original labels so later pairs survive index shifts.
        let mut labels: Vec<Option<usize>> = (0..self.session.state.k()).map(Some).collect();
        let mut touched = vec![false; labels.len()];
        let mut any = false;
        for (a, b, _) in shortlist {
            if touched[a] || touched[b] {
                continue;
            }
            let pos = |label: usize| labels.iter().position(|l| *l == Some(label));
            let (Some(ia), Some(ib)) = (pos(a), pos(b)) else { continue };
            let candidate = merge_candidate(&self.session.state, ia, ib)?;
            let mut est = self.session.estimator.clone();
            est.merge(ia.min(ib), ia.max(ib));
            if self.consider(MoveKind::Merge, vec![ia, ib], candidate, est, false)? {
                any = true;
                touched[a] = true;
                touched[b] = true;
                labels.remove(ia.max(ib));
            }
        }
        Ok(any)
    }

    fn split_phase(&mut self, round: u64) -> Result<bool> {
        let seed = self.session.options.seed;
        let mut order: Vec<usize> = (0..self.session.state.k()).collect();
        order.shuffle(&mut substream(seed, Stream::Order, round, 0));
        let mut any = false;
        for k in order {
            let t = self.session.estimator.t;
            let mut rng = substream(seed, Stream::Split, t, k as u64);
            let c = split_candidate(&self.session.state, k, t, &mut rng)?;
            let mut est = self.session.estimator.clone();
            est.split(k);
            any |= self.consider(MoveKind::Split, vec![k], c.state, est, c.noise_fallback)?;
        }
        Ok(any)
    }
}

/// Fits with a factor count that adapts through split and merge moves,
/// starting from K0 factors.
pub fn fit_nonparametric(
    hp: &Hyperparameters,
    data: &Dataset,
    k0: usize,
    opts: &FitOptions,
    np: &NonparametricOptions,
) -> Result<(VariationalState, FitReport)> {
    let mut run = NonparametricRun::new(hp, data, k0, opts)?;
    run.run_with(data, np, |_| Ok(()))?;
    let report = run.report();
    Ok((run.session.state, report))
}
