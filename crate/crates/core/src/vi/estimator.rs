//! Score-function gradient estimation with leave-one-out control variates,
//! and RMSProp step normalization.

use serde::{Deserialize, Serialize};

pub const RMS_DECAY: f64 = 0.9;
pub const RMS_EPS: f64 = 1e-8;
pub const DEFAULT_SAMPLES: usize = 64;

/// Running second-moment accumulator for one parameter block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmsProp {
    pub acc: Vec<f64>,
    /// False until the first gradient seeds the accumulator.
    pub primed: bool,
}

impl RmsProp {
    pub fn new(dim: usize) -> Self {
        Self { acc: vec![0.0; dim], primed: false }
    }

    /// ρ·g/√(acc + ε) after folding g into the accumulator. The first
    /// gradient seeds the accumulator directly, so early steps are not inflated
    /// by the zero start.
    pub fn step(&mut self, grad: &[f64], rate: f64) -> Vec<f64> {
        debug_assert_eq!(grad.len(), self.acc.len());
        for (a, g) in self.acc.iter_mut().zip(grad) {
            *a = if self.primed { RMS_DECAY * *a + (1.0 - RMS_DECAY) * g * g } else { g * g };
        }
        self.primed = true;
        grad.iter()
            .zip(&self.acc)
            .map(|(g, a)| rate * g / (a + RMS_EPS).sqrt())
            .collect()
    }

    /// Inserts a copy of entry `from` at position `at`.
    pub(crate) fn duplicate(&mut self, from: usize, at: usize) {
        let v = self.acc[from];
        self.acc.insert(at, v);
    }

    /// Replaces entry `keep` with the mean of `keep` and `drop`, then removes `drop`.
    pub(crate) fn merge(&mut self, keep: usize, drop: usize) {
        self.acc[keep] = 0.5 * (self.acc[keep] + self.acc[drop]);
        self.acc.remove(drop);
    }
}

/// Gradient estimates from one batch of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    /// Plain mean of score × objective.
    pub raw: Vec<f64>,
    /// With the control variate subtracted.
    pub adjusted: Vec<f64>,
}

/// Estimates ∇λ E_q[f] from `scores` (S rows of `dim` entries, row-major)
/// and per-sample objectives f.
///
/// The control variate for component d is a·score_d with
/// a = Cov(score_d·f, score_d)/Var(score_d); for sample s, a is computed from
/// the other S − 1 samples so it stays independent of the term it corrects.
pub fn score_gradient(scores: &[f64], objective: &[f64], dim: usize) -> GradientEstimate {
    let s = objective.len();
    debug_assert_eq!(scores.len(), s * dim);
    let mut raw = vec![0.0; dim];
    let mut adjusted = vec![0.0; dim];
    if s == 0 {
        return GradientEstimate { raw, adjusted };
    }
    let sf = s as f64;
    for d in 0..dim {
        let (mut sh, mut sg, mut shh, mut sgh) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..s {
            let h = scores[i * dim + d];
            let g = h * objective[i];
            sh += h;
            sg += g;
            shh += h * h;
            sgh += g * h;
        }
        raw[d] = sg / sf;
        if s < 2 {
            adjusted[d] = raw[d];
            continue;
        }
        let rest = (s - 1) as f64;
        let mut total = 0.0;
        for i in 0..s {
            let h = scores[i * dim + d];
            let g = h * objective[i];
            let mh = (sh - h) / rest;
            let mg = (sg - g) / rest;
            let cov = (sgh - g * h) / rest - mg * mh;
            let var = (shh - h * h) / rest - mh * mh;
            let a = if var > 1e-300 && cov.is_finite() { cov / var } else { 0.0 };
            total += g - a * h;
        }
        adjusted[d] = total / sf;
    }
    GradientEstimate { raw, adjusted }
}


/// Accumulators for one observation's blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalAccumulators {
    pub pi: RmsProp,
    pub xbar_mean: Vec<RmsProp>,
    pub xbar_scale: Vec<RmsProp>,
    pub count: RmsProp,
}

impl LocalAccumulators {
    pub fn new(k: usize, m: usize) -> Self {
        Self {
            pi: RmsProp::new(k),
            xbar_mean: vec![RmsProp::new(m); k],
            xbar_scale: vec![RmsProp::new(m); k],
            count: RmsProp::new(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientEstimatorState {
    /// Samples drawn per block update.
    pub samples: usize,
    pub control_variates: bool,
    /// Iteration counter driving the learning-rate schedules.
    pub t: u64,
    pub beta: RmsProp,
    pub locals: Vec<LocalAccumulators>,
}

impl GradientEstimatorState {
    pub fn new(k: usize, n: usize, m: usize, samples: usize, control_variates: bool) -> Self {
        Self {
            samples,
            control_variates,
            t: 0,
            beta: RmsProp::new(k + 1),
            locals: vec![LocalAccumulators::new(k, m); n],
        }
    }

    /// Mirrors a split of factor `k`: the new factor is appended after the
    /// existing K and starts from a copy of k's accumulators.
    pub fn split(&mut self, k: usize) {
        let kk = self.beta.acc.len() - 1;
        self.beta.duplicate(k, kk);
        for l in &mut self.locals {
            l.pi.duplicate(k, kk);
            let (m, s) = (l.xbar_mean[k].clone(), l.xbar_scale[k].clone());
            l.xbar_mean.push(m);
            l.xbar_scale.push(s);
        }
    }

    /// Mirrors a merge of `drop` into `keep`; requires `keep < drop`.
    pub fn merge(&mut self, keep: usize, drop: usize) {
        assert!(keep < drop, "merge keeps the lower index");
        self.beta.merge(keep, drop);
        for l in &mut self.locals {
            l.pi.merge(keep, drop);
            for v in [&mut l.xbar_mean, &mut l.xbar_scale] {
                let d = v.remove(drop);
                for (a, b) in v[keep].acc.iter_mut().zip(&d.acc) {
                    *a = 0.5 * (*a + b);
                }
            }
        }
    }
}
