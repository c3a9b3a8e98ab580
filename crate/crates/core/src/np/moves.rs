//! Split and merge candidates and the merge shortlist.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::VariationalState;
use crate::vi::cluster::kmeans;

const SPLIT_KMEANS_ITERS: usize = 100;
/// Scale of the noise that separates the two halves when 2-means cannot.
pub const SPLIT_NOISE: f64 = 1e-3;

/// Share of factor k's proportions kept by its first half at iteration t.
pub fn split_share(t: u64) -> f64 {
    (t as f64 + 4.0).powf(-0.5)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitCandidate {
    pub state: VariationalState,
    /// True when the local means of the factor coincided and noise was used.
    pub noise_fallback: bool,
}

/// Splits factor k in two. The first half stays at index k and the second is
/// appended as factor K.
pub fn split_candidate<R: Rng + ?Sized>(state: &VariationalState, k: usize, t: u64, rng: &mut R) -> Result<SplitCandidate> {
    let kk = state.k();
    if k >= kk {
        return Err(Error::Shape(format!("factor {k} out of range for K = {kk}")));
    }
    let share = split_share(t);
    let mut s = state.clone();

    let b = s.beta[k];
    s.beta[k] = share * b;
    s.beta.insert(kk, (1.0 - share) * b);
    for l in &mut s.locals {
        let p = l.pi[k];
        l.pi[k] = share * p;
        l.pi.push((1.0 - share) * p);
        l.xbar_mean.push(l.xbar_mean[k].clone());
        l.xbar_scale.push(l.xbar_scale[k].clone());
    }

    let points: Vec<Vec<f64>> = state.locals.iter().map(|l| l.xbar_mean[k].clone()).collect();
    let distinct = points.iter().any(|p| p != &points[0]);
    let mut second = s.factors[k].clone();
    let noise_fallback = !distinct;
    if distinct {
        let (centers, _) = kmeans(&points, 2, SPLIT_KMEANS_ITERS, rng);
        s.factors[k].mu = centers[0].clone();
        second.mu = centers[1].clone();
    } else {
        let noise = Normal::new(0.0, SPLIT_NOISE).expect("positive scale");
        for v in s.factors[k].mu.iter_mut().chain(second.mu.iter_mut()) {
            *v += noise.sample(rng);
        }
    }
    s.factors.push(second);
    Ok(SplitCandidate { state: s, noise_fallback })
}

/// Merges factors a and b into the lower index; the higher one is removed.
pub fn merge_candidate(state: &VariationalState, a: usize, b: usize) -> Result<VariationalState> {
    let kk = state.k();
    if a == b || a >= kk || b >= kk {
        return Err(Error::Shape(format!("cannot merge factors {a} and {b} of {kk}")));
    }
    let (keep, drop) = (a.min(b), a.max(b));
    let mut s = state.clone();

    let (bk, bd) = (state.beta[keep], state.beta[drop]);
    let wk = bk / (bk + bd);
    let wd = 1.0 - wk;
    s.beta[keep] = bk + bd;
    s.beta.remove(drop);
    {
        let (fk, fd) = (&state.factors[keep], &state.factors[drop]);
        let f = &mut s.factors[keep];
        f.mu = fk.mu.iter().zip(&fd.mu).map(|(x, y)| wk * x + wd * y).collect();
        f.nu = wk * fk.nu + wd * fd.nu;
        f.psi = &fk.psi * wk + &fd.psi * wd;
    }
    s.factors.remove(drop);

    for l in &mut s.locals {
        let (pk, pd) = (l.pi[keep], l.pi[drop]);
        let (uk, ud) = (pk / (pk + pd), pd / (pk + pd));
        l.pi[keep] = pk + pd;
        l.pi.remove(drop);
        let mean_d = l.xbar_mean.remove(drop);
        let scale_d = l.xbar_scale.remove(drop);
        for (x, y) in l.xbar_mean[keep].iter_mut().zip(&mean_d) {
            *x = uk * *x + ud * y;
        }
        for (x, y) in l.xbar_scale[keep].iter_mut().zip(&scale_d) {
            *x = uk * *x + ud * y;
        }
    }
    Ok(s)
}

/// Factor pairs whose expected local proportions covary positively across
/// observations, most strongly covarying first.
pub fn merge_shortlist(state: &VariationalState) -> Vec<(usize, usize, f64)> {
    let (n, k) = (state.n(), state.k());
    if n == 0 || k < 2 {
        return Vec::new();
    }
    let pi: Vec<Vec<f64>> = (0..n).map(|i| state.expected_pi(i)).collect();
    let means: Vec<f64> = (0..k).map(|j| pi.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut pairs = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            let cov = pi.iter().map(|r| (r[a] - means[a]) * (r[b] - means[b])).sum::<f64>() / n as f64;
            if cov > 0.0 {
                pairs.push((a, b, cov));
            }
        }
    }
    pairs.sort_by(|x, y| y.2.total_cmp(&x.2));
    pairs
}
