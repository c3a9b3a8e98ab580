//! Recovery metrics against ground truth: NRMSE of global means and cosine
//! similarity of proportions, after matching estimated factors to true ones.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GroundTruth, LatentPoint};

/// RMSE over all K×M entries divided by the range of the true means.
pub fn nrmse_mu(mu_hat: &[Vec<f64>], mu_true: &[Vec<f64>]) -> Result<f64> {
    if mu_hat.len() != mu_true.len() || mu_hat.iter().zip(mu_true).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::Shape("estimated and true means differ in shape".into()));
    }
    let flat: Vec<f64> = mu_true.iter().flatten().copied().collect();
    let range = flat.iter().copied().fold(f64::NEG_INFINITY, f64::max) - flat.iter().copied().fold(f64::INFINITY, f64::min);
    if !(range > 0.0) {
        return Err(Error::InvalidParameter("true means have zero range".into()));
    }
    let sq: f64 = mu_hat.iter().flatten().zip(&flat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((sq / flat.len() as f64).sqrt() / range)
}

pub fn cosine(v_hat: &[f64], v_true: &[f64]) -> Result<f64> {
    if v_hat.len() != v_true.len() {
        return Err(Error::Shape("vectors differ in length".into()));
    }
    let na = v_hat.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = v_true.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidParameter("cosine of a zero vector".into()));
    }
    Ok(v_hat.iter().zip(v_true).map(|(a, b)| a * b).sum::<f64>() / (na * nb))
}

fn to_simplex(v: &[f64]) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter().map(|x| x / s).collect()
    } else {
        v.to_vec()
    }
}

/// Cosine similarity of global proportions, both normalized to the simplex.
pub fn cosine_beta(beta_hat: &[f64], beta_true: &[f64]) -> Result<f64> {
    cosine(&to_simplex(beta_hat), &to_simplex(beta_true))
}

/// Mean over observations of the cosine similarity of local proportions.
pub fn cosine_pi(pi_hat: &[Vec<f64>], pi_true: &[Vec<f64>]) -> Result<f64> {
    if pi_hat.len() != pi_true.len() {
        return Err(Error::Shape("estimated and true proportions differ in observation count".into()));
    }
    if pi_hat.is_empty() {
        return Err(Error::Shape("no observations".into()));
    }
    let mut total = 0.0;
    for (a, b) in pi_hat.iter().zip(pi_true) {
        total += cosine(&to_simplex(a), &to_simplex(b))?;
    }
    Ok(total / pi_hat.len() as f64)
}

/// NRMSE of local means over unmasked entries, normalized by the range of
/// the unmasked true values. `None` when every entry is masked.
pub fn nrmse_xbar(xbar_hat: &[Vec<Vec<f64>>], xbar_true: &[Vec<Vec<f64>>], mask: &[Vec<bool>]) -> Result<Option<f64>> {
    if xbar_hat.len() != xbar_true.len() || mask.len() != xbar_true.len() {
        return Err(Error::Shape("local means differ in observation count".into()));
    }
    let (mut sq, mut count) = (0.0, 0usize);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for ((h, t), mk) in xbar_hat.iter().zip(xbar_true).zip(mask) {
        if h.len() != t.len() || mk.len() != t.len() {
            return Err(Error::Shape("local means differ in factor count".into()));
        }
        for ((hk, tk), masked) in h.iter().zip(t).zip(mk) {
            if *masked {
                continue;
            }
            if hk.len() != tk.len() {
                return Err(Error::Shape("local means differ in feature count".into()));
            }
            for (a, b) in hk.iter().zip(tk) {
                sq += (a - b).powi(2);
                count += 1;
                lo = lo.min(*b);
                hi = hi.max(*b);
            }
        }
    }
    if count == 0 || !(hi > lo) {
        return Ok(None);
    }
    Ok(Some((sq / count as f64).sqrt() / (hi - lo)))
}

/// Matching of estimated factors to true factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedFit {
    /// (estimated index, true index) pairs, ordered by true index.
    pub pairs: Vec<(usize, usize)>,
    /// Sum of the matched cosine similarities.
    pub score: f64,
    pub unmatched_estimates: Vec<usize>,
    pub unmatched_truth: Vec<usize>,
}

fn similarity(a: &[f64], b: &[f64]) -> f64 {
    cosine(a, b).unwrap_or(0.0)
}

/// Greedy maximum-cosine matching on global mean vectors; ties go to the
/// lower estimated, then lower true, index.
pub fn align_factors(mu_hat: &[Vec<f64>], mu_true: &[Vec<f64>]) -> AlignedFit {
    let mut cands: Vec<(f64, usize, usize)> = mu_hat
        .iter()
        .enumerate()
        .flat_map(|(i, a)| mu_true.iter().enumerate().map(move |(j, b)| (similarity(a, b), i, j)))
        .collect();
    cands.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut used_hat = vec![false; mu_hat.len()];
    let mut used_true = vec![false; mu_true.len()];
    let mut pairs = Vec::new();
    let mut score = 0.0;
    for (s, i, j) in cands {
        if used_hat[i] || used_true[j] {
            continue;
        }
        used_hat[i] = true;
        used_true[j] = true;
        pairs.push((i, j));
        score += s;
    }
    pairs.sort_by_key(|p| p.1);
    let unmatched = |used: &[bool]| used.iter().enumerate().filter(|(_, u)| !**u).map(|(i, _)| i).collect();
    AlignedFit { pairs, score, unmatched_estimates: unmatched(&used_hat), unmatched_truth: unmatched(&used_true) }
}

/// Point estimates to score: K̂ factors, optionally with local means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    /// K̂ entries, or K̂ + 1 with the remaining mass last.
    pub beta: Vec<f64>,
    pub pi: Vec<Vec<f64>>,
    pub mu: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xbar: Option<Vec<Vec<Vec<f64>>>>,
}

impl From<&LatentPoint> for Estimate {
    fn from(z: &LatentPoint) -> Self {
        Self { beta: z.beta.clone(), pi: z.pi.clone(), mu: z.mu.clone(), xbar: Some(z.xbar.clone()) }
    }
}

impl Estimate {
    pub fn k(&self) -> usize {
        self.mu.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if k == 0 {
            return Err(Error::Shape("estimate has no factors".into()));
        }
        if self.beta.len() != k && self.beta.len() != k + 1 {
            return Err(Error::Shape(format!("beta has {} entries for {k} factors", self.beta.len())));
        }
        let m = self.mu[0].len();
        if self.mu.iter().any(|r| r.len() != m) || self.pi.iter().any(|r| r.len() != k) {
            return Err(Error::Shape("estimate arrays are ragged".into()));
        }
        if let Some(x) = &self.xbar {
            if x.len() != self.pi.len() || x.iter().any(|r| r.len() != k || r.iter().any(|v| v.len() != m)) {
                return Err(Error::Shape("local means do not match the other arrays".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub nrmse_mu: f64,
    pub cosine_beta: f64,
    pub cosine_pi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nrmse_xbar: Option<f64>,
    pub alignment: AlignedFit,
    pub note: String,
}

pub const ALIGNMENT_NOTE: &str =
    "estimated factors were matched to true factors by greedy maximum cosine similarity of their global means before scoring";

/// Scores an estimate against the truth on the matched factors. When some
/// true factors are unmatched, observations with no true mass on the matched
/// ones are left out of `cosine_pi`.
pub fn evaluate(est: &Estimate, truth: &GroundTruth) -> Result<Evaluation> {
    est.validate()?;
    let m_true = truth.mu.first().map_or(0, Vec::len);
    if est.mu[0].len() != m_true {
        return Err(Error::Shape(format!("estimate has {} features, truth {m_true}", est.mu[0].len())));
    }
    if est.pi.len() != truth.pi.len() {
        return Err(Error::Shape(format!(
            "estimate has {} observations, truth {}",
            est.pi.len(),
            truth.pi.len()
        )));
    }
    let alignment = align_factors(&est.mu, &truth.mu);
    let (hat, tru): (Vec<usize>, Vec<usize>) = alignment.pairs.iter().copied().unzip();
    let pick = |v: &[f64], idx: &[usize]| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();

    let mu_hat: Vec<Vec<f64>> = hat.iter().map(|&i| est.mu[i].clone()).collect();
    let mu_true: Vec<Vec<f64>> = tru.iter().map(|&j| truth.mu[j].clone()).collect();
    let beta_hat = to_simplex(&est.beta[..est.k()]);
    let (pi_hat, pi_true): (Vec<Vec<f64>>, Vec<Vec<f64>>) = est
        .pi
        .iter()
        .zip(&truth.pi)
        .map(|(h, t)| (pick(&to_simplex(h), &hat), pick(t, &tru)))
        .filter(|(_, t)| t.iter().any(|v| *v != 0.0))
        .unzip();
    if pi_true.is_empty() {
        return Err(Error::Shape("no observation has true mass on the matched factors".into()));
    }

    let nrmse_xbar = match &est.xbar {
        Some(x) => {
            let xh: Vec<Vec<Vec<f64>>> = x.iter().map(|r| hat.iter().map(|&i| r[i].clone()).collect()).collect();
            let xt: Vec<Vec<Vec<f64>>> =
                truth.xbar.iter().map(|r| tru.iter().map(|&j| r[j].clone()).collect()).collect();
            let mk: Vec<Vec<bool>> = truth.xbar_mask.iter().map(|r| tru.iter().map(|&j| r[j]).collect()).collect();
            nrmse_xbar(&xh, &xt, &mk)?
        }
        None => None,
    };
    Ok(Evaluation {
        nrmse_mu: nrmse_mu(&mu_hat, &mu_true)?,
        cosine_beta: cosine_beta(&pick(&beta_hat, &hat), &pick(&truth.beta, &tru))?,
        cosine_pi: cosine_pi(&pi_hat, &pi_true)?,
        nrmse_xbar,
        alignment,
        note: ALIGNMENT_NOTE.to_string(),
    })
}
