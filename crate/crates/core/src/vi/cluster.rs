//! k-means++ seeding, hard k-means and fuzzy c-means on row vectors.

use rand::Rng;

pub const FUZZIFIER: f64 = 2.0;
pub const FCM_TOL: f64 = 1e-5;
pub const FCM_MAX_ITERS: usize = 300;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding; falls back to a uniform pick when every point already
/// coincides with a chosen center.
pub fn kmeans_pp<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    assert!(!points.is_empty() && k >= 1);
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[idx].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centers.push(c);
    }
    centers
}

fn weighted_centers(points: &[Vec<f64>], weights: &[Vec<f64>], old: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = points[0].len();
    (0..old.len())
        .map(|k| {
            let mut c = vec![0.0; m];
            let mut total = 0.0;
            for (p, w) in points.iter().zip(weights) {
                total += w[k];
                for (a, v) in c.iter_mut().zip(p) {
                    *a += w[k] * v;
                }
            }
            if total > 0.0 {
                c.iter_mut().for_each(|a| *a /= total);
                c
            } else {
                old[k].clone()
            }
        })
        .collect()
}

/// Lloyd iterations from k-means++ seeds. Returns centers and labels.
pub fn kmeans<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, max_iters: usize, rng: &mut R) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut centers = kmeans_pp(points, k, rng);
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..max_iters {
        let mut changed = false;
        for (l, p) in labels.iter_mut().zip(points) {
            let best = (0..k)
                .min_by(|&a, &b| sq_dist(p, &centers[a]).total_cmp(&sq_dist(p, &centers[b])))
                .unwrap();
            changed |= *l != best;
            *l = best;
        }
        if !changed {
            break;
        }
        let onehot: Vec<Vec<f64>> = labels
            .iter()
            .map(|&l| (0..k).map(|j| f64::from(u8::from(j == l))).collect())
            .collect();
        centers = weighted_centers(points, &onehot, &centers);
    }
    (centers, labels)
}

/// Fuzzy memberships u_ik ∝ d_ik^(−2/(m−1)); a point sitting on one or more
/// centers splits its membership evenly among them.
fn memberships(points: &[Vec<f64>], centers: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let power = 1.0 / (FUZZIFIER - 1.0);
    points
        .iter()
        .map(|p| {
            let d: Vec<f64> = centers.iter().map(|c| sq_dist(p, c)).collect();
            let hits = d.iter().filter(|v| **v == 0.0).count();
            if hits > 0 {
                return d.iter().map(|v| if *v == 0.0 { 1.0 / hits as f64 } else { 0.0 }).collect();
            }
            let inv: Vec<f64> = d.iter().map(|v| v.powf(-power)).collect();
            let s: f64 = inv.iter().sum();
            inv.iter().map(|v| v / s).collect()
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct FuzzyClustering {
    pub centers: Vec<Vec<f64>>,
    /// N × K memberships, rows summing to one.
    pub memberships: Vec<Vec<f64>>,
    pub iterations: usize,
}

/// Fuzzy c-means with fuzzifier 2, stopping once no membership moves by
/// more than the tolerance.
pub fn fuzzy_cmeans<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, rng: &mut R) -> FuzzyClustering {
    let mut centers = kmeans_pp(points, k, rng);
    let mut u = memberships(points, &centers);
    let mut iterations = 0;
    while iterations < FCM_MAX_ITERS {
        iterations += 1;
        let w: Vec<Vec<f64>> = u.iter().map(|r| r.iter().map(|v| v.powf(FUZZIFIER)).collect()).collect();
        centers = weighted_centers(points, &w, &centers);
        let next = memberships(points, &centers);
        let shift = next
            .iter()
            .flatten()
            .zip(u.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        u = next;
        if shift < FCM_TOL {
            break;
        }
    }
    FuzzyClustering { centers, memberships: u, iterations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::from_seed;
    use rand_distr::{Distribution, Normal};

    fn blobs(means: &[[f64; 2]], per: usize, sd: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = from_seed(seed);
        let noise = Normal::new(0.0, sd).unwrap();
        means
            .iter()
            .flat_map(|m| (0..per).map(|_| m.iter().map(|c| c + noise.sample(&mut rng)).collect::<Vec<_>>()).collect::<Vec<_>>())
            .collect()
    }

    /// Nearest-true-mean assignment followed by averaging: the k-means optimum
    /// for well-separated blobs.
    fn oracle_centers(points: &[Vec<f64>], means: &[[f64; 2]]) -> Vec<Vec<f64>> {
        let mut sums = vec![vec![0.0; 2]; means.len()];
        let mut counts = vec![0.0; means.len()];
        for p in points {
            let j = (0..means.len()).min_by(|&a, &b| sq_dist(p, &means[a]).total_cmp(&sq_dist(p, &means[b]))).unwrap();
            counts[j] += 1.0;
            sums[j].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        sums.into_iter().zip(counts).map(|(s, c)| s.into_iter().map(|v| v / c).collect()).collect()
    }

    fn matched(found: &[Vec<f64>], want: &[Vec<f64>], tol: f64) -> bool {
        want.iter().all(|w| found.iter().any(|f| f.iter().zip(w).all(|(a, b)| (a - b).abs() < tol)))
    }

    #[test]
    fn fuzzy_centers_match_kmeans_oracle() {
        let means = [[0.0, 0.0], [6.0, 0.0], [0.0, 6.0]];
        let pts = blobs(&means, 60, 0.3, 1);
        let fc = fuzzy_cmeans(&pts, 3, &mut from_seed(2));
        assert!(matched(&fc.centers, &oracle_centers(&pts, &means), 0.1), "{:?}", fc.centers);
        for row in &fc.memberships {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let (km, labels) = kmeans(&pts, 3, 100, &mut from_seed(3));
        assert!(matched(&km, &oracle_centers(&pts, &means), 1e-9));
        assert_eq!(labels[0], labels[59]);
        assert_ne!(labels[0], labels[60]);
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = blobs(&[[1.0, -2.0]], 30, 1.0, 4);
        let fc = fuzzy_cmeans(&pts, 1, &mut from_seed(0));
        let mean: Vec<f64> = (0..2).map(|j| pts.iter().map(|p| p[j]).sum::<f64>() / 30.0).collect();
        assert!(fc.centers[0].iter().zip(&mean).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(fc.memberships.iter().all(|r| r == &vec![1.0]));
    }

    #[test]
    fn coincident_points_split_evenly() {
        let pts = vec![vec![1.0, 1.0]; 4];
        let fc = fuzzy_cmeans(&pts, 2, &mut from_seed(0));
        assert!(fc.memberships.iter().flatten().all(|v| (v - 0.5).abs() < 1e-12));
    }
}
