use rand::Rng as _;

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm on the columns of `features` (`D × N`).
///
/// The first centre is a seeded random point; each further centre is the
/// point farthest from its nearest chosen centre. An empty cluster is
/// re-seeded with the point farthest from its current centre.
pub fn kmeans_clusters(features: &DenseMatrix, k: usize, max_iters: usize, seed: u64) -> Result<Vec<usize>> {
    let n = features.cols();
    if k == 0 || k > n {
        return Err(Error::usage(format!("kmeans needs 1 <= k <= N, got k={k}, N={n}")));
    }
    if !features.is_finite() {
        return Err(Error::usage("kmeans features must be finite"));
    }
    let mut rng = crate::rng::rng_from(seed);
    let mut centres: Vec<Vec<f64>> = vec![features.col(rng.random_range(0..n)).to_vec()];
    let mut nearest: Vec<f64> = (0..n).map(|j| sq_dist(features.col(j), &centres[0])).collect();
    while centres.len() < k {
        let far = argmax(&nearest);
        let c = features.col(far).to_vec();
        for (j, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(features.col(j), &c));
        }
        centres.push(c);
    }

    let mut labels = vec![usize::MAX; n];
    for _ in 0..max_iters.max(1) {
        let mut changed = false;
        let mut dist = vec![0.0; n];
        for j in 0..n {
            let x = features.col(j);
            let (best, d) = centres
                .iter()
                .enumerate()
                .map(|(c, ctr)| (c, sq_dist(x, ctr)))
                .fold((0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
            dist[j] = d;
            if labels[j] != best {
                labels[j] = best;
                changed = true;
            }
        }
        let mut counts = vec![0usize; k];
        for &l in &labels {
            counts[l] += 1;
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = argmax(&dist);
                log::debug!("kmeans cluster {c} empty; reseeding from point {far}");
                counts[labels[far]] -= 1;
                labels[far] = c;
                counts[c] = 1;
                dist[far] = 0.0;
                changed = true;
            }
        }
        let d = features.rows();
        let mut sums = vec![vec![0.0; d]; k];
        for j in 0..n {
            for (s, x) in sums[labels[j]].iter_mut().zip(features.col(j)) {
                *s += x;
            }
        }
        for c in 0..k {
            centres[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
        }
        if !changed {
            break;
        }
    }
    Ok(labels)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clouds(seed: u64) -> (DenseMatrix, Vec<usize>) {
        let mut rng = crate::rng::rng_from(seed);
        let mut truth = Vec::new();
        let m = DenseMatrix::from_fn(3, 40, |_, j| {
            let cloud = j % 2;
            if truth.len() <= j {
                truth.push(cloud);
            }
            cloud as f64 * 100.0 + rng.random_range(-1.0..1.0)
        });
        (m, truth)
    }

    #[test]
    fn single_cluster() {
        let (m, _) = clouds(1);
        assert!(kmeans_clusters(&m, 1, 10, 0).unwrap().iter().all(|&l| l == 0));
    }

    #[test]
    fn separated_clouds_split_perfectly() {
        let (m, truth) = clouds(2);
        let labels = kmeans_clusters(&m, 2, 50, 3).unwrap();
        for j in 0..labels.len() {
            for i in 0..labels.len() {
                assert_eq!(labels[i] == labels[j], truth[i] == truth[j]);
            }
        }
    }

    #[test]
    fn deterministic_and_validated() {
        let (m, _) = clouds(3);
        assert_eq!(kmeans_clusters(&m, 4, 20, 9).unwrap(), kmeans_clusters(&m, 4, 20, 9).unwrap());
        assert!(matches!(kmeans_clusters(&m, 41, 5, 0), Err(Error::Usage(_))));
    }

    #[test]
    fn duplicate_points_leave_no_cluster_empty() {
        let m = DenseMatrix::from_fn(2, 10, |_, j| if j < 9 { 0.0 } else { 1.0 });
        let labels = kmeans_clusters(&m, 3, 10, 1).unwrap();
        for c in 0..3 {
            assert!(labels.contains(&c));
        }
    }
}
