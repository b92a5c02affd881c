//! Lloyd's algorithm over dense feature vectors.

use std::collections::HashSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ClusterError;

/// Work size above which the assignment step runs on the rayon pool.
const PARALLEL_WORK: usize = 1 << 16;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    /// `k` distinct points drawn uniformly without replacement.
    #[default]
    Forgy,
    KMeansPlusPlus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once no centroid moves further than this.
    pub tol: f64,
    pub init: Init,
}

impl KMeansParams {
    pub const DEFAULT_MAX_ITER: usize = 300;
    pub const DEFAULT_TOL: f64 = 1e-4;

    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            max_iter: Self::DEFAULT_MAX_ITER,
            tol: Self::DEFAULT_TOL,
            init: Init::Forgy,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centroids: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub iterations: usize,
    /// Within-cluster SSE after each iteration's centroid update.
    pub sse_history: Vec<f64>,
    pub converged: bool,
}

impl KMeansFit {
    pub fn sse(&self) -> f64 {
        self.sse_history.last().copied().unwrap_or(0.0)
    }
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the first occurrence of every distinct point.
pub fn distinct_indices(points: &[Vec<f64>]) -> Vec<usize> {
    let mut seen = HashSet::with_capacity(points.len());
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            // +0.0 normalises -0.0 so equal coordinates hash equally.
            seen.insert(p.iter().map(|v| (v + 0.0).to_bits()).collect::<Vec<u64>>())
        })
        .map(|(i, _)| i)
        .collect()
}

/// Index of the nearest centroid. Ties go to `current` if it is among the
/// nearest, otherwise to the lowest index.
fn nearest(point: &[f64], centroids: &[Vec<f64>], current: Option<usize>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    if let Some(cur) = current {
        let d = sq_dist(point, &centroids[cur]);
        if d <= best.1 {
            return (cur, d);
        }
    }
    best
}

fn initial_centroids(
    points: &[Vec<f64>],
    distinct: &[usize],
    params: &KMeansParams,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>> {
    match params.init {
        Init::Forgy => rand::seq::index::sample(rng, distinct.len(), params.k)
            .into_iter()
            .map(|i| points[distinct[i]].clone())
            .collect(),
        Init::KMeansPlusPlus => {
            let mut centroids = vec![points[distinct[rng.random_range(0..distinct.len())]].clone()];
            let mut d2: Vec<f64> = distinct
                .iter()
                .map(|&i| sq_dist(&points[i], &centroids[0]))
                .collect();
            while centroids.len() < params.k {
                // Distinct points guarantee a positive total while k <= distinct.
                let pick = WeightedIndex::new(&d2)
                    .map(|w| w.sample(rng))
                    .unwrap_or_else(|_| d2.iter().position(|&d| d > 0.0).unwrap_or(0));
                let c = points[distinct[pick]].clone();
                for (d, &i) in d2.iter_mut().zip(distinct) {
                    *d = d.min(sq_dist(&points[i], &c));
                }
                centroids.push(c);
            }
            centroids
        }
    }
}

/// Clusters `points` into `params.k` groups.
///
/// Returned labels and centroids are consistent: every centroid is the mean
/// of the points labelled with it. When the loop stops because no centroid
/// moved (`tol = 0`), every label is also the point's nearest centroid.
pub fn kmeans(points: &[Vec<f64>], params: &KMeansParams) -> Result<KMeansFit, ClusterError> {
    if points.is_empty() {
        return Err(ClusterError::EmptyInput);
    }
    if params.k == 0 || params.max_iter == 0 || !(params.tol >= 0.0) {
        return Err(ClusterError::InvalidParams(format!(
            "k = {}, max_iter = {}, tol = {}",
            params.k, params.max_iter, params.tol
        )));
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(ClusterError::Dimension {
            expected: dim,
            found: p.len(),
        });
    }
    let distinct = distinct_indices(points);
    if params.k > distinct.len() {
        return Err(ClusterError::InfeasibleK {
            scope: String::new(),
            k: params.k,
            distinct: distinct.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut centroids = initial_centroids(points, &distinct, params, &mut rng);
    let k = params.k;
    let parallel = points.len() * k * dim.max(1) >= PARALLEL_WORK;
    let mut labels: Vec<Option<usize>> = vec![None; points.len()];
    let mut sse_history = Vec::new();
    let mut converged = false;

    for _ in 0..params.max_iter {
        let step = |(p, cur): (&Vec<f64>, &Option<usize>)| nearest(p, &centroids, *cur);
        let assigned: Vec<(usize, f64)> = if parallel {
            points.par_iter().zip(labels.par_iter()).map(step).collect()
        } else {
            points.iter().zip(labels.iter()).map(step).collect()
        };
        let mut next: Vec<usize> = assigned.iter().map(|a| a.0).collect();
        let mut counts = vec![0usize; k];
        for &l in &next {
            counts[l] += 1;
        }

        // Empty clusters take the point farthest from its own centroid.
        let mut dist: Vec<f64> = assigned.iter().map(|a| a.1).collect();
        for j in 0..k {
            if counts[j] > 0 {
                continue;
            }
            let far = (0..points.len())
                .filter(|&i| counts[next[i]] > 1)
                .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                .expect("k <= distinct points leaves a donor cluster");
            counts[next[far]] -= 1;
            next[far] = j;
            counts[j] = 1;
            dist[far] = 0.0;
        }

        let mut sums = vec![vec![0.0; dim]; k];
        for (p, &l) in points.iter().zip(&next) {
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        let updated: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(&counts)
            .map(|(s, &c)| s.into_iter().map(|v| v / c as f64).collect())
            .collect();
        let shift = centroids
            .iter()
            .zip(&updated)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);

        centroids = updated;
        sse_history.push(
            points
                .iter()
                .zip(&next)
                .map(|(p, &l)| sq_dist(p, &centroids[l]))
                .sum(),
        );
        labels = next.into_iter().map(Some).collect();
        if shift <= params.tol {
            converged = true;
            break;
        }
    }

    Ok(KMeansFit {
        centroids,
        labels: labels.into_iter().map(|l| l.expect("assigned")).collect(),
        iterations: sse_history.len(),
        sse_history,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![4.0, 6.0]];
        let fit = kmeans(&pts, &KMeansParams::new(1, 3)).unwrap();
        assert_eq!(fit.labels, vec![0, 0, 0]);
        assert_eq!(fit.centroids, vec![vec![2.0, 2.0]]);
    }

    #[test]
    fn separates_two_blobs() {
        let mut pts = Vec::new();
        for i in 0..10 {
            let e = i as f64 * 0.01;
            pts.push(vec![e, -e]);
            pts.push(vec![100.0 + e, 50.0 - e]);
        }
        for seed in 0..20 {
            let fit = kmeans(&pts, &KMeansParams::new(2, seed)).unwrap();
            let a = fit.labels[0];
            for (i, &l) in fit.labels.iter().enumerate() {
                assert_eq!(l == a, i % 2 == 0, "seed {seed}");
            }
            let mean_a = fit.centroids[a][0];
            assert!((mean_a - 0.045).abs() < 1e-12);
        }
    }

    #[test]
    fn infeasible_k() {
        let pts = vec![vec![1.0], vec![1.0], vec![2.0]];
        let err = kmeans(&pts, &KMeansParams::new(3, 0)).unwrap_err();
        assert!(matches!(err, ClusterError::InfeasibleK { k: 3, distinct: 2, .. }));
        assert!(kmeans(&pts, &KMeansParams::new(2, 0)).is_ok());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            kmeans(&[], &KMeansParams::new(1, 0)),
            Err(ClusterError::EmptyInput)
        ));
        assert!(matches!(
            kmeans(&[vec![1.0], vec![1.0, 2.0]], &KMeansParams::new(1, 0)),
            Err(ClusterError::Dimension { .. })
        ));
        assert!(kmeans(&[vec![1.0]], &KMeansParams::new(0, 0)).is_err());
    }

    #[test]
    fn plus_plus_init_is_deterministic() {
        let pts: Vec<Vec<f64>> = (0..50).map(|i| vec![(i * 7 % 13) as f64, (i % 5) as f64]).collect();
        let params = KMeansParams {
            init: Init::KMeansPlusPlus,
            ..KMeansParams::new(4, 9)
        };
        let a = kmeans(&pts, &params).unwrap();
        assert_eq!(a, kmeans(&pts, &params).unwrap());
        assert_eq!(a.centroids.len(), 4);
    }

    #[test]
    fn duplicates_never_leave_empty_clusters() {
        let mut pts = vec![vec![0.0]; 30];
        pts.push(vec![1.0]);
        pts.push(vec![2.0]);
        for seed in 0..10 {
            let fit = kmeans(&pts, &KMeansParams::new(3, seed)).unwrap();
            for c in 0..3 {
                assert!(fit.labels.contains(&c));
            }
        }
    }
}
