//! Choosing the number of strata with X-means and cutting the sorted
//! project sequence into contiguous windows.
//!
//! X-means only decides `q`. The windows themselves are contiguous
//! chronological slices of near-equal size, newest last.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Feature, ProjectRecord, ProjectSet};
use crate::error::{Error, Result};

const MAX_LLOYD_ITERATIONS: usize = 100;
const VARIANCE_FLOOR: f64 = 1e-12;

/// A contiguous chronological stratum. `index` runs 1..=q, q newest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub index: usize,
    pub records: Vec<ProjectRecord>,
}

impl Window {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.id.as_str()).collect()
    }

    pub fn feature_matrix(&self, features: &[Feature]) -> Vec<Vec<f64>> {
        self.records
            .iter()
            .map(|r| features.iter().map(|&f| r.get(f)).collect())
            .collect()
    }

    pub fn effort_vector(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.effort).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringResult {
    pub q: usize,
    pub centroids: Vec<Vec<f64>>,
    /// Cluster index (0-based) per input point.
    pub assignments: Vec<usize>,
    pub bic: f64,
    /// (k, BIC) for every model the search produced, in order.
    pub trace: Vec<(usize, f64)>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

/// Lloyd iterations from the given centroids until assignments stop
/// changing. Empty clusters keep their previous centroid.
pub fn kmeans_from(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> (Vec<Vec<f64>>, Vec<usize>) {
    let dim = points.first().map_or(0, Vec::len);
    let mut assign: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    for _ in 0..MAX_LLOYD_ITERATIONS {
        let k = centroids.len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    (centroids, assign)
}

/// Farthest-point seeding: a seeded random first centre, then repeatedly the
/// point farthest from all chosen centres (lowest index on ties).
pub fn farthest_point_init(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut chosen = vec![rng.random_range(0..points.len())];
    let mut min_d: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let mut best = 0;
        for i in 1..points.len() {
            if min_d[i] > min_d[best] {
                best = i;
            }
        }
        chosen.push(best);
        for (d, p) in min_d.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &points[best]));
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

/// BIC of a hard-assignment spherical Gaussian mixture with one shared
/// variance; free parameters `k (d + 1) + 1`. Larger is better.
pub fn bic(points: &[Vec<f64>], centroids: &[Vec<f64>], assignments: &[usize]) -> f64 {
    let n = points.len();
    let k = centroids.len();
    let d = points.first().map_or(0, Vec::len) as f64;
    if n <= k || d == 0.0 {
        return f64::NEG_INFINITY;
    }
    let sse: f64 = points.iter().zip(assignments).map(|(p, &a)| sq_dist(p, &centroids[a])).sum();
    let variance = (sse / (d * (n - k) as f64)).max(VARIANCE_FLOOR);
    let nf = n as f64;
    let mut counts = vec![0usize; k];
    for &a in assignments {
        counts[a] += 1;
    }
    let mixing: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| c as f64 * (c as f64 / nf).ln())
        .sum();
    let log_lik = mixing - nf * d / 2.0 * (2.0 * std::f64::consts::PI * variance).ln() - sse / (2.0 * variance);
    let params = (k as f64) * (d + 1.0) + 1.0;
    log_lik - params / 2.0 * nf.ln()
}

/// Tries to split one cluster in two; returns the child centroids when the
/// local BIC improves.
fn try_split(points: &[Vec<f64>], centroid: &[f64]) -> Option<(Vec<Vec<f64>>, f64)> {
    if points.len() < 4 {
        return None;
    }
    let far = |from: &[f64]| {
        let mut best = 0;
        for i in 1..points.len() {
            if sq_dist(&points[i], from) > sq_dist(&points[best], from) {
                best = i;
            }
        }
        best
    };
    let a = far(centroid);
    let b = far(&points[a]);
    if sq_dist(&points[a], &points[b]) == 0.0 {
        return None;
    }
    let (children, assign) = kmeans_from(points, vec![points[a].clone(), points[b].clone()]);
    if assign.iter().all(|&x| x == assign[0]) {
        return None;
    }
    let parent = bic(points, &[centroid.to_vec()], &vec![0; points.len()]);
    let split = bic(points, &children, &assign);
    (split > parent).then_some((children, split - parent))
}

pub fn xmeans_points(points: &[Vec<f64>], kmin: usize, kmax: usize, seed: u64) -> Result<ClusteringResult> {
    if kmin < 1 || kmax < kmin {
        return Err(Error::Parameter(format!("need 1 <= kmin <= kmax, got kmin={kmin}, kmax={kmax}")));
    }
    if points.len() < kmax {
        return Err(Error::Parameter(format!("{} points for kmax={kmax}", points.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = farthest_point_init(points, kmin, &mut rng);
    let (mut centroids, mut assign) = kmeans_from(points, init);
    let mut models = vec![(centroids.clone(), assign.clone(), bic(points, &centroids, &assign))];

    while centroids.len() < kmax {
        let mut splits: Vec<(usize, Vec<Vec<f64>>, f64)> = Vec::new();
        for (j, c) in centroids.iter().enumerate() {
            let members: Vec<Vec<f64>> = points
                .iter()
                .zip(&assign)
                .filter(|(_, &a)| a == j)
                .map(|(p, _)| p.clone())
                .collect();
            if let Some((children, gain)) = try_split(&members, c) {
                splits.push((j, children, gain));
            }
        }
        if splits.is_empty() {
            break;
        }
        // Largest local improvement first; cluster index breaks ties.
        splits.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
        let budget = kmax - centroids.len();
        let mut next: Vec<Vec<f64>> = Vec::new();
        let accepted: Vec<&(usize, Vec<Vec<f64>>, f64)> = splits.iter().take(budget).collect();
        for (j, c) in centroids.iter().enumerate() {
            match accepted.iter().find(|s| s.0 == j) {
                Some(s) => next.extend(s.1.iter().cloned()),
                None => next.push(c.clone()),
            }
        }
        let (c2, a2) = kmeans_from(points, next);
        centroids = c2;
        assign = a2;
        let score = bic(points, &centroids, &assign);
        models.push((centroids.clone(), assign.clone(), score));
    }

    let trace: Vec<(usize, f64)> = models.iter().map(|(c, _, b)| (c.len(), *b)).collect();
    let best = models
        .into_iter()
        .reduce(|best, m| if m.2 > best.2 { m } else { best })
        .expect("at least the initial model");
    Ok(ClusteringResult {
        q: best.0.len(),
        centroids: best.0,
        assignments: best.1,
        bic: best.2,
        trace,
    })
}

/// Runs X-means over the named ratio features of every record.
pub fn xmeans(ps: &ProjectSet, features: &[Feature], kmin: usize, kmax: usize, seed: u64) -> Result<ClusteringResult> {
    let points: Vec<Vec<f64>> = ps
        .records
        .iter()
        .map(|r| features.iter().map(|&f| r.get(f)).collect())
        .collect();
    xmeans_points(&points, kmin, kmax, seed)
}

/// Default X-means range: `kmin = 2`, `kmax = min(10, n / 30)`, widened so
/// that `kmin <= kmax <= n`.
pub fn default_k_range(n: usize) -> (usize, usize) {
    let kmin = 2.min(n.max(1));
    let kmax = (n / 30).min(10).max(kmin).min(n.max(1));
    (kmin, kmax)
}

/// Cuts a chronologically sorted set into `q` contiguous windows whose sizes
/// differ by at most one; the newest windows take the remainder.
pub fn stratify(ps: &ProjectSet, q: usize) -> Result<Vec<Window>> {
    let n = ps.len();
    if q == 0 || q > n {
        return Err(Error::Parameter(format!("cannot cut {n} records into {q} windows")));
    }
    if ps.records.windows(2).any(|w| w[0].completion_date > w[1].completion_date) {
        return Err(Error::Parameter("records are not sorted by completion date".into()));
    }
    let base = n / q;
    let extra = n % q;
    let mut windows = Vec::with_capacity(q);
    let mut start = 0;
    for i in 0..q {
        let size = base + usize::from(i >= q - extra);
        windows.push(Window {
            index: i + 1,
            records: ps.records[start..start + size].to_vec(),
        });
        start += size;
    }
    Ok(windows)
}
