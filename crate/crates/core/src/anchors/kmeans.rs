//! Seeded Lloyd's k-means with distance-weighted initialization.

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rayon::prelude::*;

use super::{Derivation, FactorGroup};
use crate::corpus::EmbeddingMatrix;
use crate::error::{EcrError, Result};
use crate::factor::FactorCode;
use crate::rng::seeded;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once an iteration improves the objective by less than this.
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            k: 8,
            seed: 0,
            max_iter: 100,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub d: usize,
    /// Row-major `k × d`.
    pub centroids: Vec<f64>,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares after initialization, then after each iteration.
    pub objective: Vec<f64>,
    pub iterations: usize,
}

impl KMeansFit {
    pub fn k(&self) -> usize {
        self.centroids.len() / self.d
    }

    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.d..(c + 1) * self.d]
    }

    pub fn final_objective(&self) -> f64 {
        *self.objective.last().expect("objective recorded")
    }

    pub fn into_group(self, code: FactorCode) -> Result<FactorGroup> {
        FactorGroup::new(code, self.d, self.centroids, None, Derivation::KMeans)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[f64], d: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cent) in centroids.chunks_exact(d).enumerate() {
        let dist = sq_dist(point, cent);
        if dist < best.1 {
            best = (c, dist);
        }
    }
    best
}

fn objective(points: &[Vec<f64>], centroids: &[f64], assign: &[usize], d: usize) -> f64 {
    points
        .iter()
        .zip(assign)
        .map(|(p, &c)| sq_dist(p, &centroids[c * d..(c + 1) * d]))
        .sum()
}

/// Distance-weighted seeding: first centre uniform, later ones drawn with
/// probability proportional to squared distance from the nearest chosen centre.
fn init_centroids(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let n = points.len();
    let d = points[0].len();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut min_d2: Vec<f64> = points
        .iter()
        .map(|p| sq_dist(p, &points[chosen[0]]))
        .collect();
    while chosen.len() < k {
        let next = match WeightedIndex::new(&min_d2) {
            Ok(dist) => dist.sample(rng),
            // Every remaining point coincides with a chosen centre.
            Err(_) => {
                let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
                free[rng.random_range(0..free.len())]
            }
        };
        chosen.push(next);
        for (m, p) in min_d2.iter_mut().zip(points) {
            *m = m.min(sq_dist(p, &points[next]));
        }
    }
    let mut out = Vec::with_capacity(k * d);
    for &c in &chosen {
        out.extend_from_slice(&points[c]);
    }
    out
}

/// Clusters the rows of `embeddings` into `params.k` groups (Euclidean).
///
/// The objective never increases between iterations. An emptied cluster takes
/// the point farthest from its centroid, so `k` is always preserved.
pub fn kmeans(embeddings: &EmbeddingMatrix, params: &KMeansParams) -> Result<KMeansFit> {
    let n = embeddings.n();
    let d = embeddings.d();
    let k = params.k;
    if k == 0 {
        return Err(EcrError::invalid("k-means needs k >= 1"));
    }
    if k > n {
        return Err(EcrError::invalid(format!(
            "k-means k = {k} exceeds row count {n}"
        )));
    }
    let points: Vec<Vec<f64>> = (0..n).map(|i| embeddings.row_f64(i)).collect();
    let mut rng = seeded(params.seed);
    let mut centroids = init_centroids(&points, k, &mut rng);

    let assign_all = |centroids: &[f64]| -> Vec<(usize, f64)> {
        points
            .par_iter()
            .map(|p| nearest(p, centroids, d))
            .collect()
    };

    let mut assignments: Vec<usize> = assign_all(&centroids).into_iter().map(|(c, _)| c).collect();
    let mut trace = vec![objective(&points, &centroids, &assignments, d)];
    let mut iterations = 0;

    for iter in 0..params.max_iter {
        let nearest_now = assign_all(&centroids);
        let mut next: Vec<usize> = nearest_now.iter().map(|&(c, _)| c).collect();
        let mut dist: Vec<f64> = nearest_now.iter().map(|&(_, dd)| dd).collect();
        repair_empty(&points, &mut centroids, &mut next, &mut dist, k, d);

        // Update step: each centroid becomes the mean of its members.
        let mut sums = vec![0.0f64; k * d];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&next) {
            counts[c] += 1;
            for (s, v) in sums[c * d..(c + 1) * d].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            let cnt = counts[c] as f64;
            for s in &mut sums[c * d..(c + 1) * d] {
                *s /= cnt;
            }
        }
        let changed = next != assignments || iter == 0;
        centroids = sums;
        assignments = next;
        let obj = objective(&points, &centroids, &assignments, d);
        let prev = *trace.last().expect("non-empty trace");
        debug_assert!(
            obj <= prev * (1.0 + 1e-12) + 1e-12,
            "k-means objective increased: {prev} -> {obj}"
        );
        trace.push(obj);
        iterations = iter + 1;
        if !changed || prev - obj < params.tol {
            break;
        }
    }

    Ok(KMeansFit {
        d,
        centroids,
        assignments,
        objective: trace,
        iterations,
    })
}

/// Moves the farthest point (from a cluster with > 1 member) into each empty cluster.
fn repair_empty(
    points: &[Vec<f64>],
    centroids: &mut [f64],
    assign: &mut [usize],
    dist: &mut [f64],
    k: usize,
    d: usize,
) {
    let mut counts = vec![0usize; k];
    for &c in assign.iter() {
        counts[c] += 1;
    }
    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        let mut far: Option<usize> = None;
        for i in 0..points.len() {
            if counts[assign[i]] > 1 && far.is_none_or(|f| dist[i] > dist[f]) {
                far = Some(i);
            }
        }
        let Some(i) = far else { break };
        counts[assign[i]] -= 1;
        counts[empty] += 1;
        assign[i] = empty;
        dist[i] = 0.0;
        centroids[empty * d..(empty + 1) * d].copy_from_slice(&points[i]);
    }
}
