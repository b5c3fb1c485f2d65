//! Local retrieval: PCA reduction, an HNSW index, and an exact scan oracle.

mod hnsw;
mod pca;

use std::time::Instant;

pub use hnsw::{
    brute_force_topk, load_index, recall_at_k, save_index, HnswIndex, HnswParams, QueryResult,
    Searcher, DEFAULT_EF_SEARCH,
};
pub use pca::{
    fit_pca, fit_pca_with, load_pca, save_pca, PcaModel, PcaSolver, EXACT_SOLVER_MAX_DIM,
};

use crate::corpus::EmbeddingMatrix;
use crate::error::{EcrError, Result};

/// Fewest timed queries in a latency run; the query set is cycled to reach it.
pub const MIN_TIMED_QUERIES: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyReport {
    pub queries: usize,
    pub k: usize,
    pub ef_search: usize,
    pub mean_us: f64,
    pub p50_us: f64,
    pub p99_us: f64,
    pub max_us: f64,
    /// Sum of visited nodes over the timed queries; deterministic for a given index.
    pub visited: u64,
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Times single-threaded queries after a short warm-up pass.
pub fn bench_query_latency(
    index: &HnswIndex,
    queries: &EmbeddingMatrix,
    k: usize,
    ef_search: usize,
) -> Result<LatencyReport> {
    if queries.n() == 0 {
        return Err(EcrError::invalid(
            "latency benchmark needs at least one query",
        ));
    }
    let mut searcher = Searcher::new();
    for q in queries.rows().take(100) {
        index.query_with(q, k, ef_search, &mut searcher)?;
    }
    let total = MIN_TIMED_QUERIES.max(queries.n());
    let mut times = Vec::with_capacity(total);
    let mut visited = 0u64;
    for i in 0..total {
        let q = queries.row(i % queries.n());
        let start = Instant::now();
        let r = index.query_with(q, k, ef_search, &mut searcher)?;
        times.push(start.elapsed().as_secs_f64() * 1e6);
        visited += r.visited as u64;
    }
    let mean_us = times.iter().sum::<f64>() / total as f64;
    times.sort_by(f64::total_cmp);
    Ok(LatencyReport {
        queries: total,
        k,
        ef_search,
        mean_us,
        p50_us: percentile(&times, 50.0),
        p99_us: percentile(&times, 99.0),
        max_us: *times.last().expect("non-empty"),
        visited,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    #[test]
    fn latency_report_shape_and_determinism() {
        let mut rng = seeded(1);
        let base = EmbeddingMatrix::new(
            8,
            (0..8 * 500).map(|_| rng.random::<f32>()).collect(),
            (0..500).map(|i| i.to_string()).collect(),
        )
        .unwrap();
        let qs = base.select(&(0..20).collect::<Vec<_>>());
        let idx = HnswIndex::build(&base, HnswParams::default()).unwrap();
        let a = bench_query_latency(&idx, &qs, 5, 64).unwrap();
        let b = bench_query_latency(&idx, &qs, 5, 64).unwrap();
        assert_eq!(a.queries, MIN_TIMED_QUERIES);
        assert_eq!(a.visited, b.visited);
        assert!(a.p50_us <= a.p99_us && a.p99_us <= a.max_us);
        let empty = EmbeddingMatrix::new(8, vec![], vec![]).unwrap();
        assert!(bench_query_latency(&idx, &empty, 5, 64).is_err());
    }

    #[test]
    fn percentile_ranks() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 50.0), 50.0);
        assert_eq!(percentile(&v, 99.0), 99.0);
        assert_eq!(percentile(&[3.0], 99.0), 3.0);
    }
}
