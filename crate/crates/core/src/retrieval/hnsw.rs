//! Hierarchical navigable small-world graph for cosine top-k search.
//!
//! Vectors are stored unit-normalized, so similarity is a dot product. Edges
//! are kept symmetric: whenever neighbor pruning drops an edge, the reverse
//! edge is dropped too. Node degree is capped at `M` on upper layers and `2M`
//! on layer 0.
//!
//! Index file layout (little-endian):
//!
//! ```text
//! magic     [u8; 4]  "ECRH"
//! version   u32      1
//! dim       u32
//! m         u32
//! ef_c      u32
//! seed      u64
//! n         u64
//! entry     u32      (u32::MAX when empty)
//! max_level u32
//! vectors   n × dim × f32
//! ids       n × (u32 len + UTF-8)
//! per node: level u8, then for each layer 0..=level: count u32, count × u32
//! crc32     u32
//! ```

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path;

use rand::Rng;

use crate::binio::{self, ByteReader, ByteWriter};
use crate::corpus::EmbeddingMatrix;
use crate::error::{EcrError, Result};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HnswParams {
    /// Max neighbors per node on upper layers (`2M` on layer 0).
    pub m: usize,
    pub ef_construction: usize,
    /// Seeds the level draws.
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        Self {
            m: 16,
            ef_construction: 200,
            seed: 0,
        }
    }
}

pub const DEFAULT_EF_SEARCH: usize = 64;

/// A scored candidate; orders by similarity, then prefers the lower id.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Cand {
    sim: f32,
    id: u32,
}

impl Eq for Cand {}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim
            .total_cmp(&other.sim)
            .then_with(|| other.id.cmp(&self.id))
    }
}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Reusable per-thread scratch space for searches.
#[derive(Debug, Default)]
pub struct Searcher {
    stamp: Vec<u32>,
    epoch: u32,
    visited: usize,
}

impl Searcher {
    pub fn new() -> Self {
        Self::default()
    }

    fn reset(&mut self, n: usize) {
        if self.stamp.len() < n {
            self.stamp.resize(n, 0);
        }
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.epoch = 1;
        }
        self.visited = 0;
    }

    /// Marks `id`; returns true when it was not yet visited.
    fn visit(&mut self, id: u32) -> bool {
        let s = &mut self.stamp[id as usize];
        if *s == self.epoch {
            return false;
        }
        *s = self.epoch;
        self.visited += 1;
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub ids: Vec<String>,
    /// Internal node indices, aligned with `ids`.
    pub indices: Vec<u32>,
    /// Cosine similarities, non-increasing.
    pub scores: Vec<f64>,
    /// Nodes whose similarity was evaluated.
    pub visited: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HnswIndex {
    params: HnswParams,
    dim: usize,
    vectors: Vec<f32>,
    ids: Vec<String>,
    /// `links[node][layer]`.
    links: Vec<Vec<Vec<u32>>>,
    entry: Option<u32>,
    max_level: usize,
}

fn unit_f32(v: &[f32]) -> Result<Vec<f32>> {
    let norm = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(EcrError::domain("cannot index a zero vector"));
    }
    Ok(v.iter().map(|&x| (x as f64 / norm) as f32).collect())
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl HnswIndex {
    pub fn new(dim: usize, params: HnswParams) -> Result<Self> {
        if dim == 0 {
            return Err(EcrError::invalid("index dimension must be positive"));
        }
        if params.m < 2 {
            return Err(EcrError::invalid("HNSW M must be at least 2"));
        }
        if params.ef_construction == 0 {
            return Err(EcrError::invalid("ef_construction must be positive"));
        }
        Ok(Self {
            params,
            dim,
            vectors: Vec::new(),
            ids: Vec::new(),
            links: Vec::new(),
            entry: None,
            max_level: 0,
        })
    }

    pub fn params(&self) -> HnswParams {
        self.params
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn entry_point(&self) -> Option<u32> {
        self.entry
    }

    pub fn max_level(&self) -> usize {
        self.max_level
    }

    pub fn level(&self, node: u32) -> usize {
        self.links[node as usize].len() - 1
    }

    pub fn neighbors(&self, node: u32, layer: usize) -> &[u32] {
        &self.links[node as usize][layer]
    }

    /// Stored unit vector of a node.
    pub fn vector(&self, node: u32) -> &[f32] {
        let i = node as usize;
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn degree_cap(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.params.m
        } else {
            self.params.m
        }
    }

    fn sim_to(&self, q: &[f32], node: u32) -> f32 {
        dot(q, self.vector(node))
    }

    fn node_sim(&self, a: u32, b: u32) -> f32 {
        dot(self.vector(a), self.vector(b))
    }

    /// Inserts rows in order; level draws come from one generator seeded by `params.seed`.
    pub fn build(vectors: &EmbeddingMatrix, params: HnswParams) -> Result<Self> {
        if vectors.n() == 0 {
            return Err(EcrError::invalid("cannot build an index from zero vectors"));
        }
        let mut index = Self::new(vectors.d(), params)?;
        let mut rng = seeded(params.seed);
        let mut searcher = Searcher::new();
        for (i, row) in vectors.rows().enumerate() {
            index.insert_with(row, vectors.ids()[i].clone(), &mut rng, &mut searcher)?;
        }
        Ok(index)
    }

    fn draw_level(&self, rng: &mut impl Rng) -> usize {
        let ml = 1.0 / (self.params.m as f64).ln();
        // 1 - U lies in (0, 1], so the logarithm is finite.
        let u: f64 = 1.0 - rng.random::<f64>();
        ((-u.ln() * ml).floor() as usize).min(32)
    }

    fn insert_with(
        &mut self,
        v: &[f32],
        id: String,
        rng: &mut impl Rng,
        searcher: &mut Searcher,
    ) -> Result<u32> {
        if v.len() != self.dim {
            return Err(EcrError::Dimension {
                expected: self.dim,
                found: v.len(),
            });
        }
        let unit = unit_f32(v)?;
        let level = self.draw_level(rng);
        let node = self.ids.len() as u32;
        self.vectors.extend_from_slice(&unit);
        self.ids.push(id);
        self.links.push(vec![Vec::new(); level + 1]);

        let Some(mut ep) = self.entry else {
            self.entry = Some(node);
            self.max_level = level;
            return Ok(node);
        };

        for layer in ((level + 1)..=self.max_level).rev() {
            ep = self.greedy(&unit, ep, layer, searcher);
        }
        let mut eps = vec![ep];
        for layer in (0..=level.min(self.max_level)).rev() {
            let found =
                self.search_layer(&unit, &eps, self.params.ef_construction, layer, searcher);
            let selected = self.select_neighbors(&unit, &found, self.params.m);
            for &nb in &selected {
                self.links[node as usize][layer].push(nb);
                self.links[nb as usize][layer].push(node);
                if self.links[nb as usize][layer].len() > self.degree_cap(layer) {
                    self.shrink(nb, layer);
                }
            }
            eps = found.iter().map(|c| c.id).collect();
        }
        if level > self.max_level {
            self.max_level = level;
            self.entry = Some(node);
        }
        Ok(node)
    }

    /// Re-selects a node's neighbors under the degree cap and removes the
    /// reverse edge of every dropped neighbor.
    fn shrink(&mut self, node: u32, layer: usize) {
        let base = self.vector(node).to_vec();
        let mut cands: Vec<Cand> = self.links[node as usize][layer]
            .iter()
            .map(|&id| Cand {
                sim: dot(&base, self.vector(id)),
                id,
            })
            .collect();
        cands.sort_by(|a, b| b.cmp(a));
        let keep = self.select_neighbors(&base, &cands, self.degree_cap(layer));
        let dropped: Vec<u32> = self.links[node as usize][layer]
            .iter()
            .copied()
            .filter(|id| !keep.contains(id))
            .collect();
        for d in dropped {
            self.links[d as usize][layer].retain(|&x| x != node);
        }
        self.links[node as usize][layer] = keep;
    }

    /// Diversity heuristic: keep a candidate only if it is closer to the base
    /// than to every kept neighbor, then top up with the best pruned ones.
    /// `cands` must be sorted by descending similarity.
    fn select_neighbors(&self, _base: &[f32], cands: &[Cand], limit: usize) -> Vec<u32> {
        let mut kept: Vec<u32> = Vec::with_capacity(limit);
        let mut pruned: Vec<u32> = Vec::new();
        for c in cands {
            if kept.len() >= limit {
                break;
            }
            let diverse = kept.iter().all(|&k| self.node_sim(c.id, k) < c.sim);
            if diverse {
                kept.push(c.id);
            } else {
                pruned.push(c.id);
            }
        }
        for p in pruned {
            if kept.len() >= limit {
                break;
            }
            kept.push(p);
        }
        kept
    }

    fn greedy(&self, q: &[f32], mut ep: u32, layer: usize, searcher: &mut Searcher) -> u32 {
        let mut best = self.sim_to(q, ep);
        searcher.visited += 1;
        loop {
            let mut changed = false;
            for &nb in self.neighbors(ep, layer) {
                let s = self.sim_to(q, nb);
                searcher.visited += 1;
                if s > best || (s == best && nb < ep) {
                    best = s;
                    ep = nb;
                    changed = true;
                }
            }
            if !changed {
                return ep;
            }
        }
    }

    /// Beam search on one layer; returns up to `ef` candidates, best first.
    fn search_layer(
        &self,
        q: &[f32],
        eps: &[u32],
        ef: usize,
        layer: usize,
        searcher: &mut Searcher,
    ) -> Vec<Cand> {
        searcher.reset(self.len());
        let mut frontier: BinaryHeap<Cand> = BinaryHeap::new();
        // Min-heap of the best `ef` found so far.
        let mut best: BinaryHeap<std::cmp::Reverse<Cand>> = BinaryHeap::new();
        for &ep in eps {
            if searcher.visit(ep) {
                let c = Cand {
                    sim: self.sim_to(q, ep),
                    id: ep,
                };
                frontier.push(c);
                best.push(std::cmp::Reverse(c));
                if best.len() > ef {
                    best.pop();
                }
            }
        }
        while let Some(c) = frontier.pop() {
            let worst = best.peek().expect("non-empty").0;
            if c < worst && best.len() >= ef {
                break;
            }
            for &nb in self.neighbors(c.id, layer) {
                if !searcher.visit(nb) {
                    continue;
                }
                let cand = Cand {
                    sim: self.sim_to(q, nb),
                    id: nb,
                };
                let worst = best.peek().expect("non-empty").0;
                if best.len() < ef || cand > worst {
                    frontier.push(cand);
                    best.push(std::cmp::Reverse(cand));
                    if best.len() > ef {
                        best.pop();
                    }
                }
            }
        }
        let mut out: Vec<Cand> = best.into_iter().map(|r| r.0).collect();
        out.sort_by(|a, b| b.cmp(a));
        out
    }

    /// Approximate `k` nearest stored vectors by cosine.
    pub fn query(&self, v: &[f32], k: usize, ef_search: usize) -> Result<QueryResult> {
        self.query_with(v, k, ef_search, &mut Searcher::new())
    }

    pub fn query_with(
        &self,
        v: &[f32],
        k: usize,
        ef_search: usize,
        searcher: &mut Searcher,
    ) -> Result<QueryResult> {
        if k == 0 {
            return Err(EcrError::invalid("k must be at least 1"));
        }
        if ef_search < k {
            return Err(EcrError::invalid(format!(
                "ef_search {ef_search} is below k = {k}"
            )));
        }
        let Some(mut ep) = self.entry else {
            return Err(EcrError::invalid("query on an empty index"));
        };
        if v.len() != self.dim {
            return Err(EcrError::Dimension {
                expected: self.dim,
                found: v.len(),
            });
        }
        let q = unit_f32(v)?;
        searcher.reset(self.len());
        let mut upper_visits = 0;
        for layer in (1..=self.max_level).rev() {
            ep = self.greedy(&q, ep, layer, searcher);
            upper_visits += searcher.visited;
            searcher.visited = 0;
        }
        let found = self.search_layer(&q, &[ep], ef_search, 0, searcher);
        let visited = upper_visits + searcher.visited;
        let top: Vec<Cand> = found.into_iter().take(k).collect();
        Ok(QueryResult {
            ids: top
                .iter()
                .map(|c| self.ids[c.id as usize].clone())
                .collect(),
            indices: top.iter().map(|c| c.id).collect(),
            scores: top.iter().map(|c| c.sim as f64).collect(),
            visited,
        })
    }

    /// Checks the structural invariants; returns the first violation found.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.is_empty() {
            return if self.entry.is_none() {
                Ok(())
            } else {
                Err("empty index has an entry point".into())
            };
        }
        let entry = self.entry.ok_or("non-empty index lacks an entry point")?;
        if self.level(entry) != self.max_level {
            return Err(format!(
                "entry point level {} != max level {}",
                self.level(entry),
                self.max_level
            ));
        }
        for (node, layers) in self.links.iter().enumerate() {
            for (layer, nbs) in layers.iter().enumerate() {
                if nbs.len() > self.degree_cap(layer) {
                    return Err(format!(
                        "node {node} layer {layer} degree {} over cap",
                        nbs.len()
                    ));
                }
                for &nb in nbs {
                    if nb as usize == node {
                        return Err(format!("node {node} links to itself"));
                    }
                    let back = self
                        .links
                        .get(nb as usize)
                        .and_then(|l| l.get(layer))
                        .ok_or_else(|| {
                            format!("node {node} links to {nb} absent on layer {layer}")
                        })?;
                    if !back.contains(&(node as u32)) {
                        return Err(format!("edge {node}->{nb} on layer {layer} is one-way"));
                    }
                }
                let mut sorted = nbs.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != nbs.len() {
                    return Err(format!("node {node} layer {layer} has duplicate edges"));
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(b"ECRH");
        w.u32(1);
        w.u32(self.dim as u32);
        w.u32(self.params.m as u32);
        w.u32(self.params.ef_construction as u32);
        w.u64(self.params.seed);
        w.u64(self.len() as u64);
        w.u32(self.entry.unwrap_or(u32::MAX));
        w.u32(self.max_level as u32);
        for &v in &self.vectors {
            w.f32(v);
        }
        for id in &self.ids {
            w.str(id);
        }
        for layers in &self.links {
            w.u8((layers.len() - 1) as u8);
            for nbs in layers {
                w.u32(nbs.len() as u32);
                for &nb in nbs {
                    w.u32(nb);
                }
            }
        }
        w.seal()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(binio::unseal(bytes)?);
        r.expect_magic(b"ECRH", "ECRH")?;
        r.expect_version(1)?;
        let dim = r.u32()? as usize;
        let m = r.u32()? as usize;
        let ef_construction = r.u32()? as usize;
        let seed = r.u64()?;
        let n = r.u64()? as usize;
        let entry = match r.u32()? {
            u32::MAX => None,
            e => Some(e),
        };
        let max_level = r.u32()? as usize;
        let mut vectors = Vec::with_capacity(n * dim);
        for _ in 0..n * dim {
            vectors.push(r.f32()?);
        }
        let ids = (0..n).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        let mut links = Vec::with_capacity(n);
        for _ in 0..n {
            let level = r.u8()? as usize;
            let mut layers = Vec::with_capacity(level + 1);
            for _ in 0..=level {
                let count = r.u32()? as usize;
                let nbs = (0..count).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
                if nbs.iter().any(|&nb| nb as usize >= n) {
                    return Err(EcrError::Format("edge points past the node table".into()));
                }
                layers.push(nbs);
            }
            links.push(layers);
        }
        r.finish()?;
        let index = Self {
            params: HnswParams {
                m,
                ef_construction,
                seed,
            },
            dim,
            vectors,
            ids,
            links,
            entry,
            max_level,
        };
        index.validate().map_err(EcrError::Format)?;
        Ok(index)
    }
}

pub fn save_index(index: &HnswIndex, path: &Path) -> Result<()> {
    binio::write_atomic(path, &index.to_bytes())
}

pub fn load_index(path: &Path) -> Result<HnswIndex> {
    HnswIndex::from_bytes(&binio::read_file(path)?)
}

/// Exact cosine top-k by linear scan and full sort; ties go to the lower row.
pub fn brute_force_topk(vectors: &EmbeddingMatrix, v: &[f32], k: usize) -> Result<QueryResult> {
    if v.len() != vectors.d() {
        return Err(EcrError::Dimension {
            expected: vectors.d(),
            found: v.len(),
        });
    }
    let q: Vec<f64> = v.iter().map(|&x| x as f64).collect();
    let qn = crate::corpus::l2_norm(&q);
    let mut scored: Vec<(f64, usize)> = vectors
        .rows()
        .enumerate()
        .map(|(i, row)| {
            let r: Vec<f64> = row.iter().map(|&x| x as f64).collect();
            let denom = qn * crate::corpus::l2_norm(&r);
            let s = if denom > 0.0 {
                crate::corpus::dot(&q, &r) / denom
            } else {
                0.0
            };
            (s, i)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.truncate(k);
    Ok(QueryResult {
        ids: scored
            .iter()
            .map(|&(_, i)| vectors.ids()[i].clone())
            .collect(),
        indices: scored.iter().map(|&(_, i)| i as u32).collect(),
        scores: scored.iter().map(|&(s, _)| s).collect(),
        visited: vectors.n(),
    })
}

/// Mean fraction of the exact top-k recovered by the index.
pub fn recall_at_k(
    index: &HnswIndex,
    base: &EmbeddingMatrix,
    queries: &EmbeddingMatrix,
    k: usize,
    ef_search: usize,
) -> Result<f64> {
    let mut searcher = Searcher::new();
    let mut hits = 0usize;
    for q in queries.rows() {
        let approx = index.query_with(q, k, ef_search, &mut searcher)?;
        let exact = brute_force_topk(base, q, k)?;
        hits += approx
            .indices
            .iter()
            .filter(|i| exact.indices.contains(i))
            .count();
    }
    Ok(hits as f64 / (queries.n() * k) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn uniform(n: usize, d: usize, seed: u64) -> EmbeddingMatrix {
        let mut rng = seeded(seed);
        let data = (0..n * d).map(|_| rng.random::<f32>()).collect();
        EmbeddingMatrix::new(d, data, (0..n).map(|i| format!("v{i}")).collect()).unwrap()
    }

    /// Heap-based exact top-k, independent of the sort-based scan.
    fn heap_topk(vectors: &EmbeddingMatrix, v: &[f32], k: usize) -> Vec<usize> {
        #[derive(PartialEq)]
        struct Item(f64, usize);
        impl Eq for Item {}
        impl PartialOrd for Item {
            fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
                Some(self.cmp(o))
            }
        }
        impl Ord for Item {
            // "Greater" = worse, so the max-heap root is the current worst.
            fn cmp(&self, o: &Self) -> Ordering {
                o.0.total_cmp(&self.0).then(self.1.cmp(&o.1))
            }
        }
        let mut heap = BinaryHeap::new();
        let vn: f64 = v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        for (i, row) in vectors.rows().enumerate() {
            let rn: f64 = row.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            let s = row
                .iter()
                .zip(v)
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum::<f64>()
                / (rn * vn);
            heap.push(Item(s, i));
            if heap.len() > k {
                heap.pop();
            }
        }
        let mut out: Vec<Item> = heap.into_vec();
        out.sort();
        out.into_iter().map(|it| it.1).collect()
    }

    #[test]
    fn single_vector_index() {
        let m = EmbeddingMatrix::new(3, vec![1.0, 2.0, 2.0], vec!["only".into()]).unwrap();
        let idx = HnswIndex::build(&m, HnswParams::default()).unwrap();
        assert_eq!(idx.entry_point(), Some(0));
        let r = idx.query(&[1.0, 0.0, 0.0], 1, 1).unwrap();
        assert_eq!(r.ids, vec!["only".to_string()]);
        assert!((r.scores[0] - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn structure_invariants_on_random_vectors() {
        let m = uniform(100, 64, 1);
        let idx = HnswIndex::build(&m, HnswParams::default()).unwrap();
        idx.validate().unwrap();
        let small = HnswIndex::build(
            &uniform(500, 8, 2),
            HnswParams {
                m: 4,
                ef_construction: 20,
                seed: 3,
            },
        )
        .unwrap();
        small.validate().unwrap();
        assert!(small.max_level() >= 1);
    }

    #[test]
    fn self_query_is_rank_one() {
        let m = uniform(300, 16, 5);
        let idx = HnswIndex::build(&m, HnswParams::default()).unwrap();
        for i in [0, 17, 299] {
            let r = idx.query(m.row(i), 1, m.n()).unwrap();
            assert_eq!(r.indices[0], i as u32);
            assert!((r.scores[0] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn duplicates_are_distinct_and_retrievable() {
        let data = vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.5, 0.5];
        let m = EmbeddingMatrix::new(
            2,
            data,
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
        )
        .unwrap();
        let idx = HnswIndex::build(&m, HnswParams::default()).unwrap();
        let r = idx.query(&[1.0, 0.0], 2, 4).unwrap();
        let mut ids = r.ids.clone();
        ids.sort();
        assert_eq!(ids, vec!["a".to_string(), "b".to_string()]);
        idx.validate().unwrap();
    }

    #[test]
    fn query_errors() {
        let m = uniform(10, 4, 0);
        let idx = HnswIndex::build(&m, HnswParams::default()).unwrap();
        assert!(idx.query(m.row(0), 0, 10).is_err());
        assert!(idx.query(m.row(0), 5, 4).is_err());
        assert!(idx.query(&[1.0; 3], 1, 4).is_err());
        let empty = HnswIndex::new(4, HnswParams::default()).unwrap();
        assert!(empty.query(&[1.0; 4], 1, 4).is_err());
        assert!(HnswIndex::build(
            &EmbeddingMatrix::new(4, vec![], vec![]).unwrap(),
            HnswParams::default()
        )
        .is_err());
    }

    #[test]
    fn brute_force_examples() {
        let basis: Vec<f32> = (0..16)
            .map(|i| if i % 5 == 0 { 1.0 } else { 0.0 })
            .collect();
        let m = EmbeddingMatrix::new(4, basis, (0..4).map(|i| format!("e{i}")).collect()).unwrap();
        assert_eq!(
            brute_force_topk(&m, &[0.0, 1.0, 0.0, 0.0], 1).unwrap().ids,
            vec!["e1".to_string()]
        );

        let m = uniform(50, 6, 9);
        let all = brute_force_topk(&m, m.row(3), 50).unwrap();
        assert_eq!(all.ids.len(), 50);
        assert!(all.scores.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn brute_force_agrees_with_heap_scan() {
        let m = uniform(400, 12, 13);
        let q = uniform(20, 12, 14);
        for row in q.rows() {
            let a: Vec<usize> = brute_force_topk(&m, row, 7)
                .unwrap()
                .indices
                .iter()
                .map(|&i| i as usize)
                .collect();
            assert_eq!(a, heap_topk(&m, row, 7));
        }
    }

    #[test]
    fn file_round_trip_and_corruption() {
        let idx = HnswIndex::build(&uniform(200, 8, 4), HnswParams::default()).unwrap();
        let bytes = idx.to_bytes();
        let back = HnswIndex::from_bytes(&bytes).unwrap();
        assert_eq!(back, idx);
        let mut bad = bytes.clone();
        bad[40] ^= 0xff;
        assert!(matches!(
            HnswIndex::from_bytes(&bad),
            Err(EcrError::Checksum { .. })
        ));
    }

    #[test]
    fn build_is_deterministic() {
        let m = uniform(300, 8, 6);
        let p = HnswParams {
            seed: 42,
            ..Default::default()
        };
        assert_eq!(
            HnswIndex::build(&m, p).unwrap(),
            HnswIndex::build(&m, p).unwrap()
        );
    }

    #[test]
    fn larger_k_keeps_earlier_results() {
        let m = uniform(2000, 16, 8);
        let idx = HnswIndex::build(&m, HnswParams::default()).unwrap();
        let q = uniform(10, 16, 9);
        for row in q.rows() {
            let mut prev: Vec<u32> = Vec::new();
            for k in 1..=10 {
                let r = idx.query(row, k, 32).unwrap();
                assert!(prev.iter().all(|p| r.indices.contains(p)));
                prev = r.indices;
            }
        }
    }
}
