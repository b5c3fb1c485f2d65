//! Principal component analysis by covariance eigendecomposition.
//!
//! PCA model file layout (little-endian):
//!
//! ```text
//! magic     [u8; 4]  "ECRP"
//! version   u32      1
//! d         u32
//! r         u32
//! mean      d × f64
//! comps     r × d × f64   component i occupies values i·d .. (i+1)·d
//! variance  r × f64
//! crc32     u32
//! ```

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use tracing::warn;

use crate::binio::{self, ByteReader, ByteWriter};
use crate::corpus::EmbeddingMatrix;
use crate::error::{EcrError, Result};
use crate::rng::seeded;

/// Above this input dimension the solver switches to subspace iteration.
pub const EXACT_SOLVER_MAX_DIM: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PcaSolver {
    /// Exact below [`EXACT_SOLVER_MAX_DIM`], subspace iteration above.
    #[default]
    Auto,
    Exact,
    Subspace {
        iterations: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean: Vec<f64>,
    /// `r` unit components, each of length `d`.
    components: Vec<f64>,
    explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn d(&self) -> usize {
        self.mean.len()
    }

    pub fn r(&self) -> usize {
        self.explained_variance.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn component(&self, i: usize) -> &[f64] {
        let d = self.d();
        &self.components[i * d..(i + 1) * d]
    }

    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    /// `componentsᵀ · (v − mean)`.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.d() {
            return Err(EcrError::Dimension {
                expected: self.d(),
                found: v.len(),
            });
        }
        let centered: Vec<f64> = v.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok((0..self.r())
            .map(|i| {
                self.component(i)
                    .iter()
                    .zip(&centered)
                    .map(|(c, x)| c * x)
                    .sum()
            })
            .collect())
    }

    /// `mean + components · y`.
    pub fn reconstruct(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.r() {
            return Err(EcrError::Dimension {
                expected: self.r(),
                found: y.len(),
            });
        }
        let mut out = self.mean.clone();
        for (i, &coef) in y.iter().enumerate() {
            for (o, c) in out.iter_mut().zip(self.component(i)) {
                *o += coef * c;
            }
        }
        Ok(out)
    }

    /// Projects every row, keeping ids.
    pub fn project_matrix(&self, m: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        let rows = (0..m.n())
            .map(|i| self.project(&m.row_f64(i)))
            .collect::<Result<Vec<_>>>()?;
        EmbeddingMatrix::from_rows(self.r(), &rows, m.ids().to_vec())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(b"ECRP");
        w.u32(1);
        w.u32(self.d() as u32);
        w.u32(self.r() as u32);
        for v in self
            .mean
            .iter()
            .chain(&self.components)
            .chain(&self.explained_variance)
        {
            w.f64(*v);
        }
        w.seal()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(binio::unseal(bytes)?);
        r.expect_magic(b"ECRP", "ECRP")?;
        r.expect_version(1)?;
        let d = r.u32()? as usize;
        let rank = r.u32()? as usize;
        let mut read = |n: usize| (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>();
        let mean = read(d)?;
        let components = read(rank * d)?;
        let explained_variance = read(rank)?;
        r.finish()?;
        Ok(Self {
            mean,
            components,
            explained_variance,
        })
    }
}

pub fn save_pca(model: &PcaModel, path: &Path) -> Result<()> {
    binio::write_atomic(path, &model.to_bytes())
}

pub fn load_pca(path: &Path) -> Result<PcaModel> {
    PcaModel::from_bytes(&binio::read_file(path)?)
}

pub fn fit_pca(x: &EmbeddingMatrix, r: usize) -> Result<PcaModel> {
    fit_pca_with(x, r, PcaSolver::Auto)
}

/// Top-`r` principal directions of the centered rows of `x`; variances use
/// the `n − 1` denominator.
pub fn fit_pca_with(x: &EmbeddingMatrix, r: usize, solver: PcaSolver) -> Result<PcaModel> {
    let (n, d) = (x.n(), x.d());
    if n < 2 {
        return Err(EcrError::invalid(format!(
            "PCA needs at least 2 rows, got {n}"
        )));
    }
    if r == 0 || r > n.min(d) {
        return Err(EcrError::invalid(format!(
            "PCA target dimension {r} outside 1..={}",
            n.min(d)
        )));
    }
    let mut mean = vec![0.0f64; d];
    for row in x.rows() {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| x.row(i)[j] as f64 - mean[j]);

    let exact = match solver {
        PcaSolver::Auto => d <= EXACT_SOLVER_MAX_DIM,
        PcaSolver::Exact => true,
        PcaSolver::Subspace { .. } => false,
    };
    let (values, vectors) = if exact {
        let cov = centered.tr_mul(&centered) / (n as f64 - 1.0);
        let eig = SymmetricEigen::new(cov);
        (eig.eigenvalues.as_slice().to_vec(), eig.eigenvectors)
    } else {
        let iterations = match solver {
            PcaSolver::Subspace { iterations } => iterations,
            _ => 60,
        };
        subspace_eigen(&centered, r, iterations)
    };

    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut components = Vec::with_capacity(r * d);
    let mut explained_variance = Vec::with_capacity(r);
    for &c in order.iter().take(r) {
        let mut col: Vec<f64> = vectors.column(c).iter().copied().collect();
        // Sign convention: largest-magnitude entry is positive.
        let pivot = col
            .iter()
            .copied()
            .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if pivot < 0.0 {
            col.iter_mut().for_each(|v| *v = -*v);
        }
        components.extend(col);
        explained_variance.push(values[c].max(0.0));
    }
    if explained_variance.iter().all(|&v| v == 0.0) {
        warn!("PCA input has zero variance; components are arbitrary");
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
    })
}

/// Block power iteration with Rayleigh–Ritz extraction. Returns eigenvalues and
/// their eigenvectors (as columns) for the leading subspace.
fn subspace_eigen(
    centered: &DMatrix<f64>,
    r: usize,
    iterations: usize,
) -> (Vec<f64>, DMatrix<f64>) {
    let (n, d) = centered.shape();
    let p = (r + 8).min(d);
    let mut rng = seeded(0x5ca1ab1e);
    let mut q = DMatrix::from_fn(d, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    q = q.qr().q();
    let scale = 1.0 / (n as f64 - 1.0);
    let apply = |m: &DMatrix<f64>| centered.tr_mul(&(centered * m)) * scale;
    for _ in 0..iterations {
        q = apply(&q).qr().q();
    }
    let t = q.tr_mul(&apply(&q));
    let t = (&t + t.transpose()) * 0.5;
    let eig = SymmetricEigen::new(t);
    (eig.eigenvalues.as_slice().to_vec(), q * eig.eigenvectors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::Distribution;

    fn random_matrix(n: usize, d: usize, seed: u64) -> EmbeddingMatrix {
        let mut rng = seeded(seed);
        let data = (0..n * d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        EmbeddingMatrix::new(d, data, (0..n).map(|i| i.to_string()).collect()).unwrap()
    }

    #[test]
    fn line_y_equals_x() {
        let data: Vec<f32> = (0..20).flat_map(|i| [i as f32, i as f32]).collect();
        let m = EmbeddingMatrix::new(2, data, (0..20).map(|i| i.to_string()).collect()).unwrap();
        let p = fit_pca(&m, 2).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert!((p.component(0)[0] - s).abs() < 1e-9 && (p.component(0)[1] - s).abs() < 1e-9);
        assert!(p.explained_variance()[1].abs() < 1e-9);
    }

    #[test]
    fn full_rank_total_variance() {
        let m = random_matrix(300, 6, 4);
        let p = fit_pca(&m, 6).unwrap();
        // Trace of the covariance, computed directly.
        let n = m.n() as f64;
        let mut total = 0.0;
        for j in 0..6 {
            let mean: f64 = m.rows().map(|r| r[j] as f64).sum::<f64>() / n;
            total += m.rows().map(|r| (r[j] as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
        }
        let explained: f64 = p.explained_variance().iter().sum();
        assert!((explained - total).abs() < 1e-6);
    }

    #[test]
    fn isotropic_sample_has_flat_spectrum() {
        let mut rng = seeded(10);
        let data: Vec<f32> = (0..10_000 * 4)
            .map(|_| StandardNormal.sample(&mut rng))
            .map(|v: f64| v as f32)
            .collect();
        let m =
            EmbeddingMatrix::new(4, data, (0..10_000).map(|i| i.to_string()).collect()).unwrap();
        let ev = fit_pca(&m, 4).unwrap().explained_variance().to_vec();
        let (lo, hi) = (ev[3], ev[0]);
        assert!(hi / lo < 1.10, "{ev:?}");
    }

    #[test]
    fn project_examples() {
        let m = random_matrix(50, 5, 2);
        let p = fit_pca(&m, 3).unwrap();
        assert!(p.project(p.mean()).unwrap().iter().all(|v| v.abs() < 1e-12));
        let v: Vec<f64> = p
            .mean()
            .iter()
            .zip(p.component(0))
            .map(|(a, b)| a + b)
            .collect();
        let y = p.project(&v).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-9 && y[1].abs() < 1e-9 && y[2].abs() < 1e-9);
        assert!(p.project(&[0.0; 4]).is_err());
    }

    #[test]
    fn project_matches_matrix_multiply() {
        let m = random_matrix(40, 6, 3);
        let p = fit_pca(&m, 4).unwrap();
        let v: Vec<f64> = (0..6).map(|i| i as f64 * 0.3 - 1.0).collect();
        let c = DMatrix::from_fn(6, 4, |i, j| p.component(j)[i]);
        let centered = DMatrix::from_fn(6, 1, |i, _| v[i] - p.mean()[i]);
        let oracle = c.transpose() * centered;
        for (a, b) in p.project(&v).unwrap().iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn subspace_solver_agrees_with_exact() {
        let mut rng = seeded(12);
        // Anisotropic data so the leading eigenvalues are well separated.
        let d = 20;
        let data: Vec<f32> = (0..500 * d)
            .map(|i| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (z * (1.0 + (d - i % d) as f64)) as f32
            })
            .collect();
        let m = EmbeddingMatrix::new(d, data, (0..500).map(|i| i.to_string()).collect()).unwrap();
        let exact = fit_pca_with(&m, 3, PcaSolver::Exact).unwrap();
        let sub = fit_pca_with(&m, 3, PcaSolver::Subspace { iterations: 200 }).unwrap();
        for i in 0..3 {
            let rel = (exact.explained_variance()[i] - sub.explained_variance()[i]).abs()
                / exact.explained_variance()[i];
            assert!(rel < 1e-6, "{rel}");
            let dot: f64 = exact
                .component(i)
                .iter()
                .zip(sub.component(i))
                .map(|(a, b)| a * b)
                .sum();
            assert!((dot.abs() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn degenerate_input_gives_zero_variance() {
        let m = EmbeddingMatrix::new(3, vec![1.0; 12], (0..4).map(|i| i.to_string()).collect())
            .unwrap();
        let p = fit_pca(&m, 2).unwrap();
        assert!(p.explained_variance().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn range_errors() {
        let m = random_matrix(5, 3, 0);
        assert!(fit_pca(&m, 0).is_err());
        assert!(fit_pca(&m, 4).is_err());
        assert!(fit_pca(&random_matrix(1, 3, 0), 1).is_err());
    }

    #[test]
    fn file_round_trip() {
        let p = fit_pca(&random_matrix(30, 4, 8), 2).unwrap();
        let bytes = p.to_bytes();
        assert_eq!(PcaModel::from_bytes(&bytes).unwrap(), p);
        assert!(PcaModel::from_bytes(&bytes[..bytes.len() - 2]).is_err());
    }
}
