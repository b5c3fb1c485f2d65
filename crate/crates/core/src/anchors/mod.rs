//! Teacher-derived anchor coordinate system.
//!
//! An [`AnchorSet`] is an ordered list of [`FactorGroup`]s, one per semantic
//! factor, in canonical order `T, L, E, I, P`. Anchor `j` of the whole set
//! (its *global index*) is anchor `j - offset(f)` of factor group `f`. Global
//! indices define the affinity layout and the control-token vocabulary.

mod io;
mod kmeans;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{normalize, Corpus, EmbeddingMatrix};
use crate::error::{EcrError, Result};
use crate::factor::FactorCode;

pub use io::{load_anchors, load_anchors_expecting, save_anchors};
pub use kmeans::{kmeans, KMeansFit, KMeansParams};

/// How a factor group was derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Derivation {
    /// Mean of the rows carrying each label.
    Label,
    /// Seeded k-means over all rows.
    KMeans,
}

impl Derivation {
    fn to_u8(self) -> u8 {
        match self {
            Derivation::Label => 0,
            Derivation::KMeans => 1,
        }
    }

    fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Derivation::Label),
            1 => Ok(Derivation::KMeans),
            _ => Err(EcrError::Format(format!("unknown derivation {v}"))),
        }
    }
}

/// Anchors for one semantic factor.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorGroup {
    code: FactorCode,
    label_names: Option<Vec<String>>,
    d: usize,
    anchors: Vec<f64>,
    derivation: Derivation,
}

impl FactorGroup {
    /// `anchors` is row-major `k × d`.
    pub fn new(
        code: FactorCode,
        d: usize,
        anchors: Vec<f64>,
        label_names: Option<Vec<String>>,
        derivation: Derivation,
    ) -> Result<Self> {
        if d == 0 || anchors.is_empty() || !anchors.len().is_multiple_of(d) {
            return Err(EcrError::invalid(format!(
                "factor {code}: {} values do not form a non-empty k×{d} matrix",
                anchors.len()
            )));
        }
        let k = anchors.len() / d;
        if let Some(names) = &label_names {
            if names.len() != k {
                return Err(EcrError::invalid(format!(
                    "factor {code}: {} label names for {k} anchors",
                    names.len()
                )));
            }
        }
        if anchors.iter().any(|v| !v.is_finite()) {
            return Err(EcrError::domain(format!(
                "factor {code}: non-finite anchor value"
            )));
        }
        Ok(Self {
            code,
            label_names,
            d,
            anchors,
            derivation,
        })
    }

    pub fn code(&self) -> FactorCode {
        self.code
    }

    pub fn len(&self) -> usize {
        self.anchors.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn anchor(&self, i: usize) -> &[f64] {
        &self.anchors[i * self.d..(i + 1) * self.d]
    }

    pub fn values(&self) -> &[f64] {
        &self.anchors
    }

    pub fn label_names(&self) -> Option<&[String]> {
        self.label_names.as_deref()
    }

    pub fn derivation(&self) -> Derivation {
        self.derivation
    }
}

/// Derivation descriptor stored alongside the anchors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
}

/// The fixed anchor coordinate system. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    groups: Vec<FactorGroup>,
    d: usize,
    provenance: Provenance,
    offsets: Vec<usize>,
    normalized: Vec<f64>,
}

impl AnchorSet {
    /// Groups are reordered canonically; codes must be unique.
    pub fn new(mut groups: Vec<FactorGroup>, provenance: Provenance) -> Result<Self> {
        if groups.is_empty() {
            return Err(EcrError::invalid(
                "anchor set needs at least one factor group",
            ));
        }
        groups.sort_by_key(|g| g.code);
        if groups.windows(2).any(|w| w[0].code == w[1].code) {
            return Err(EcrError::invalid("duplicate factor code in anchor set"));
        }
        let d = groups[0].d;
        if let Some(g) = groups.iter().find(|g| g.d != d) {
            return Err(EcrError::Dimension {
                expected: d,
                found: g.d,
            });
        }
        let mut offsets = Vec::with_capacity(groups.len());
        let mut normalized = Vec::new();
        let mut total = 0;
        for g in &groups {
            offsets.push(total);
            total += g.len();
            for i in 0..g.len() {
                let unit = normalize(g.anchor(i)).map_err(|_| {
                    EcrError::domain(format!("anchor {}{} has zero norm", g.code, i))
                })?;
                normalized.extend(unit);
            }
        }
        Ok(Self {
            groups,
            d,
            provenance,
            offsets,
            normalized,
        })
    }

    /// Total anchor count K.
    pub fn k(&self) -> usize {
        self.normalized.len() / self.d
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn groups(&self) -> &[FactorGroup] {
        &self.groups
    }

    pub fn group(&self, code: FactorCode) -> Option<&FactorGroup> {
        self.groups.iter().find(|g| g.code == code)
    }

    pub fn factors(&self) -> Vec<FactorCode> {
        self.groups.iter().map(|g| g.code).collect()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Global index range of a group, by position in [`groups`](Self::groups).
    pub fn group_range(&self, pos: usize) -> std::ops::Range<usize> {
        let start = self.offsets[pos];
        start..start + self.groups[pos].len()
    }

    pub fn global_index(&self, code: FactorCode, local: usize) -> Option<usize> {
        let pos = self.groups.iter().position(|g| g.code == code)?;
        (local < self.groups[pos].len()).then(|| self.offsets[pos] + local)
    }

    /// Maps a global index to `(factor, local index)`.
    pub fn locate(&self, global: usize) -> Option<(FactorCode, usize)> {
        if global >= self.k() {
            return None;
        }
        let pos = self.offsets.partition_point(|&o| o <= global) - 1;
        Some((self.groups[pos].code, global - self.offsets[pos]))
    }

    pub fn anchor(&self, global: usize) -> &[f64] {
        let (code, local) = self.locate(global).expect("anchor index in range");
        self.group(code).expect("located group").anchor(local)
    }

    /// Unit-norm copy of a global anchor.
    pub fn normalized(&self, global: usize) -> &[f64] {
        &self.normalized[global * self.d..(global + 1) * self.d]
    }

    /// Human-readable name: the label when known, else `F<idx>`.
    pub fn anchor_name(&self, global: usize) -> String {
        let (code, local) = self.locate(global).expect("anchor index in range");
        match self.group(code).and_then(|g| g.label_names()) {
            Some(names) => format!("{code}:{}", names[local]),
            None => format!("{code}{local}"),
        }
    }

    /// The groups for `factors`, in canonical order. Errors on an unknown factor.
    pub fn subset(&self, factors: &[FactorCode]) -> Result<AnchorSet> {
        let wanted: BTreeSet<_> = factors.iter().copied().collect();
        let mut groups = Vec::new();
        for f in &wanted {
            let g = self
                .group(*f)
                .ok_or_else(|| EcrError::invalid(format!("anchor set has no factor {f}")))?;
            groups.push(g.clone());
        }
        AnchorSet::new(groups, self.provenance.clone())
    }

    /// CRC-32 of the serialized form.
    pub fn checksum(&self) -> u32 {
        crc32fast::hash(&self.to_bytes())
    }
}

/// Column-wise mean whose result does not depend on row order: each column's
/// values are summed in sorted order.
pub(crate) fn order_free_mean<'a, I>(rows: I, d: usize) -> Vec<f64>
where
    I: IntoIterator<Item = &'a [f32]>,
{
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); d];
    let mut n = 0usize;
    for r in rows {
        for (c, &v) in cols.iter_mut().zip(r) {
            c.push(v as f64);
        }
        n += 1;
    }
    cols.into_iter()
        .map(|mut c| {
            c.sort_by(f64::total_cmp);
            c.iter().sum::<f64>() / n as f64
        })
        .collect()
}

/// One anchor per distinct label, equal to the mean of that label's rows.
///
/// With an `inventory`, anchors follow inventory order and every inventory
/// label must have a row; otherwise labels are sorted.
pub fn label_centroids(
    embeddings: &EmbeddingMatrix,
    labels: &[String],
    code: FactorCode,
    inventory: Option<&[String]>,
) -> Result<FactorGroup> {
    if labels.len() != embeddings.n() {
        return Err(EcrError::Dimension {
            expected: embeddings.n(),
            found: labels.len(),
        });
    }
    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        members.entry(l.as_str()).or_default().push(i);
    }
    let names: Vec<String> = match inventory {
        Some(inv) => {
            if let Some(l) = members.keys().find(|l| !inv.iter().any(|x| x == *l)) {
                return Err(EcrError::invalid(format!(
                    "factor {code}: label `{l}` is not in the inventory"
                )));
            }
            inv.to_vec()
        }
        None => members.keys().map(|s| s.to_string()).collect(),
    };
    if names.is_empty() {
        return Err(EcrError::invalid(format!(
            "factor {code}: no labelled rows"
        )));
    }
    let d = embeddings.d();
    let mut anchors = Vec::with_capacity(names.len() * d);
    for name in &names {
        let rows = members.get(name.as_str()).ok_or_else(|| {
            EcrError::invalid(format!("factor {code}: empty label class `{name}`"))
        })?;
        anchors.extend(order_free_mean(rows.iter().map(|&r| embeddings.row(r)), d));
    }
    FactorGroup::new(code, d, anchors, Some(names), Derivation::Label)
}

/// Anchor derivation strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AnchorMode {
    /// Label centroids where the corpus labels the factor, k-means otherwise.
    #[default]
    Auto,
    Label,
    KMeans,
}

impl std::str::FromStr for AnchorMode {
    type Err = EcrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(AnchorMode::Auto),
            "label" => Ok(AnchorMode::Label),
            "kmeans" => Ok(AnchorMode::KMeans),
            _ => Err(EcrError::invalid(format!("unknown anchor mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AnchorParams {
    pub mode: AnchorMode,
    /// Clusters per factor in k-means mode.
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for AnchorParams {
    fn default() -> Self {
        Self {
            mode: AnchorMode::Auto,
            k: 8,
            seed: 0,
            max_iter: 100,
            tol: 1e-8,
        }
    }
}

/// One factor group per selected factor, in canonical order.
pub fn build_anchor_set(
    embeddings: &EmbeddingMatrix,
    corpus: Option<&Corpus>,
    selection: &[FactorCode],
    params: &AnchorParams,
) -> Result<AnchorSet> {
    let selection: BTreeSet<FactorCode> = selection.iter().copied().collect();
    if selection.is_empty() {
        return Err(EcrError::invalid("empty factor selection"));
    }
    let mut groups = Vec::with_capacity(selection.len());
    for factor in selection {
        let labelled = corpus.is_some() && factor.corpus_field().is_some();
        let use_labels = match params.mode {
            AnchorMode::Auto => labelled,
            AnchorMode::Label => {
                if !labelled {
                    return Err(EcrError::invalid(format!(
                        "factor {factor} has no corpus labels for label mode"
                    )));
                }
                true
            }
            AnchorMode::KMeans => false,
        };
        let group = if use_labels {
            let corpus = corpus.expect("checked above");
            let labels = corpus.row_labels(embeddings.ids(), factor)?;
            label_centroids(embeddings, &labels, factor, corpus.labels().labels(factor))?
        } else {
            let kp = KMeansParams {
                k: params.k,
                // Distinct stream per factor.
                seed: params.seed.wrapping_add(factor as u64),
                max_iter: params.max_iter,
                tol: params.tol,
            };
            kmeans(embeddings, &kp)?.into_group(factor)?
        };
        groups.push(group);
    }
    AnchorSet::new(groups, Provenance { seed: params.seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn matrix(rows: &[&[f32]]) -> EmbeddingMatrix {
        let d = rows[0].len();
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        let ids = (0..rows.len()).map(|i| format!("r{i}")).collect();
        EmbeddingMatrix::new(d, data, ids).unwrap()
    }

    #[test]
    fn label_centroids_basis() {
        let m = matrix(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let g = label_centroids(&m, &["A".into(), "B".into()], FactorCode::L, None).unwrap();
        assert_eq!(g.anchor(0), &[1.0, 0.0]);
        assert_eq!(g.anchor(1), &[0.0, 1.0]);
        assert_eq!(
            g.label_names().unwrap(),
            &["A".to_string(), "B".to_string()]
        );
    }

    #[test]
    fn label_centroids_identical_rows() {
        let m = matrix(&[&[0.25, -3.0], &[0.25, -3.0]]);
        let g = label_centroids(&m, &["A".into(), "A".into()], FactorCode::T, None).unwrap();
        assert_eq!(g.anchor(0), &[0.25, -3.0]);
    }

    #[test]
    fn label_centroids_brute_force_oracle() {
        let mut rng = seeded(11);
        let n = 50;
        let d = 6;
        let data: Vec<f32> = (0..n * d).map(|_| rng.random_range(-5.0..5.0)).collect();
        let ids = (0..n).map(|i| format!("r{i}")).collect();
        let m = EmbeddingMatrix::new(d, data, ids).unwrap();
        let labels: Vec<String> = (0..n).map(|i| ["x", "y", "z"][i % 3].to_string()).collect();
        let g = label_centroids(&m, &labels, FactorCode::E, None).unwrap();
        for (a, name) in ["x", "y", "z"].iter().enumerate() {
            let mut sum = vec![0.0f64; d];
            let mut count = 0.0;
            for i in 0..n {
                if labels[i] == *name {
                    for j in 0..d {
                        sum[j] += m.row(i)[j] as f64;
                    }
                    count += 1.0;
                }
            }
            for j in 0..d {
                assert!((g.anchor(a)[j] - sum[j] / count).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn label_centroids_is_permutation_invariant() {
        let mut rng = seeded(3);
        let n = 40;
        let d = 5;
        let data: Vec<f32> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ids: Vec<String> = (0..n).map(|i| format!("r{i}")).collect();
        let m = EmbeddingMatrix::new(d, data, ids).unwrap();
        let labels: Vec<String> = (0..n).map(|i| format!("c{}", i % 4)).collect();
        let g1 = label_centroids(&m, &labels, FactorCode::I, None).unwrap();

        let perm: Vec<usize> = (0..n).rev().collect();
        let m2 = m.select(&perm);
        let labels2: Vec<String> = perm.iter().map(|&i| labels[i].clone()).collect();
        let g2 = label_centroids(&m2, &labels2, FactorCode::I, None).unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn empty_label_class_is_an_error() {
        let m = matrix(&[&[1.0, 0.0]]);
        let inv = vec!["A".to_string(), "B".to_string()];
        assert!(label_centroids(&m, &["A".into()], FactorCode::L, Some(&inv)).is_err());
    }

    #[test]
    fn anchor_set_layout() {
        let l = FactorGroup::new(
            FactorCode::L,
            2,
            vec![1.0, 0.0, 0.0, 2.0],
            None,
            Derivation::Label,
        )
        .unwrap();
        let t =
            FactorGroup::new(FactorCode::T, 2, vec![3.0, 4.0], None, Derivation::Label).unwrap();
        let set = AnchorSet::new(vec![l, t], Provenance { seed: 0 }).unwrap();
        assert_eq!(set.factors(), vec![FactorCode::T, FactorCode::L]);
        assert_eq!(set.k(), 3);
        assert_eq!(set.locate(0), Some((FactorCode::T, 0)));
        assert_eq!(set.locate(2), Some((FactorCode::L, 1)));
        assert_eq!(set.locate(3), None);
        assert_eq!(set.global_index(FactorCode::L, 1), Some(2));
        assert_eq!(set.normalized(2), &[0.0, 1.0]);
        assert_eq!(set.normalized(0), &[0.6, 0.8]);
    }

    #[test]
    fn zero_anchor_rejected() {
        let g =
            FactorGroup::new(FactorCode::L, 2, vec![0.0, 0.0], None, Derivation::Label).unwrap();
        assert!(matches!(
            AnchorSet::new(vec![g], Provenance { seed: 0 }),
            Err(EcrError::Domain(_))
        ));
    }

    #[test]
    fn label_names_must_match_count() {
        assert!(FactorGroup::new(
            FactorCode::L,
            1,
            vec![1.0, 2.0],
            Some(vec!["a".into()]),
            Derivation::Label
        )
        .is_err());
    }
}
