//! Representation-geometry metrics over labeled embeddings.
//!
//! Distances are Euclidean. Every sum runs over values sorted first, so a
//! metric does not depend on row order.
//!
//! * intra: mean over manifolds of the mean member-to-centroid distance
//! * inter: mean pairwise distance between manifold centroids
//! * spread: mean over manifolds of the mean squared member-to-centroid distance
//! * purity: share of rows whose nearest language prototype is their own language

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use crate::anchors::AnchorSet;
use crate::codec::topk_anchors;
use crate::corpus::{dot, l2_norm, Corpus, EmbeddingMatrix, Lang, RowKey};
use crate::error::{EcrError, Result};
use crate::factor::FactorCode;
use crate::retrieval::{fit_pca, PcaModel};

/// Sum that is independent of the order of `values`.
fn sorted_sum(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

fn mean_of(values: Vec<f64>) -> f64 {
    let n = values.len() as f64;
    sorted_sum(values) / n
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn column_mean<R: AsRef<[f64]>>(rows: &[&R], d: usize) -> Vec<f64> {
    (0..d)
        .map(|j| mean_of(rows.iter().map(|r| r.as_ref()[j]).collect()))
        .collect()
}

pub fn rows_f64(m: &EmbeddingMatrix) -> Vec<Vec<f64>> {
    (0..m.n()).map(|i| m.row_f64(i)).collect()
}

/// Where a partition's labels came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum PartitionSource {
    /// Gold labels of one factor.
    Labels(FactorCode),
    /// Nearest anchor of each row.
    Anchors,
    Custom,
}

impl fmt::Display for PartitionSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PartitionSource::Labels(c) => write!(f, "labels:{c}"),
            PartitionSource::Anchors => f.write_str("anchors"),
            PartitionSource::Custom => f.write_str("custom"),
        }
    }
}

/// Assignment of every row to exactly one manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldPartition {
    names: Vec<String>,
    assignment: Vec<usize>,
    source: PartitionSource,
}

impl ManifoldPartition {
    /// Manifolds are the distinct labels, sorted.
    pub fn from_labels<S: AsRef<str>>(labels: &[S], source: PartitionSource) -> Self {
        let names: Vec<String> = labels
            .iter()
            .map(|l| l.as_ref().to_string())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let assignment = labels
            .iter()
            .map(|l| {
                names
                    .binary_search_by(|n| n.as_str().cmp(l.as_ref()))
                    .expect("label present")
            })
            .collect();
        Self {
            names,
            assignment,
            source,
        }
    }

    /// Partition by the gold labels of `factor`.
    pub fn from_corpus(corpus: &Corpus, ids: &[String], factor: FactorCode) -> Result<Self> {
        let labels = corpus.row_labels(ids, factor)?;
        Ok(Self::from_labels(&labels, PartitionSource::Labels(factor)))
    }

    /// Partition by each row's top-1 anchor.
    pub fn from_anchors(embeddings: &EmbeddingMatrix, anchors: &AnchorSet) -> Result<Self> {
        let labels = (0..embeddings.n())
            .map(|i| Ok(anchors.anchor_name(topk_anchors(&embeddings.row_f64(i), anchors, 1)?[0])))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_labels(&labels, PartitionSource::Anchors))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn source(&self) -> &PartitionSource {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    fn members<'a, R>(&self, rows: &'a [R], m: usize) -> Vec<&'a R> {
        self.assignment
            .iter()
            .zip(rows)
            .filter(|(&a, _)| a == m)
            .map(|(_, r)| r)
            .collect()
    }

    fn check<R: AsRef<[f64]>>(&self, rows: &[R]) -> Result<usize> {
        if rows.len() != self.assignment.len() {
            return Err(EcrError::invalid(format!(
                "partition covers {} rows, embeddings have {}",
                self.assignment.len(),
                rows.len()
            )));
        }
        let d = rows.first().map_or(0, |r| r.as_ref().len());
        let mut counts = vec![0usize; self.names.len()];
        for &a in &self.assignment {
            counts[a] += 1;
        }
        if let Some(m) = counts.iter().position(|&c| c == 0) {
            return Err(EcrError::invalid(format!(
                "manifold {} is empty",
                self.names[m]
            )));
        }
        if self.names.is_empty() {
            return Err(EcrError::invalid("partition has no manifolds"));
        }
        Ok(d)
    }
}

/// Centroid of each manifold, in `names` order.
pub fn centroids<R: AsRef<[f64]>>(rows: &[R], p: &ManifoldPartition) -> Result<Vec<Vec<f64>>> {
    let d = p.check(rows)?;
    Ok((0..p.names.len())
        .map(|m| column_mean(&p.members(rows, m), d))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifoldStats {
    pub name: String,
    pub size: usize,
    pub mean_distance: f64,
    pub variance: f64,
}

fn manifold_stats<R: AsRef<[f64]>>(
    rows: &[R],
    p: &ManifoldPartition,
) -> Result<(Vec<Vec<f64>>, Vec<ManifoldStats>)> {
    let cents = centroids(rows, p)?;
    let stats = cents
        .iter()
        .enumerate()
        .map(|(m, c)| {
            let members = p.members(rows, m);
            let ds: Vec<f64> = members.iter().map(|r| dist(r.as_ref(), c)).collect();
            ManifoldStats {
                name: p.names[m].clone(),
                size: members.len(),
                variance: mean_of(ds.iter().map(|x| x * x).collect()),
                mean_distance: mean_of(ds),
            }
        })
        .collect();
    Ok((cents, stats))
}

pub fn intra_compactness<R: AsRef<[f64]>>(rows: &[R], p: &ManifoldPartition) -> Result<f64> {
    let (_, stats) = manifold_stats(rows, p)?;
    Ok(mean_of(stats.iter().map(|s| s.mean_distance).collect()))
}

fn pairwise_mean(cents: &[Vec<f64>]) -> Result<f64> {
    if cents.len() < 2 {
        return Err(EcrError::invalid(
            "inter-manifold separation needs at least 2 manifolds",
        ));
    }
    let mut ds = Vec::new();
    for i in 0..cents.len() {
        for j in i + 1..cents.len() {
            ds.push(dist(&cents[i], &cents[j]));
        }
    }
    Ok(mean_of(ds))
}

pub fn inter_separation<R: AsRef<[f64]>>(rows: &[R], p: &ManifoldPartition) -> Result<f64> {
    pairwise_mean(&centroids(rows, p)?)
}

pub fn geometry_ratio(intra: f64, inter: f64) -> Result<f64> {
    if !(inter > 0.0) {
        return Err(EcrError::domain(format!(
            "geometry ratio needs inter > 0, got {inter}"
        )));
    }
    Ok(intra / inter)
}

pub fn spread<R: AsRef<[f64]>>(rows: &[R], p: &ManifoldPartition) -> Result<f64> {
    let (_, stats) = manifold_stats(rows, p)?;
    Ok(mean_of(stats.iter().map(|s| s.variance).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeometryReport {
    pub source: String,
    pub intra: f64,
    pub inter: f64,
    pub ratio: f64,
    pub spread: f64,
    pub manifolds: Vec<ManifoldStats>,
}

impl GeometryReport {
    pub fn compute<R: AsRef<[f64]>>(rows: &[R], p: &ManifoldPartition) -> Result<Self> {
        let (cents, manifolds) = manifold_stats(rows, p)?;
        let intra = mean_of(manifolds.iter().map(|s| s.mean_distance).collect());
        let spread = mean_of(manifolds.iter().map(|s| s.variance).collect());
        let inter = pairwise_mean(&cents)?;
        Ok(Self {
            source: p.source.to_string(),
            intra,
            inter,
            ratio: geometry_ratio(intra, inter)?,
            spread,
            manifolds,
        })
    }

    /// Tab-separated, one manifold per line after the summary.
    pub fn to_tsv(&self) -> String {
        let mut s = format!("# partition\t{}\n", self.source);
        s += "metric\tvalue\n";
        for (k, v) in [
            ("intra", self.intra),
            ("inter", self.inter),
            ("ratio", self.ratio),
            ("spread", self.spread),
        ] {
            s += &format!("{k}\t{v:.9}\n");
        }
        s += "manifold\tsize\tmean_distance\tvariance\n";
        for m in &self.manifolds {
            s += &format!(
                "{}\t{}\t{:.9}\t{:.9}\n",
                m.name, m.size, m.mean_distance, m.variance
            );
        }
        s
    }
}

/// Mean embedding of each language, keyed by label.
pub fn language_prototypes<R: AsRef<[f64]>, S: AsRef<str>>(
    rows: &[R],
    labels: &[S],
) -> Result<BTreeMap<String, Vec<f64>>> {
    if rows.len() != labels.len() {
        return Err(EcrError::invalid(format!(
            "{} rows but {} labels",
            rows.len(),
            labels.len()
        )));
    }
    if rows.is_empty() {
        return Err(EcrError::invalid("no rows to build prototypes from"));
    }
    let p = ManifoldPartition::from_labels(labels, PartitionSource::Custom);
    let cents = centroids(rows, &p)?;
    Ok(p.names.into_iter().zip(cents).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PurityReport {
    pub per_language: BTreeMap<String, f64>,
    pub overall: f64,
    /// Predicted language of every row.
    pub assignments: Vec<String>,
}

/// Nearest-prototype language assignment; ties go to the lexicographically first label.
pub fn purity<R: AsRef<[f64]>, S: AsRef<str>>(rows: &[R], labels: &[S]) -> Result<PurityReport> {
    let protos = language_prototypes(rows, labels)?;
    if protos.len() < 2 {
        return Err(EcrError::invalid("purity needs at least 2 languages"));
    }
    let assignments: Vec<String> = rows
        .iter()
        .map(|r| {
            let mut best: Option<(&String, f64)> = None;
            for (name, mu) in &protos {
                let d = dist(r.as_ref(), mu);
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((name, d));
                }
            }
            best.expect("prototypes non-empty").0.clone()
        })
        .collect();
    let mut hits: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (a, l) in assignments.iter().zip(labels) {
        let e = hits.entry(l.as_ref().to_string()).or_default();
        e.1 += 1;
        if a == l.as_ref() {
            e.0 += 1;
        }
    }
    let correct: usize = hits.values().map(|h| h.0).sum();
    Ok(PurityReport {
        per_language: hits
            .into_iter()
            .map(|(l, (c, n))| (l, c as f64 / n as f64))
            .collect(),
        overall: correct as f64 / rows.len() as f64,
        assignments,
    })
}

/// PCA maps taking teacher and student embeddings to a common dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedSpace {
    pub teacher: PcaModel,
    pub student: PcaModel,
}

impl SharedSpace {
    pub fn fit(teacher: &EmbeddingMatrix, student: &EmbeddingMatrix, r: usize) -> Result<Self> {
        Ok(Self {
            teacher: fit_pca(teacher, r)?,
            student: fit_pca(student, r)?,
        })
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let denom = l2_norm(a) * l2_norm(b);
    if denom > 0.0 {
        dot(a, b) / denom
    } else {
        0.0
    }
}

/// Mean teacher/student cosine per language, pairing rows by id.
///
/// `languages` is aligned with the teacher rows. Unequal dimensions need a `map`.
pub fn teacher_similarity<S: AsRef<str>>(
    teacher: &EmbeddingMatrix,
    student: &EmbeddingMatrix,
    languages: &[S],
    map: Option<&SharedSpace>,
) -> Result<BTreeMap<String, f64>> {
    if languages.len() != teacher.n() {
        return Err(EcrError::invalid(
            "language labels must align with teacher rows",
        ));
    }
    if map.is_none() && teacher.d() != student.d() {
        return Err(EcrError::Dimension {
            expected: teacher.d(),
            found: student.d(),
        });
    }
    let mut by_lang: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (i, id) in teacher.ids().iter().enumerate() {
        let j = student
            .position(id)
            .ok_or_else(|| EcrError::invalid(format!("teacher row {id} has no student pair")))?;
        let (t, s) = match map {
            Some(m) => (
                m.teacher.project(&teacher.row_f64(i))?,
                m.student.project(&student.row_f64(j))?,
            ),
            None => (teacher.row_f64(i), student.row_f64(j)),
        };
        by_lang
            .entry(languages[i].as_ref().to_string())
            .or_default()
            .push(cosine(&t, &s));
    }
    Ok(by_lang.into_iter().map(|(l, v)| (l, mean_of(v))).collect())
}

/// |a ∩ b| / |a ∪ b|, with two empty sets counting as identical.
pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let a: BTreeSet<_> = a.iter().collect();
    let b: BTreeSet<_> = b.iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SelectionAgreement {
    /// Share of samples whose selections agree exactly (top-1, or the full subset).
    pub exact: f64,
    pub mean_jaccard: f64,
}

/// Teacher/student agreement on per-sample anchor selections, ranked best first.
pub fn retrieval_consistency(
    teacher: &BTreeMap<String, Vec<usize>>,
    student: &BTreeMap<String, Vec<usize>>,
) -> Result<SelectionAgreement> {
    if !teacher.keys().eq(student.keys()) {
        return Err(EcrError::invalid(
            "teacher and student selections cover different ids",
        ));
    }
    if teacher.is_empty() {
        return Err(EcrError::invalid("no selections to compare"));
    }
    let mut top1 = 0usize;
    let mut jac = Vec::with_capacity(teacher.len());
    for (t, s) in teacher.values().zip(student.values()) {
        if !t.is_empty() && t.first() == s.first() {
            top1 += 1;
        }
        jac.push(jaccard(t, s));
    }
    Ok(SelectionAgreement {
        exact: top1 as f64 / teacher.len() as f64,
        mean_jaccard: mean_of(jac),
    })
}

/// Agreement of the three language variants of each record.
///
/// Keys are row ids of the form `dialog#lang`; every dialog needs all three.
pub fn crosslingual_consistency(
    selections: &BTreeMap<String, Vec<usize>>,
) -> Result<SelectionAgreement> {
    let mut dialogs: BTreeMap<String, [Option<&Vec<usize>>; 3]> = BTreeMap::new();
    for (id, sel) in selections {
        let key = RowKey::parse(id)?;
        let lang = key
            .lang
            .ok_or_else(|| EcrError::invalid(format!("row id {id} has no language suffix")))?;
        dialogs.entry(key.dialog_id).or_default()[lang.index()] = Some(sel);
    }
    if dialogs.is_empty() {
        return Err(EcrError::invalid("no records to compare"));
    }
    let mut same = 0usize;
    let mut jac = Vec::new();
    for (dialog, variants) in &dialogs {
        let mut sets = Vec::with_capacity(3);
        for lang in Lang::ALL {
            let sel = variants[lang.index()].ok_or_else(|| {
                EcrError::invalid(format!("record {dialog} lacks its {lang} variant"))
            })?;
            sets.push(sel.iter().copied().collect::<BTreeSet<usize>>());
        }
        if sets[0] == sets[1] && sets[1] == sets[2] {
            same += 1;
        }
        let v: Vec<Vec<usize>> = sets.iter().map(|s| s.iter().copied().collect()).collect();
        jac.push((jaccard(&v[0], &v[1]) + jaccard(&v[0], &v[2]) + jaccard(&v[1], &v[2])) / 3.0);
    }
    Ok(SelectionAgreement {
        exact: same as f64 / dialogs.len() as f64,
        mean_jaccard: mean_of(jac),
    })
}

/// Top-k anchor selection of every row, keyed by row id.
pub fn anchor_selections(
    embeddings: &EmbeddingMatrix,
    anchors: &AnchorSet,
    k: usize,
) -> Result<BTreeMap<String, Vec<usize>>> {
    (0..embeddings.n())
        .map(|i| {
            Ok((
                embeddings.ids()[i].clone(),
                topk_anchors(&embeddings.row_f64(i), anchors, k)?,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    fn part(labels: &[&str]) -> ManifoldPartition {
        ManifoldPartition::from_labels(labels, PartitionSource::Custom)
    }

    #[test]
    fn analytic_examples() {
        let same = vec![vec![1.0, 2.0]; 4];
        let p = part(&["a", "a", "b", "b"]);
        assert_eq!(intra_compactness(&same, &p).unwrap(), 0.0);
        assert_eq!(spread(&same, &p).unwrap(), 0.0);

        let two = vec![vec![0.0, 0.0], vec![2.0, 0.0]];
        let one = part(&["a", "a"]);
        assert_eq!(intra_compactness(&two, &one).unwrap(), 1.0);
        assert_eq!(spread(&two, &one).unwrap(), 1.0);
        assert!(inter_separation(&two, &one).is_err());

        let apart = vec![vec![0.0, 0.0], vec![3.0, 4.0]];
        assert_eq!(inter_separation(&apart, &part(&["a", "b"])).unwrap(), 5.0);

        let line = vec![vec![0.0], vec![1.0], vec![2.0]];
        let r = inter_separation(&line, &part(&["a", "b", "c"])).unwrap();
        assert!((r - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ratio_examples() {
        assert!((geometry_ratio(39.66, 41.91).unwrap() - 0.946).abs() < 1e-3);
        assert!((geometry_ratio(42.51, 43.54).unwrap() - 0.976).abs() < 1e-3);
        assert_eq!(geometry_ratio(2.5, 2.5).unwrap(), 1.0);
        assert!(geometry_ratio(1.0, 0.0).is_err());
    }

    #[test]
    fn empty_manifold_and_shape_errors() {
        let rows = vec![vec![0.0]; 3];
        assert!(intra_compactness(&rows, &part(&["a", "a"])).is_err());
        let mut p = part(&["a", "b", "b"]);
        p.assignment[0] = 1;
        assert!(spread(&rows, &p).is_err());
    }

    #[test]
    fn prototypes_single_sample_and_permutation() {
        let rows = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 7.0]];
        let protos = language_prototypes(&rows, &["en", "zh", "en"]).unwrap();
        assert_eq!(protos["zh"], vec![3.0, 4.0]);
        let permuted = language_prototypes(
            &[rows[2].clone(), rows[1].clone(), rows[0].clone()],
            &["en", "zh", "en"],
        )
        .unwrap();
        assert_eq!(protos, permuted);
        assert!(language_prototypes(&rows, &["en"]).is_err());
    }

    #[test]
    fn purity_hand_traced() {
        // mu_a = (2.25, 0), mu_b = (6, 0); (4.5, 0) sits 2.25 from mu_a and 1.5 from mu_b.
        let rows = vec![
            vec![0.0, 0.0],
            vec![4.5, 0.0],
            vec![5.0, 0.0],
            vec![7.0, 0.0],
        ];
        let r = purity(&rows, &["a", "a", "b", "b"]).unwrap();
        assert_eq!(r.per_language["a"], 0.5);
        assert_eq!(r.per_language["b"], 1.0);
        assert_eq!(r.overall, 0.75);
        assert_eq!(r.assignments, vec!["a", "b", "b", "b"]);

        // mu_b = 2, mu_a = 6: the row at 4 is equidistant.
        let tie = vec![vec![0.0], vec![4.0], vec![4.0], vec![8.0]];
        assert_eq!(
            purity(&tie, &["b", "b", "a", "a"]).unwrap().assignments[1],
            "a"
        );
        assert!(purity(&rows, &["a", "a", "a", "a"]).is_err());
    }

    #[test]
    fn purity_separated_clusters() {
        let mut rng = seeded(3);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (l, c) in [("en", 0.0), ("zh", 20.0), ("hi", 40.0)] {
            for _ in 0..30 {
                rows.push(vec![c + rng.random::<f64>(), rng.random::<f64>()]);
                labels.push(l);
            }
        }
        let r = purity(&rows, &labels).unwrap();
        assert!(r.per_language.values().all(|&p| p == 1.0));
    }

    fn matrix(rows: &[Vec<f64>], ids: &[&str]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(
            rows[0].len(),
            rows,
            ids.iter().map(|s| s.to_string()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn teacher_similarity_examples() {
        let t = matrix(&[vec![1.0, 2.0], vec![-3.0, 1.0]], &["x#en", "x#zh"]);
        let neg = matrix(&[vec![3.0, -1.0], vec![-1.0, -2.0]], &["x#zh", "x#en"]);
        let langs = ["en", "zh"];
        let same = teacher_similarity(&t, &t, &langs, None).unwrap();
        assert!(same.values().all(|&v| (v - 1.0).abs() < 1e-12));
        let opp = teacher_similarity(&t, &neg, &langs, None).unwrap();
        assert!(opp.values().all(|&v| (v + 1.0).abs() < 1e-12));

        let wide = matrix(&[vec![1.0, 2.0, 3.0]], &["x#en"]);
        assert!(teacher_similarity(&t, &wide, &langs, None).is_err());
        let unpaired = matrix(&[vec![1.0, 2.0]], &["y#en"]);
        assert!(teacher_similarity(&t, &unpaired, &langs, None).is_err());
    }

    #[test]
    fn teacher_similarity_scalar_oracle() {
        let mut rng = seeded(11);
        let n = 40;
        let rt: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let rs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let ids: Vec<String> = (0..n).map(|i| format!("r{i}")).collect();
        let idr: Vec<&str> = ids.iter().map(|s| s.as_str()).collect();
        let t = matrix(&rt, &idr);
        let s = matrix(&rs, &idr);
        let langs: Vec<&str> = (0..n)
            .map(|i| if i % 2 == 0 { "en" } else { "hi" })
            .collect();
        let got = teacher_similarity(&t, &s, &langs, None).unwrap();
        for (parity, lang) in [(0, "en"), (1, "hi")] {
            let mut total = 0.0;
            let mut count = 0.0;
            for i in (parity..n).step_by(2) {
                let (a, b) = (t.row_f64(i), s.row_f64(i));
                let mut ab = 0.0;
                let mut aa = 0.0;
                let mut bb = 0.0;
                for j in 0..5 {
                    ab += a[j] * b[j];
                    aa += a[j] * a[j];
                    bb += b[j] * b[j];
                }
                total += ab / (aa.sqrt() * bb.sqrt());
                count += 1.0;
            }
            assert!((got[lang] - total / count).abs() < 1e-9);
        }
    }

    #[test]
    fn shared_space_handles_unequal_dims() {
        let mut rng = seeded(2);
        let ids: Vec<String> = (0..30).map(|i| format!("r{i}")).collect();
        let t =
            EmbeddingMatrix::new(6, (0..180).map(|_| rng.random()).collect(), ids.clone()).unwrap();
        let s = EmbeddingMatrix::new(4, (0..120).map(|_| rng.random()).collect(), ids).unwrap();
        let langs = vec!["en"; 30];
        let map = SharedSpace::fit(&t, &s, 3).unwrap();
        let r = teacher_similarity(&t, &s, &langs, Some(&map)).unwrap();
        assert!(r["en"].abs() <= 1.0);
    }

    fn sel(pairs: &[(&str, &[usize])]) -> BTreeMap<String, Vec<usize>> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_vec()))
            .collect()
    }

    #[test]
    fn retrieval_consistency_examples() {
        let a = sel(&[("x", &[1, 2]), ("y", &[3, 4])]);
        let same = retrieval_consistency(&a, &a).unwrap();
        assert_eq!((same.exact, same.mean_jaccard), (1.0, 1.0));
        let b = sel(&[("x", &[5, 6]), ("y", &[7, 8])]);
        let none = retrieval_consistency(&a, &b).unwrap();
        assert_eq!((none.exact, none.mean_jaccard), (0.0, 0.0));

        let t: BTreeMap<String, Vec<usize>> = (0..10).map(|i| (format!("s{i}"), vec![i])).collect();
        let s: BTreeMap<String, Vec<usize>> = (0..10)
            .map(|i| (format!("s{i}"), vec![if i < 5 { i } else { 99 }]))
            .collect();
        assert_eq!(retrieval_consistency(&t, &s).unwrap().exact, 0.5);
        assert!(retrieval_consistency(&a, &sel(&[("x", &[1])])).is_err());
    }

    #[test]
    fn crosslingual_examples() {
        let mut m = BTreeMap::new();
        for d in 0..4 {
            for l in ["en", "zh", "hi"] {
                let s = if d == 3 && l == "hi" {
                    vec![0, 9]
                } else {
                    vec![0, 1]
                };
                m.insert(format!("d{d}#{l}"), s);
            }
        }
        let r = crosslingual_consistency(&m).unwrap();
        assert_eq!(r.exact, 0.75);
        // The odd record scores (1 + 1/3 + 1/3) / 3 = 5/9.
        assert!((r.mean_jaccard - (3.0 + 5.0 / 9.0) / 4.0).abs() < 1e-12);
        m.remove("d0#zh");
        assert!(crosslingual_consistency(&m).is_err());
        assert!(crosslingual_consistency(&BTreeMap::new()).is_err());
    }

    fn random_instance(seed: u64) -> (Vec<Vec<f64>>, ManifoldPartition) {
        let mut rng = seeded(seed);
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|_| (0..4).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        let labels: Vec<String> = (0..60).map(|i| format!("m{}", i % 3)).collect();
        (
            rows,
            ManifoldPartition::from_labels(&labels, PartitionSource::Custom),
        )
    }

    proptest! {
        #[test]
        fn translation_and_scale(seed in any::<u64>(), shift in -50.0f64..50.0, alpha in -4.0f64..4.0) {
            prop_assume!(alpha.abs() > 0.1);
            let (rows, p) = random_instance(seed);
            let base = GeometryReport::compute(&rows, &p).unwrap();
            let moved: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| x + shift).collect()).collect();
            let m = GeometryReport::compute(&moved, &p).unwrap();
            prop_assert!((m.intra - base.intra).abs() < 1e-6);
            prop_assert!((m.inter - base.inter).abs() < 1e-6);
            prop_assert!((m.spread - base.spread).abs() < 1e-6);
            let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| x * alpha).collect()).collect();
            let s = GeometryReport::compute(&scaled, &p).unwrap();
            prop_assert!((s.intra - alpha.abs() * base.intra).abs() < 1e-6);
            prop_assert!((s.inter - alpha.abs() * base.inter).abs() < 1e-6);
            prop_assert!((s.spread - alpha * alpha * base.spread).abs() < 1e-6);
            prop_assert!((s.ratio - base.ratio).abs() < 1e-9);
        }

        #[test]
        fn metrics_ignore_row_order(seed in any::<u64>()) {
            let (rows, p) = random_instance(seed);
            let labels: Vec<String> = p.assignment().iter().map(|&a| p.names()[a].clone()).collect();
            let mut order: Vec<usize> = (0..rows.len()).collect();
            order.reverse();
            let r2: Vec<Vec<f64>> = order.iter().map(|&i| rows[i].clone()).collect();
            let l2: Vec<String> = order.iter().map(|&i| labels[i].clone()).collect();
            let p2 = ManifoldPartition::from_labels(&l2, PartitionSource::Custom);
            prop_assert_eq!(GeometryReport::compute(&rows, &p).unwrap(), GeometryReport::compute(&r2, &p2).unwrap());
        }

        #[test]
        fn rates_in_unit_interval(seed in any::<u64>()) {
            let mut rng = seeded(seed);
            let mut a = BTreeMap::new();
            let mut b = BTreeMap::new();
            for i in 0..20 {
                for l in ["en", "zh", "hi"] {
                    let pick = |rng: &mut crate::rng::SeededRng| (0..3).map(|_| rng.random_range(0..6)).collect::<Vec<usize>>();
                    a.insert(format!("d{i}#{l}"), pick(&mut rng));
                    b.insert(format!("d{i}#{l}"), pick(&mut rng));
                }
            }
            for r in [retrieval_consistency(&a, &b).unwrap(), crosslingual_consistency(&a).unwrap()] {
                prop_assert!((0.0..=1.0).contains(&r.exact));
                prop_assert!((0.0..=1.0).contains(&r.mean_jaccard));
            }
            let own = retrieval_consistency(&a, &a).unwrap();
            prop_assert_eq!((own.exact, own.mean_jaccard), (1.0, 1.0));
        }
    }
}
