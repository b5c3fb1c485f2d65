//! Multilingual corpus records, embedding matrices, and vector normalization.
//!
//! # Corpus file
//!
//! UTF-8, one JSON object per line. The first line is a header declaring the
//! label inventories:
//!
//! ```text
//! {"format":"ecr-corpus","version":1,"labels":{"task":[..],"language":[..],"emotion":[..],"intent":[..]}}
//! ```
//!
//! Every following non-blank line is one record with the fields `dialog_id`,
//! `task`, `language`, `emotion`, `intent`, `EN_Q`, `ZH_Q`, `HI_Q`, `EN_A`,
//! `ZH_A`, `HI_A`.
//!
//! # Embedding file
//!
//! | offset | size    | content                                   |
//! |--------|---------|-------------------------------------------|
//! | 0      | 4       | magic `ECRE`                              |
//! | 4      | 4       | version (`u32`, currently 1)              |
//! | 8      | 8       | `n` rows (`u64`)                          |
//! | 16     | 4       | `d` columns (`u32`)                       |
//! | 20     | 4·n·d   | row-major `f32` values                    |
//! | …      | …       | `n` ids, each `u32` byte length + UTF-8   |
//!
//! All integers and floats are little-endian.
//!
//! # Row ids
//!
//! An embedding row id is either a bare `dialog_id` or `dialog_id#lang` where
//! `lang` is one of `en`, `zh`, `hi`. The suffixed form names one language
//! variant of an aligned record and overrides the record's language label.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::binio::{self, ByteReader, ByteWriter};
use crate::error::{EcrError, Result};
use crate::factor::FactorCode;
use crate::rng::seeded;

/// One of the three aligned languages of a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Lang {
    En,
    Zh,
    Hi,
}

impl Lang {
    pub const ALL: [Lang; 3] = [Lang::En, Lang::Zh, Lang::Hi];

    pub fn code(self) -> &'static str {
        match self {
            Lang::En => "en",
            Lang::Zh => "zh",
            Lang::Hi => "hi",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Lang {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Lang {
    type Err = EcrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "en" => Ok(Lang::En),
            "zh" => Ok(Lang::Zh),
            "hi" => Ok(Lang::Hi),
            _ => Err(EcrError::invalid(format!("unknown language variant `{s}`"))),
        }
    }
}

/// One aligned multilingual training sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    #[serde(default)]
    pub dialog_id: String,
    #[serde(default)]
    pub task: String,
    #[serde(default)]
    pub language: String,
    #[serde(default)]
    pub emotion: String,
    #[serde(default)]
    pub intent: String,
    #[serde(rename = "EN_Q", default)]
    pub en_q: String,
    #[serde(rename = "ZH_Q", default)]
    pub zh_q: String,
    #[serde(rename = "HI_Q", default)]
    pub hi_q: String,
    #[serde(rename = "EN_A", default)]
    pub en_a: String,
    #[serde(rename = "ZH_A", default)]
    pub zh_a: String,
    #[serde(rename = "HI_A", default)]
    pub hi_a: String,
}

impl CorpusRecord {
    pub fn query(&self, lang: Lang) -> &str {
        match lang {
            Lang::En => &self.en_q,
            Lang::Zh => &self.zh_q,
            Lang::Hi => &self.hi_q,
        }
    }

    pub fn answer(&self, lang: Lang) -> &str {
        match lang {
            Lang::En => &self.en_a,
            Lang::Zh => &self.zh_a,
            Lang::Hi => &self.hi_a,
        }
    }

    /// Label for a factor; `None` for factors without a corpus field.
    pub fn label(&self, factor: FactorCode) -> Option<&str> {
        match factor {
            FactorCode::T => Some(&self.task),
            FactorCode::L => Some(&self.language),
            FactorCode::E => Some(&self.emotion),
            FactorCode::I => Some(&self.intent),
            FactorCode::P => None,
        }
    }

    fn check_fields(&self) -> std::result::Result<(), String> {
        let required: [(&str, &str); 8] = [
            ("dialog_id", &self.dialog_id),
            ("task", &self.task),
            ("language", &self.language),
            ("emotion", &self.emotion),
            ("intent", &self.intent),
            ("EN_Q", &self.en_q),
            ("ZH_Q", &self.zh_q),
            ("HI_Q", &self.hi_q),
        ];
        for (name, value) in required {
            if value.trim().is_empty() {
                return Err(format!("missing or empty field `{name}`"));
            }
        }
        Ok(())
    }
}

/// Finite label inventories declared in the corpus header.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelInventory {
    pub task: Vec<String>,
    pub language: Vec<String>,
    pub emotion: Vec<String>,
    pub intent: Vec<String>,
}

impl LabelInventory {
    pub fn labels(&self, factor: FactorCode) -> Option<&[String]> {
        match factor {
            FactorCode::T => Some(&self.task),
            FactorCode::L => Some(&self.language),
            FactorCode::E => Some(&self.emotion),
            FactorCode::I => Some(&self.intent),
            FactorCode::P => None,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusHeader {
    format: String,
    version: u32,
    labels: LabelInventory,
}

const CORPUS_FORMAT: &str = "ecr-corpus";
const CORPUS_VERSION: u32 = 1;

/// Per-factor label counts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusStats {
    pub records: usize,
    pub by_factor: BTreeMap<FactorCode, BTreeMap<String, usize>>,
}

impl CorpusStats {
    pub fn language_counts(&self) -> BTreeMap<String, usize> {
        self.by_factor
            .get(&FactorCode::L)
            .cloned()
            .unwrap_or_default()
    }
}

/// A validated, immutable corpus.
#[derive(Debug, Clone)]
pub struct Corpus {
    labels: LabelInventory,
    records: Vec<CorpusRecord>,
    index: HashMap<String, usize>,
}

impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.labels == other.labels && self.records == other.records
    }
}

impl Corpus {
    /// Validates invariants: unique ids, non-empty queries, labels in inventory.
    pub fn new(labels: LabelInventory, records: Vec<CorpusRecord>) -> Result<Self> {
        let sets: Vec<(FactorCode, HashSet<&str>)> =
            [FactorCode::T, FactorCode::L, FactorCode::E, FactorCode::I]
                .into_iter()
                .map(|f| {
                    let set = labels
                        .labels(f)
                        .unwrap_or_default()
                        .iter()
                        .map(String::as_str)
                        .collect();
                    (f, set)
                })
                .collect();
        let mut index = HashMap::with_capacity(records.len());
        for (i, rec) in records.iter().enumerate() {
            // Line numbers are 1-based and the header occupies line 1.
            let line = i + 2;
            rec.check_fields()
                .map_err(|message| EcrError::Validation { line, message })?;
            for (factor, set) in &sets {
                let value = rec.label(*factor).unwrap_or_default();
                if !set.contains(value) {
                    return Err(EcrError::Validation {
                        line,
                        message: format!(
                            "label `{value}` for `{}` not declared in header",
                            factor.corpus_field().unwrap_or_default()
                        ),
                    });
                }
            }
            if index.insert(rec.dialog_id.clone(), i).is_some() {
                return Err(EcrError::Validation {
                    line,
                    message: format!("duplicate dialog_id `{}`", rec.dialog_id),
                });
            }
        }
        Ok(Self {
            labels,
            records,
            index,
        })
    }

    pub fn labels(&self) -> &LabelInventory {
        &self.labels
    }

    pub fn records(&self) -> &[CorpusRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, dialog_id: &str) -> Option<&CorpusRecord> {
        self.index.get(dialog_id).map(|&i| &self.records[i])
    }

    pub fn stats(&self) -> CorpusStats {
        let mut stats = CorpusStats {
            records: self.records.len(),
            ..Default::default()
        };
        for factor in [FactorCode::T, FactorCode::L, FactorCode::E, FactorCode::I] {
            let counts = stats.by_factor.entry(factor).or_default();
            for rec in &self.records {
                *counts
                    .entry(rec.label(factor).unwrap_or_default().to_string())
                    .or_default() += 1;
            }
        }
        stats
    }

    /// A copy with records permuted by a seeded shuffle.
    pub fn shuffled(&self, seed: u64) -> Corpus {
        let mut records = self.records.clone();
        records.shuffle(&mut seeded(seed));
        Corpus::new(self.labels.clone(), records).expect("permutation preserves validity")
    }

    /// Resolves the factor label of every embedding row id.
    ///
    /// A `#lang` suffix on the id overrides the language label.
    pub fn row_labels(&self, ids: &[String], factor: FactorCode) -> Result<Vec<String>> {
        if factor == FactorCode::P {
            return Err(EcrError::invalid(
                "factor P has no corpus label; use kmeans mode",
            ));
        }
        ids.iter()
            .map(|id| {
                let key = RowKey::parse(id)?;
                let rec = self
                    .get(&key.dialog_id)
                    .ok_or_else(|| EcrError::invalid(format!("row id `{id}` not in corpus")))?;
                Ok(match (factor, key.lang) {
                    (FactorCode::L, Some(lang)) => lang.code().to_string(),
                    _ => rec.label(factor).unwrap_or_default().to_string(),
                })
            })
            .collect()
    }

    pub fn to_jsonl(&self) -> String {
        let header = CorpusHeader {
            format: CORPUS_FORMAT.to_string(),
            version: CORPUS_VERSION,
            labels: self.labels.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for rec in &self.records {
            out.push_str(&serde_json::to_string(rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let header: CorpusHeader = loop {
            match lines.next() {
                Some((_, l)) if l.trim().is_empty() => continue,
                Some((i, l)) => {
                    break serde_json::from_str(l).map_err(|e| EcrError::Parse {
                        line: i + 1,
                        message: format!("bad header: {e}"),
                    })?
                }
                None => {
                    return Err(EcrError::Parse {
                        line: 1,
                        message: "missing header line".into(),
                    })
                }
            }
        };
        if header.format != CORPUS_FORMAT {
            return Err(EcrError::Parse {
                line: 1,
                message: format!("unexpected format `{}`", header.format),
            });
        }
        if header.version != CORPUS_VERSION {
            return Err(EcrError::Version {
                found: header.version,
                expected: CORPUS_VERSION,
            });
        }
        let mut records = Vec::new();
        let mut line_of = Vec::new();
        for (i, l) in lines {
            if l.trim().is_empty() {
                continue;
            }
            let rec: CorpusRecord = serde_json::from_str(l).map_err(|e| EcrError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push(rec);
            line_of.push(i + 1);
        }
        // Re-map validation line numbers onto physical lines.
        Corpus::new(header.labels, records).map_err(|e| match e {
            EcrError::Validation { line, message } => EcrError::Validation {
                line: line_of[line - 2],
                message,
            },
            other => other,
        })
    }
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let text = std::fs::read_to_string(path).map_err(|e| EcrError::io(path, e))?;
    Corpus::parse(&text)
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    binio::write_atomic(path, corpus.to_jsonl().as_bytes())
}

/// Parsed embedding row id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowKey {
    pub dialog_id: String,
    pub lang: Option<Lang>,
}

impl RowKey {
    pub fn parse(id: &str) -> Result<Self> {
        match id.rsplit_once('#') {
            Some((dialog, lang)) => Ok(RowKey {
                dialog_id: dialog.to_string(),
                lang: Some(lang.parse()?),
            }),
            None => Ok(RowKey {
                dialog_id: id.to_string(),
                lang: None,
            }),
        }
    }

    pub fn variant_id(dialog_id: &str, lang: Lang) -> String {
        format!("{dialog_id}#{}", lang.code())
    }
}

/// Row-major `n × d` matrix of finite `f32` values with one id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    n: usize,
    d: usize,
    data: Vec<f32>,
    ids: Vec<String>,
}

const EMB_MAGIC: &[u8; 4] = b"ECRE";
const EMB_VERSION: u32 = 1;

impl EmbeddingMatrix {
    pub fn new(d: usize, data: Vec<f32>, ids: Vec<String>) -> Result<Self> {
        if d == 0 {
            return Err(EcrError::invalid("embedding dimension must be positive"));
        }
        if data.len() != ids.len() * d {
            return Err(EcrError::Dimension {
                expected: ids.len() * d,
                found: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(EcrError::NonFinite {
                row: pos / d,
                col: pos % d,
            });
        }
        Ok(Self {
            n: ids.len(),
            d,
            data,
            ids,
        })
    }

    /// Builds from `f64` rows, rounding to `f32`.
    pub fn from_rows<R: AsRef<[f64]>>(d: usize, rows: &[R], ids: Vec<String>) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            let r = r.as_ref();
            if r.len() != d {
                return Err(EcrError::Dimension {
                    expected: d,
                    found: r.len(),
                });
            }
            data.extend(r.iter().map(|&v| v as f32));
        }
        Self::new(d, data, ids)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| v as f64).collect()
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.d)
    }

    /// Row subset in the given order.
    pub fn select(&self, rows: &[usize]) -> EmbeddingMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.d);
        let mut ids = Vec::with_capacity(rows.len());
        for &r in rows {
            data.extend_from_slice(self.row(r));
            ids.push(self.ids[r].clone());
        }
        EmbeddingMatrix {
            n: rows.len(),
            d: self.d,
            data,
            ids,
        }
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(EMB_MAGIC);
        w.u32(EMB_VERSION);
        w.u64(self.n as u64);
        w.u32(self.d as u32);
        for &v in &self.data {
            w.f32(v);
        }
        for id in &self.ids {
            w.str(id);
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(EMB_MAGIC, "ECRE")?;
        r.expect_version(EMB_VERSION)?;
        let n = r.u64()? as usize;
        let d = r.u32()? as usize;
        if d == 0 {
            return Err(EcrError::Format("embedding dimension is zero".into()));
        }
        let values = n
            .checked_mul(d)
            .ok_or_else(|| EcrError::Format("n·d overflows".into()))?;
        if r.remaining() / 4 < values {
            return Err(EcrError::Truncated(format!(
                "header declares {n}×{d} = {values} values, body holds {}",
                r.remaining() / 4
            )));
        }
        let mut data = Vec::with_capacity(values);
        for i in 0..values {
            let v = r.f32()?;
            if !v.is_finite() {
                return Err(EcrError::NonFinite {
                    row: i / d,
                    col: i % d,
                });
            }
            data.push(v);
        }
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            ids.push(r.str()?);
        }
        r.finish()?;
        Ok(Self { n, d, data, ids })
    }
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    EmbeddingMatrix::from_bytes(&binio::read_file(path)?)
}

pub fn save_embeddings(m: &EmbeddingMatrix, path: &Path) -> Result<()> {
    binio::write_atomic(path, &m.to_bytes())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Scales `v` to unit L2 norm.
pub fn normalize(v: &[f64]) -> Result<Vec<f64>> {
    let norm = l2_norm(v);
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(EcrError::domain(format!(
            "cannot normalize vector with norm {norm}"
        )));
    }
    Ok(v.iter().map(|x| x / norm).collect())
}
