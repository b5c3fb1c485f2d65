//! Token sequences for the toy model, a whitespace tokenizer, and the
//! synthetic multilingual corpus generator.
//!
//! Synthetic vocabulary layout (`v_base = 1 + n_factors + 3·lang_vocab`):
//!
//! ```text
//! 0                      BOS
//! 1 ..= n_factors        task label tokens, shared by all languages
//! then per language      lang_vocab tokens each, en, zh, hi in that order
//! ```
//!
//! Each dialog yields one sequence per language: `BOS, query, answer`. The
//! first answer token is the gold task label; the rest are drawn from a
//! peaked distribution fixed by (language, task). Query tokens come from the
//! language's range, with cue tokens tied to the task and intent mixed in.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{Corpus, CorpusRecord, EmbeddingMatrix, LabelInventory, Lang, RowKey};
use crate::error::{EcrError, Result};
use crate::rng::seeded;

use super::model::BOS;

/// One training or evaluation sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    /// Row id, `dialog#lang`.
    pub id: String,
    pub lang: String,
    /// Starts with [`BOS`].
    pub tokens: Vec<u32>,
    /// Index into `tokens` of the gold answer token.
    pub gold_pos: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    /// Tokens competing at the gold position; empty means the whole vocabulary.
    pub label_candidates: Vec<u32>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.id.clone()).collect()
    }

    pub fn languages(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.lang.clone()).collect()
    }

    /// Splits by dialog so all variants of a dialog land on the same side.
    pub fn split_by_dialog(&self, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(EcrError::invalid(format!(
                "test fraction {test_fraction} outside [0, 1)"
            )));
        }
        let mut dialogs: Vec<String> = self
            .samples
            .iter()
            .map(|s| RowKey::parse(&s.id).map(|k| k.dialog_id))
            .collect::<Result<BTreeSet<_>>>()?
            .into_iter()
            .collect();
        dialogs.shuffle(&mut seeded(seed ^ 0x5b1d));
        let n_test = (dialogs.len() as f64 * test_fraction).round() as usize;
        let test: BTreeSet<&String> = dialogs[..n_test].iter().collect();
        let (mut tr, mut te) = (Vec::new(), Vec::new());
        for s in &self.samples {
            let dialog = RowKey::parse(&s.id)?.dialog_id;
            if test.contains(&dialog) {
                te.push(s.clone());
            } else {
                tr.push(s.clone());
            }
        }
        let mk = |samples| Dataset {
            samples,
            label_candidates: self.label_candidates.clone(),
        };
        Ok((mk(tr), mk(te)))
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Whitespace tokenizer: a decimal word is a literal id, anything else is hashed.
/// Ids fold into `1..v_base`, keeping [`BOS`] reserved.
pub fn tokenize(text: &str, v_base: usize) -> Vec<u32> {
    let span = (v_base - 1) as u64;
    text.split_whitespace()
        .map(|w| {
            let raw = w.parse::<u64>().unwrap_or_else(|_| {
                w.bytes()
                    .fold(FNV_OFFSET, |h, b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
            });
            // Literal ids already in range map to themselves.
            let id = if (1..v_base as u64).contains(&raw) {
                raw
            } else {
                1 + raw % span
            };
            id as u32
        })
        .collect()
}

/// One sequence per record and language: `BOS, query, answer`.
pub fn dataset_from_corpus(
    corpus: &Corpus,
    v_base: usize,
    label_candidates: Vec<u32>,
) -> Result<Dataset> {
    if v_base < 2 {
        return Err(EcrError::invalid("v_base must be at least 2"));
    }
    let mut samples = Vec::new();
    for r in corpus.records() {
        for lang in Lang::ALL {
            let q = tokenize(r.query(lang), v_base);
            let a = tokenize(r.answer(lang), v_base);
            if a.is_empty() {
                continue;
            }
            let mut tokens = Vec::with_capacity(1 + q.len() + a.len());
            tokens.push(BOS);
            tokens.extend(&q);
            let gold_pos = tokens.len();
            tokens.extend(&a);
            samples.push(Sample {
                id: RowKey::variant_id(&r.dialog_id, lang),
                lang: lang.code().to_string(),
                tokens,
                gold_pos: Some(gold_pos),
            });
        }
    }
    Ok(Dataset {
        samples,
        label_candidates,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticParams {
    pub seed: u64,
    /// Dialogs; each yields one record and three language variants.
    pub n_per_lang: usize,
    /// Labels per factor for task, emotion and intent.
    pub n_factors: usize,
    /// Teacher embedding dimension.
    pub d: usize,
    pub lang_vocab: usize,
    pub query_len: usize,
    pub answer_len: usize,
    /// Probability that a query token is a cue token rather than filler.
    pub cue_rate: f64,
    /// Teacher noise standard deviation.
    pub noise: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            seed: 0,
            n_per_lang: 200,
            n_factors: 4,
            d: 32,
            lang_vocab: 64,
            query_len: 8,
            answer_len: 6,
            cue_rate: 0.5,
            noise: 0.3,
        }
    }
}

impl SyntheticParams {
    pub fn v_base(&self) -> usize {
        1 + self.n_factors + 3 * self.lang_vocab
    }

    pub fn label_tokens(&self) -> Vec<u32> {
        (1..=self.n_factors as u32).collect()
    }

    fn lang_start(&self, lang: Lang) -> u32 {
        (1 + self.n_factors + lang.index() * self.lang_vocab) as u32
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    /// One row per dialog and language, id `dialog#lang`.
    pub teacher: EmbeddingMatrix,
    pub dataset: Dataset,
    pub v_base: usize,
}

fn gaussian_vec(rng: &mut impl Rng, d: usize, scale: f64) -> Vec<f64> {
    let n = Normal::new(0.0, scale).expect("valid scale");
    (0..d).map(|_| n.sample(rng)).collect()
}

/// Draws a token by Zipf-like weights over a fixed permutation.
fn peaked_token(rng: &mut impl Rng, order: &[u32]) -> u32 {
    // Weight of rank r is 1/(r+1)^2; 95% of mass sits in the first few ranks.
    let weights: Vec<f64> = (0..order.len())
        .map(|r| 1.0 / ((r + 1) as f64).powi(2))
        .collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (w, &t) in weights.iter().zip(order) {
        if u < *w {
            return t;
        }
        u -= w;
    }
    *order.last().expect("non-empty order")
}

fn render(tokens: &[u32]) -> String {
    tokens
        .iter()
        .map(u32::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Seeded synthetic corpus with teacher embeddings clustered by factor labels.
///
/// Teacher rows are `3·c_lang + c_task + c_emotion + c_intent + noise`, with
/// all centres drawn from a standard normal, so languages separate cleanly.
pub fn make_synthetic_corpus(p: &SyntheticParams) -> Result<SyntheticCorpus> {
    if p.n_per_lang == 0
        || p.n_factors == 0
        || p.d == 0
        || p.lang_vocab < 2
        || p.query_len == 0
        || p.answer_len == 0
    {
        return Err(EcrError::invalid("synthetic corpus sizes must be positive"));
    }
    if p.v_base() > u32::MAX as usize {
        return Err(EcrError::invalid("synthetic vocabulary too large"));
    }
    let mut rng = seeded(p.seed);
    let nf = p.n_factors;
    let names = |prefix: &str| (0..nf).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>();
    let labels = LabelInventory {
        task: names("task"),
        language: Lang::ALL.iter().map(|l| l.code().to_string()).collect(),
        emotion: names("emo"),
        intent: names("intent"),
    };

    let c_lang: Vec<Vec<f64>> = (0..3).map(|_| gaussian_vec(&mut rng, p.d, 3.0)).collect();
    let c_task: Vec<Vec<f64>> = (0..nf).map(|_| gaussian_vec(&mut rng, p.d, 1.0)).collect();
    let c_emo: Vec<Vec<f64>> = (0..nf).map(|_| gaussian_vec(&mut rng, p.d, 1.0)).collect();
    let c_int: Vec<Vec<f64>> = (0..nf).map(|_| gaussian_vec(&mut rng, p.d, 1.0)).collect();

    // Per (language, task): answer ranking over the language range.
    // Per (language, task) and (language, intent): a few cue tokens.
    let mut answer_order = vec![vec![Vec::new(); nf]; 3];
    let mut task_cues = vec![vec![Vec::new(); nf]; 3];
    let mut intent_cues = vec![vec![Vec::new(); nf]; 3];
    let n_cues = (p.lang_vocab / (2 * nf)).max(1);
    for lang in Lang::ALL {
        let range: Vec<u32> = (0..p.lang_vocab as u32)
            .map(|i| p.lang_start(lang) + i)
            .collect();
        for t in 0..nf {
            let mut order = range.clone();
            order.shuffle(&mut rng);
            answer_order[lang.index()][t] = order;
        }
        let mut pool = range.clone();
        pool.shuffle(&mut rng);
        for t in 0..nf {
            task_cues[lang.index()][t] = pool[t * n_cues..(t + 1) * n_cues].to_vec();
        }
        pool.shuffle(&mut rng);
        for i in 0..nf {
            intent_cues[lang.index()][i] = pool[i * n_cues..(i + 1) * n_cues].to_vec();
        }
    }

    let noise = Normal::new(0.0, p.noise).map_err(|e| EcrError::invalid(e.to_string()))?;
    let mut records = Vec::with_capacity(p.n_per_lang);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(3 * p.n_per_lang);
    let mut ids = Vec::with_capacity(3 * p.n_per_lang);
    let mut samples = Vec::with_capacity(3 * p.n_per_lang);
    let width = p.n_per_lang.to_string().len();
    for k in 0..p.n_per_lang {
        let dialog_id = format!("syn{k:0width$}");
        let (task, emo, intent) = (
            rng.random_range(0..nf),
            rng.random_range(0..nf),
            rng.random_range(0..nf),
        );
        let mut texts = [
            (String::new(), String::new()),
            (String::new(), String::new()),
            (String::new(), String::new()),
        ];
        for lang in Lang::ALL {
            let li = lang.index();
            let query: Vec<u32> = (0..p.query_len)
                .map(|_| {
                    if rng.random::<f64>() < p.cue_rate {
                        let cues = if rng.random::<bool>() {
                            &task_cues[li][task]
                        } else {
                            &intent_cues[li][intent]
                        };
                        cues[rng.random_range(0..cues.len())]
                    } else {
                        p.lang_start(lang) + rng.random_range(0..p.lang_vocab as u32)
                    }
                })
                .collect();
            let mut answer = vec![1 + task as u32];
            answer
                .extend((1..p.answer_len).map(|_| peaked_token(&mut rng, &answer_order[li][task])));

            let mut tokens = vec![BOS];
            tokens.extend(&query);
            let gold_pos = tokens.len();
            tokens.extend(&answer);
            let id = RowKey::variant_id(&dialog_id, lang);
            samples.push(Sample {
                id: id.clone(),
                lang: lang.code().to_string(),
                tokens,
                gold_pos: Some(gold_pos),
            });
            texts[li] = (render(&query), render(&answer));

            let row: Vec<f64> = (0..p.d)
                .map(|j| {
                    c_lang[li][j]
                        + c_task[task][j]
                        + c_emo[emo][j]
                        + c_int[intent][j]
                        + noise.sample(&mut rng)
                })
                .collect();
            rows.push(row);
            ids.push(id);
        }
        let [(en_q, en_a), (zh_q, zh_a), (hi_q, hi_a)] = texts;
        records.push(CorpusRecord {
            dialog_id,
            task: labels.task[task].clone(),
            language: "en".to_string(),
            emotion: labels.emotion[emo].clone(),
            intent: labels.intent[intent].clone(),
            en_q,
            zh_q,
            hi_q,
            en_a,
            zh_a,
            hi_a,
        });
    }
    let corpus = Corpus::new(labels, records)?;
    let teacher = EmbeddingMatrix::from_rows(p.d, &rows, ids)?;
    Ok(SyntheticCorpus {
        corpus,
        teacher,
        dataset: Dataset {
            samples,
            label_candidates: p.label_tokens(),
        },
        v_base: p.v_base(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor::FactorCode;
    use crate::geometry::{purity, rows_f64};

    fn small() -> SyntheticParams {
        SyntheticParams {
            n_per_lang: 100,
            ..Default::default()
        }
    }

    #[test]
    fn hundred_dialogs_give_three_hundred_rows() {
        let s = make_synthetic_corpus(&small()).unwrap();
        assert_eq!(s.corpus.len(), 100);
        assert_eq!(s.teacher.n(), 300);
        assert_eq!(s.dataset.len(), 300);
        for r in s.corpus.records() {
            for lang in Lang::ALL {
                assert!(s
                    .teacher
                    .position(&RowKey::variant_id(&r.dialog_id, lang))
                    .is_some());
            }
        }
    }

    #[test]
    fn teacher_language_purity_is_one() {
        let s = make_synthetic_corpus(&small()).unwrap();
        let langs = s.corpus.row_labels(s.teacher.ids(), FactorCode::L).unwrap();
        let r = purity(&rows_f64(&s.teacher), &langs).unwrap();
        assert!(
            r.per_language.values().all(|&p| p == 1.0),
            "{:?}",
            r.per_language
        );
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = make_synthetic_corpus(&small()).unwrap();
        let b = make_synthetic_corpus(&small()).unwrap();
        assert_eq!(a.corpus.to_jsonl(), b.corpus.to_jsonl());
        assert_eq!(a.teacher.to_bytes(), b.teacher.to_bytes());
        let c = make_synthetic_corpus(&SyntheticParams { seed: 1, ..small() }).unwrap();
        assert_ne!(a.corpus.to_jsonl(), c.corpus.to_jsonl());
    }

    #[test]
    fn language_ranges_are_disjoint_and_gold_is_label() {
        let p = small();
        let s = make_synthetic_corpus(&p).unwrap();
        for smp in &s.dataset.samples {
            let lang: Lang = smp.lang.parse().unwrap();
            let lo = p.lang_start(lang);
            let gold = smp.gold_pos.unwrap();
            assert!(smp.tokens[1..gold]
                .iter()
                .all(|&t| t >= lo && t < lo + p.lang_vocab as u32));
            assert!(p.label_tokens().contains(&smp.tokens[gold]));
            assert!(smp.tokens.iter().all(|&t| (t as usize) < s.v_base));
        }
    }

    #[test]
    fn corpus_round_trip_reproduces_dataset() {
        let s = make_synthetic_corpus(&small()).unwrap();
        let d =
            dataset_from_corpus(&s.corpus, s.v_base, s.dataset.label_candidates.clone()).unwrap();
        assert_eq!(d, s.dataset);
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(tokenize("3 17 0", 20), vec![3, 17, 1]);
        assert_eq!(tokenize("hello hello", 20), tokenize("hello  hello", 20));
        assert!(tokenize("the quick brown fox", 20)
            .iter()
            .all(|&t| (1..20).contains(&t)));
    }

    #[test]
    fn split_keeps_dialogs_whole() {
        let s = make_synthetic_corpus(&small()).unwrap();
        let (tr, te) = s.dataset.split_by_dialog(0.2, 3).unwrap();
        assert_eq!(te.len(), 60);
        assert_eq!(tr.len() + te.len(), 300);
        let dialogs = |d: &Dataset| {
            d.samples
                .iter()
                .map(|x| RowKey::parse(&x.id).unwrap().dialog_id)
                .collect::<BTreeSet<_>>()
        };
        assert!(dialogs(&tr).is_disjoint(&dialogs(&te)));
    }
}
