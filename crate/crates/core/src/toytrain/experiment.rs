use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::anchors::{build_anchor_set, AnchorMode, AnchorParams, AnchorSet};
use crate::codec::{encode, vocab_size, EncodeConfig};
use crate::corpus::{Corpus, EmbeddingMatrix};
use crate::error::{EcrError, Result};
use crate::factor::{format_factor_list, FactorCode};
use crate::geometry::{
    anchor_selections, crosslingual_consistency, purity, GeometryReport, ManifoldPartition,
    PartitionSource, SelectionAgreement,
};
use crate::rng::seeded;

use super::config::{PartitionChoice, PrefixMode, PrefixSource, TrainConfig};
use super::data::{make_synthetic_corpus, Dataset, Sample};
use super::model::ToyModel;
use super::optim::{clip_grad_norm, AdamW};

/// Loss above this, or non-finite, counts as a bad step.
pub const DIVERGENCE_LOSS: f64 = 1e3;
/// Consecutive bad steps that mark a run as diverged.
pub const DIVERGENCE_STEPS: usize = 5;

const MODEL_STREAM: u64 = 0x6d6f_6465_6c00;
const ORDER_STREAM: u64 = 0x6f72_6465_7200;

/// Factor subsets of the ablation sweep; the empty set is the unconditioned baseline.
pub const ABLATION_SUBSETS: [&[FactorCode]; 5] = [
    &[],
    &[FactorCode::L],
    &[FactorCode::E],
    &[FactorCode::I],
    &[FactorCode::L, FactorCode::E, FactorCode::I],
];

/// Frozen anchors plus encoder settings for the conditioned arm.
#[derive(Debug, Clone)]
pub struct EcrContext {
    pub anchors: AnchorSet,
    pub encode: EncodeConfig,
    pub source: PrefixSource,
}

impl EcrContext {
    pub fn vocab(&self) -> usize {
        vocab_size(&self.anchors, self.encode.bins)
    }

    /// Control-token prefix for a sample, as extended-vocabulary ids.
    pub fn prefix(&self, model: &ToyModel, sample: &Sample) -> Result<Vec<u32>> {
        let tokens = match (self.source, sample.gold_pos) {
            (PrefixSource::Query, Some(g)) => &sample.tokens[..g],
            (PrefixSource::Query, None) => {
                return Err(EcrError::invalid(format!(
                    "sample {} has no answer position",
                    sample.id
                )))
            }
            (PrefixSource::Sequence, _) => &sample.tokens[..],
        };
        let h = model.embed_sequence(tokens)?;
        let prefix = encode(&h, &self.anchors, &self.encode)?;
        Ok(prefix
            .ids(&self.anchors, self.encode.bins)?
            .into_iter()
            .map(|id| model.control_token(id))
            .collect())
    }
}

/// A model input `[prefix, x]` and the prefix length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Input {
    pub tokens: Vec<u32>,
    pub n_prefix: usize,
}

pub fn build_inputs(
    model: &ToyModel,
    samples: &[&Sample],
    ecr: Option<&EcrContext>,
) -> Result<Vec<Input>> {
    samples
        .par_iter()
        .map(|s| match ecr {
            None => Ok(Input {
                tokens: s.tokens.clone(),
                n_prefix: 0,
            }),
            Some(ctx) => {
                let prefix = ctx.prefix(model, s)?;
                Ok(Input {
                    n_prefix: prefix.len(),
                    tokens: crate::codec::build_input(&prefix, &s.tokens),
                })
            }
        })
        .collect()
}

/// One optimizer update on prepared inputs; returns the mean target NLL.
pub fn step_on_inputs(
    model: &mut ToyModel,
    opt: &mut AdamW,
    inputs: &[Input],
    grad_clip: f64,
) -> Result<f64> {
    let targets: usize = inputs.iter().map(|x| x.tokens.len() - x.n_prefix - 1).sum();
    if targets == 0 {
        return Err(EcrError::invalid("batch has no prediction targets"));
    }
    let scale = 1.0 / targets as f64;
    let snapshot = &*model;
    let parts: Vec<(f64, Vec<f64>)> = inputs
        .par_iter()
        .map(|x| {
            let mut g = vec![0.0; snapshot.params().len()];
            let nll = snapshot.accumulate_grad(&x.tokens, x.n_prefix, scale, &mut g)?;
            Ok((nll, g))
        })
        .collect::<Result<_>>()?;
    // Summed in batch order so the result does not depend on scheduling.
    let mut grad = vec![0.0; model.params().len()];
    let mut nll = 0.0;
    for (l, g) in parts {
        nll += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    clip_grad_norm(&mut grad, grad_clip);
    opt.step(model.params_mut(), &grad);
    Ok(nll * scale)
}

/// Prefix from the current model, then one update. Anchors are only read.
pub fn train_step(
    model: &mut ToyModel,
    opt: &mut AdamW,
    batch: &[&Sample],
    ecr: Option<&EcrContext>,
    grad_clip: f64,
) -> Result<f64> {
    let inputs = build_inputs(model, batch, ecr)?;
    step_on_inputs(model, opt, &inputs, grad_clip)
}

/// Mean token NLL per language, with the same prefix pipeline as training.
pub fn nll_eval(
    model: &ToyModel,
    data: &Dataset,
    ecr: Option<&EcrContext>,
) -> Result<BTreeMap<String, f64>> {
    if data.is_empty() {
        return Err(EcrError::invalid("no samples to evaluate"));
    }
    let refs: Vec<&Sample> = data.samples.iter().collect();
    let inputs = build_inputs(model, &refs, ecr)?;
    let per: Vec<Vec<f64>> = inputs
        .par_iter()
        .map(|x| model.target_nll(&x.tokens, x.n_prefix))
        .collect::<Result<_>>()?;
    let mut buckets: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (s, nll) in data.samples.iter().zip(per) {
        let b = buckets.entry(s.lang.clone()).or_default();
        b.0 += nll.iter().sum::<f64>();
        b.1 += nll.len();
    }
    Ok(buckets
        .into_iter()
        .map(|(l, (s, n))| (l, s / n as f64))
        .collect())
}

/// Share of samples whose highest-scoring candidate at the gold position is the gold token.
pub fn task_accuracy(model: &ToyModel, data: &Dataset, ecr: Option<&EcrContext>) -> Result<f64> {
    if data.is_empty() {
        return Err(EcrError::invalid("no samples to score"));
    }
    let refs: Vec<&Sample> = data.samples.iter().collect();
    let inputs = build_inputs(model, &refs, ecr)?;
    let mut hits = 0usize;
    for (s, x) in data.samples.iter().zip(&inputs) {
        let gold = s
            .gold_pos
            .ok_or_else(|| EcrError::invalid(format!("sample {} has no gold position", s.id)))?;
        let pos = x.n_prefix + gold;
        let z = model.predict_at(&x.tokens, pos)?;
        let candidates: Vec<u32> = if data.label_candidates.is_empty() {
            (0..model.v_base() as u32).collect()
        } else {
            data.label_candidates.clone()
        };
        let mut best = candidates[0];
        for &c in &candidates[1..] {
            if z[c as usize] > z[best as usize] {
                best = c;
            }
        }
        if best == x.tokens[pos] {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Everything both arms of an experiment share.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub corpus: Corpus,
    /// Teacher rows of the training split only.
    pub teacher: EmbeddingMatrix,
    pub train: Dataset,
    pub test: Dataset,
    pub v_base: usize,
    /// Fixed anchors (T, E, I) used to measure selection consistency in every arm.
    pub measure: AnchorSet,
}

fn label_anchors(
    teacher: &EmbeddingMatrix,
    corpus: &Corpus,
    factors: &[FactorCode],
    seed: u64,
) -> Result<AnchorSet> {
    build_anchor_set(
        teacher,
        Some(corpus),
        factors,
        &AnchorParams {
            mode: AnchorMode::Label,
            seed,
            ..Default::default()
        },
    )
}

impl ExperimentData {
    pub fn new(
        corpus: Corpus,
        teacher: &EmbeddingMatrix,
        dataset: &Dataset,
        v_base: usize,
        test_fraction: f64,
        seed: u64,
    ) -> Result<Self> {
        let (train, test) = dataset.split_by_dialog(test_fraction, seed)?;
        if train.is_empty() || test.is_empty() {
            return Err(EcrError::invalid("train/test split left one side empty"));
        }
        let rows = train
            .samples
            .iter()
            .map(|s| {
                teacher
                    .position(&s.id)
                    .ok_or_else(|| EcrError::invalid(format!("no teacher embedding for {}", s.id)))
            })
            .collect::<Result<Vec<_>>>()?;
        let teacher = teacher.select(&rows);
        let measure = label_anchors(
            &teacher,
            &corpus,
            &[FactorCode::T, FactorCode::E, FactorCode::I],
            seed,
        )?;
        Ok(Self {
            corpus,
            teacher,
            train,
            test,
            v_base,
            measure,
        })
    }

    /// Synthetic corpus generated from the config's data settings and seed.
    pub fn synthetic(cfg: &TrainConfig) -> Result<Self> {
        let s = make_synthetic_corpus(&cfg.synthetic())?;
        Self::new(
            s.corpus,
            &s.teacher,
            &s.dataset,
            s.v_base,
            cfg.test_fraction,
            cfg.seed,
        )
    }

    /// Label-centroid anchors over the training teacher rows.
    pub fn anchors_for(&self, factors: &[FactorCode], seed: u64) -> Result<AnchorSet> {
        label_anchors(&self.teacher, &self.corpus, factors, seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub nll: BTreeMap<String, f64>,
    pub nll_mean: f64,
    pub accuracy: f64,
    /// Absent when the embeddings are degenerate (e.g. after divergence).
    pub geometry: Option<GeometryReport>,
    pub purity: BTreeMap<String, f64>,
    pub purity_overall: f64,
    pub consistency: Option<SelectionAgreement>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub label: String,
    pub seed: u64,
    pub config: String,
    pub ecr: bool,
    pub factors: Vec<FactorCode>,
    pub loss_curve: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
    /// Step at which the divergence detector fired.
    pub diverged_at: Option<usize>,
    pub anchor_checksum_before: Option<u32>,
    pub anchor_checksum_after: Option<u32>,
}

fn opt_f(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"))
}

impl ExperimentReport {
    pub fn steps(&self) -> usize {
        self.loss_curve.len()
    }

    pub fn last_epoch(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn final_nll(&self) -> f64 {
        self.last_epoch().map_or(f64::NAN, |e| e.nll_mean)
    }

    /// Text report: header, per-epoch table, then the full loss curve.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# toy training report");
        let _ = writeln!(s, "# seed\t{}", self.seed);
        let _ = writeln!(s, "# arm\t{}", self.label);
        let _ = writeln!(s, "# ecr\t{}", if self.ecr { "on" } else { "off" });
        let _ = writeln!(s, "# factors\t{}", format_factor_list(&self.factors));
        for line in self.config.lines() {
            let _ = writeln!(s, "# config\t{line}");
        }
        let _ = writeln!(s, "steps\t{}", self.steps());
        let _ = writeln!(
            s,
            "diverged\t{}",
            self.diverged_at
                .map_or_else(|| "no".to_string(), |st| format!("step {st}"))
        );
        let hex = |c: Option<u32>| c.map_or_else(|| "-".to_string(), |c| format!("{c:08x}"));
        let _ = writeln!(
            s,
            "anchor_checksum_before\t{}",
            hex(self.anchor_checksum_before)
        );
        let _ = writeln!(
            s,
            "anchor_checksum_after\t{}",
            hex(self.anchor_checksum_after)
        );
        let langs: Vec<String> = self
            .epochs
            .first()
            .map(|e| e.nll.keys().cloned().collect())
            .unwrap_or_default();
        s += "\n## epochs\nepoch";
        for l in &langs {
            let _ = write!(s, "\tnll_{l}");
        }
        s += "\tnll\taccuracy\tintra\tinter\tratio\tspread";
        for l in &langs {
            let _ = write!(s, "\tpurity_{l}");
        }
        s += "\tpurity\tconsistency\tjaccard\n";
        for e in &self.epochs {
            let _ = write!(s, "{}", e.epoch);
            for l in &langs {
                let _ = write!(s, "\t{:.6}", e.nll.get(l).copied().unwrap_or(f64::NAN));
            }
            let g = e.geometry.as_ref();
            let _ = write!(
                s,
                "\t{:.6}\t{:.6}\t{}\t{}\t{}\t{}",
                e.nll_mean,
                e.accuracy,
                opt_f(g.map(|g| g.intra)),
                opt_f(g.map(|g| g.inter)),
                opt_f(g.map(|g| g.ratio)),
                opt_f(g.map(|g| g.spread))
            );
            for l in &langs {
                let _ = write!(s, "\t{:.6}", e.purity.get(l).copied().unwrap_or(f64::NAN));
            }
            let _ = writeln!(
                s,
                "\t{:.6}\t{}\t{}",
                e.purity_overall,
                opt_f(e.consistency.map(|c| c.exact)),
                opt_f(e.consistency.map(|c| c.mean_jaccard))
            );
        }
        s += "\n## loss\nstep\tloss\n";
        for (i, l) in self.loss_curve.iter().enumerate() {
            let _ = writeln!(s, "{}\t{l}", i + 1);
        }
        s
    }
}

fn evaluate(
    model: &ToyModel,
    data: &ExperimentData,
    cfg: &TrainConfig,
    ecr: Option<&EcrContext>,
    epoch: usize,
) -> Result<EpochRecord> {
    let nll = nll_eval(model, &data.test, ecr)?;
    let nll_mean = nll.values().sum::<f64>() / nll.len() as f64;
    let accuracy = task_accuracy(model, &data.test, ecr)?;

    let ids = data.test.ids();
    let rows: Vec<Vec<f64>> = data
        .test
        .samples
        .iter()
        .map(|s| model.embed_sequence(&s.tokens))
        .collect::<Result<_>>()?;
    let finite = rows.iter().flatten().all(|v| v.is_finite());

    let langs = data.test.languages();
    let pur = purity(&rows, &langs)?;

    let (geometry, consistency) = if finite {
        let h = EmbeddingMatrix::from_rows(model.d(), &rows, ids.clone())?;
        let partition = match cfg.partition {
            PartitionChoice::Labels(f) => ManifoldPartition::from_labels(
                &data.corpus.row_labels(&ids, f)?,
                PartitionSource::Labels(f),
            ),
            PartitionChoice::Anchors => ManifoldPartition::from_anchors(&h, &data.measure)?,
        };
        let k = cfg.consistency_topk.min(data.measure.k());
        let consistency = anchor_selections(&h, &data.measure, k)
            .and_then(|sel| crosslingual_consistency(&sel))
            .ok();
        (GeometryReport::compute(&rows, &partition).ok(), consistency)
    } else {
        (None, None)
    };

    Ok(EpochRecord {
        epoch,
        nll,
        nll_mean,
        accuracy,
        geometry,
        purity: pur.per_language,
        purity_overall: pur.overall,
        consistency,
    })
}

/// Trains one arm. `anchors` overrides the label anchors built from `cfg.factors`.
pub fn run_arm(
    data: &ExperimentData,
    cfg: &TrainConfig,
    label: &str,
    anchors: Option<&AnchorSet>,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    if data.teacher.d() != cfg.d {
        return Err(EcrError::Dimension {
            expected: cfg.d,
            found: data.teacher.d(),
        });
    }
    let ctx = if cfg.ecr {
        let anchors = match anchors {
            Some(a) => a.clone(),
            None => data.anchors_for(&cfg.factors, cfg.seed)?,
        };
        Some(EcrContext {
            anchors,
            encode: cfg.encode_config(),
            source: cfg.prefix_source,
        })
    } else {
        None
    };
    let checksum_before = ctx.as_ref().map(|c| c.anchors.checksum());
    let n_ctrl = ctx.as_ref().map_or(0, EcrContext::vocab);
    let mut model = ToyModel::new(
        data.v_base,
        n_ctrl,
        cfg.d,
        cfg.seed ^ MODEL_STREAM,
        cfg.init_scale,
    )?;
    let mut opt = AdamW::new(
        model.params().len(),
        cfg.learning_rate,
        cfg.beta1,
        cfg.beta2,
        cfg.eps,
        cfg.weight_decay,
    );

    let all: Vec<&Sample> = data.train.samples.iter().collect();
    let frozen = match (&ctx, cfg.prefix) {
        (Some(c), PrefixMode::Frozen) => Some(build_inputs(&model, &all, Some(c))?),
        _ => None,
    };

    let mut loss_curve = Vec::new();
    let mut epochs = Vec::new();
    let mut bad_run = 0usize;
    let mut diverged_at = None;
    'outer: for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..all.len()).collect();
        order.shuffle(&mut seeded(cfg.seed ^ ORDER_STREAM ^ epoch as u64));
        for chunk in order.chunks(cfg.batch_size) {
            let loss = match &frozen {
                Some(inputs) => {
                    let batch: Vec<Input> = chunk.iter().map(|&i| inputs[i].clone()).collect();
                    step_on_inputs(&mut model, &mut opt, &batch, cfg.grad_clip)?
                }
                None => {
                    let batch: Vec<&Sample> = chunk.iter().map(|&i| all[i]).collect();
                    train_step(&mut model, &mut opt, &batch, ctx.as_ref(), cfg.grad_clip)?
                }
            };
            loss_curve.push(loss);
            if !loss.is_finite() || loss > DIVERGENCE_LOSS {
                bad_run += 1;
                if bad_run >= DIVERGENCE_STEPS {
                    diverged_at = Some(loss_curve.len());
                    tracing::warn!(arm = label, step = loss_curve.len(), "training diverged");
                    break 'outer;
                }
            } else {
                bad_run = 0;
            }
            if cfg.max_steps > 0 && loss_curve.len() >= cfg.max_steps {
                epochs.push(evaluate_lenient(&model, data, cfg, ctx.as_ref(), epoch)?);
                break 'outer;
            }
        }
        epochs.push(evaluate_lenient(&model, data, cfg, ctx.as_ref(), epoch)?);
    }
    if diverged_at.is_some() {
        let epoch = epochs.last().map_or(1, |e: &EpochRecord| e.epoch + 1);
        epochs.push(evaluate_lenient(&model, data, cfg, ctx.as_ref(), epoch)?);
    }

    Ok(ExperimentReport {
        label: label.to_string(),
        seed: cfg.seed,
        config: cfg.render(),
        ecr: cfg.ecr,
        factors: if cfg.ecr {
            cfg.factors.clone()
        } else {
            Vec::new()
        },
        loss_curve,
        epochs,
        diverged_at,
        anchor_checksum_before: checksum_before,
        anchor_checksum_after: ctx.as_ref().map(|c| c.anchors.checksum()),
    })
}

/// Evaluation that tolerates a model whose parameters went non-finite.
fn evaluate_lenient(
    model: &ToyModel,
    data: &ExperimentData,
    cfg: &TrainConfig,
    ecr: Option<&EcrContext>,
    epoch: usize,
) -> Result<EpochRecord> {
    match evaluate(model, data, cfg, ecr, epoch) {
        Ok(r) => Ok(r),
        Err(_) if model.params().iter().any(|p| !p.is_finite()) => Ok(EpochRecord {
            epoch,
            nll: data
                .test
                .languages()
                .into_iter()
                .map(|l| (l, f64::NAN))
                .collect(),
            nll_mean: f64::NAN,
            accuracy: f64::NAN,
            geometry: None,
            purity: BTreeMap::new(),
            purity_overall: f64::NAN,
            consistency: None,
        }),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedReport {
    pub baseline: ExperimentReport,
    pub ecr: ExperimentReport,
}

/// Baseline and conditioned arms with identical seed, data order and hyperparameters.
pub fn run_experiment(data: &ExperimentData, cfg: &TrainConfig) -> Result<PairedReport> {
    let base_cfg = TrainConfig {
        ecr: false,
        ..cfg.clone()
    };
    let ecr_cfg = TrainConfig {
        ecr: true,
        ..cfg.clone()
    };
    Ok(PairedReport {
        baseline: run_arm(data, &base_cfg, "baseline", None)?,
        ecr: run_arm(data, &ecr_cfg, "ecr", None)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub arm: String,
    pub factors: String,
    pub steps: usize,
    pub nll: f64,
    pub spread: Option<f64>,
    pub consistency: Option<f64>,
    pub jaccard: Option<f64>,
    pub purity: f64,
    pub accuracy: f64,
    pub diverged: bool,
}

impl ComparisonRow {
    pub fn from_report(r: &ExperimentReport) -> Self {
        let last = r.last_epoch();
        Self {
            arm: r.label.clone(),
            factors: format_factor_list(&r.factors),
            steps: r.steps(),
            nll: r.final_nll(),
            spread: last.and_then(|e| e.geometry.as_ref()).map(|g| g.spread),
            consistency: last.and_then(|e| e.consistency).map(|c| c.exact),
            jaccard: last.and_then(|e| e.consistency).map(|c| c.mean_jaccard),
            purity: last.map_or(f64::NAN, |e| e.purity_overall),
            accuracy: last.map_or(f64::NAN, |e| e.accuracy),
            diverged: r.diverged_at.is_some(),
        }
    }
}

/// Tab-separated comparison of final-epoch metrics, one row per arm.
pub fn comparison_table(seed: u64, rows: &[ComparisonRow]) -> String {
    let mut s = format!("# seed\t{seed}\narm\tfactors\tsteps\tnll\tspread\tconsistency\tjaccard\tpurity\taccuracy\tdiverged\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{:.6}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{}",
            r.arm,
            r.factors,
            r.steps,
            r.nll,
            opt_f(r.spread),
            opt_f(r.consistency),
            opt_f(r.jaccard),
            r.purity,
            r.accuracy,
            if r.diverged { "yes" } else { "no" }
        );
    }
    s
}

impl PairedReport {
    pub fn table(&self) -> String {
        comparison_table(
            self.baseline.seed,
            &[
                ComparisonRow::from_report(&self.baseline),
                ComparisonRow::from_report(&self.ecr),
            ],
        )
    }
}

/// One run per factor subset; the empty subset runs without conditioning.
pub fn ablation(
    data: &ExperimentData,
    cfg: &TrainConfig,
    subsets: &[&[FactorCode]],
) -> Result<Vec<ExperimentReport>> {
    subsets
        .iter()
        .map(|factors| {
            let c = TrainConfig {
                ecr: !factors.is_empty(),
                factors: if factors.is_empty() {
                    cfg.factors.clone()
                } else {
                    factors.to_vec()
                },
                ..cfg.clone()
            };
            run_arm(data, &c, &format_factor_list(factors), None)
        })
        .collect()
}

pub fn ablation_table(seed: u64, reports: &[ExperimentReport]) -> String {
    let rows: Vec<ComparisonRow> = reports.iter().map(ComparisonRow::from_report).collect();
    comparison_table(seed, &rows)
}
