use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rand::Rng;
use tracing::info;

use ecr_core::anchors::{build_anchor_set, load_anchors, save_anchors, AnchorMode, AnchorParams};
use ecr_core::binio::write_atomic;
use ecr_core::codec::{encode, topk_anchors, EncodeConfig, EncodeMode, RetrievalScope};
use ecr_core::corpus::{
    load_corpus, load_embeddings, save_corpus, save_embeddings, Corpus, EmbeddingMatrix, RowKey,
};
use ecr_core::factor::{parse_factor_list, FactorCode};
use ecr_core::geometry::{
    anchor_selections, crosslingual_consistency, purity, retrieval_consistency, rows_f64,
    teacher_similarity, GeometryReport, ManifoldPartition, SharedSpace,
};
use ecr_core::retrieval::{
    bench_query_latency, fit_pca_with, load_index, load_pca, save_index, save_pca, HnswIndex,
    HnswParams, PcaSolver,
};
use ecr_core::rng::seeded;
use ecr_core::toytrain::{
    ablation, ablation_table, make_synthetic_corpus, run_arm, run_experiment, ExperimentData,
    TrainConfig, ABLATION_SUBSETS,
};

use crate::*;

pub fn run(cli: &Cli) -> Result<()> {
    let seed = cli.seed;
    match &cli.command {
        Command::BuildAnchors(a) => build_anchors(a, seed),
        Command::Encode(a) => encode_cmd(a),
        Command::Topk(a) => topk(a),
        Command::PcaFit(a) => pca_fit(a, seed),
        Command::IndexBuild(a) => index_build(a, seed),
        Command::IndexQuery(a) => index_query(a),
        Command::Bench(a) => bench(a, seed),
        Command::Geometry(a) => geometry(a, seed),
        Command::Purity(a) => purity_cmd(a, seed),
        Command::Consistency(a) => consistency(a, seed),
        Command::TrainToy(a) => train_toy(a, seed),
        Command::MakeSynthetic(a) => make_synthetic(a, seed),
        Command::Report(a) => report(a, seed),
    }
}

/// Atomic write to `path`, or stdout when none is given.
fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            write_atomic(p, text.as_bytes()).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    load_embeddings(path).with_context(|| format!("reading embeddings {}", path.display()))
}

fn corpus(path: &Path) -> Result<Corpus> {
    load_corpus(path).with_context(|| format!("reading corpus {}", path.display()))
}

fn maybe_reduce(m: EmbeddingMatrix, pca: Option<&Path>) -> Result<EmbeddingMatrix> {
    match pca {
        Some(p) => {
            let model =
                load_pca(p).with_context(|| format!("reading PCA model {}", p.display()))?;
            Ok(model.project_matrix(&m)?)
        }
        None => Ok(m),
    }
}

/// Language of every row: the `#lang` suffix, else the corpus label.
fn row_languages(ids: &[String], corpus: Option<&Corpus>) -> Result<Vec<String>> {
    match corpus {
        Some(c) => Ok(c.row_labels(ids, FactorCode::L)?),
        None => ids
            .iter()
            .map(|id| {
                let key = RowKey::parse(id)?;
                key.lang
                    .map(|l| l.code().to_string())
                    .with_context(|| format!("row {id} has no language suffix; pass --corpus"))
            })
            .collect(),
    }
}

fn build_anchors(a: &BuildAnchorsArgs, seed: u64) -> Result<()> {
    let emb = embeddings(&a.embeddings)?;
    let corpus = a.corpus.as_deref().map(corpus).transpose()?;
    let mode: AnchorMode = a.mode.parse()?;
    let factors = parse_factor_list(&a.factors)?;
    let params = AnchorParams {
        mode,
        k: a.k,
        seed,
        max_iter: a.max_iter,
        ..Default::default()
    };
    let set = build_anchor_set(&emb, corpus.as_ref(), &factors, &params)?;
    save_anchors(&set, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    info!(
        k = set.k(),
        d = set.d(),
        checksum = set.checksum(),
        "anchors written"
    );
    Ok(())
}

fn encode_cmd(a: &EncodeArgs) -> Result<()> {
    let anchors = load_anchors(&a.anchors)?;
    let emb = embeddings(&a.embeddings)?;
    let mode = match a.mode {
        EncodeModeArg::Global => EncodeMode::Global,
        EncodeModeArg::Topk => EncodeMode::Retrieval {
            k: a.k,
            scope: match a.scope {
                ScopeArg::Factor => RetrievalScope::PerFactor,
                ScopeArg::Global => RetrievalScope::Global,
            },
        },
    };
    let cfg = EncodeConfig {
        bins: a.bins,
        mode,
        ..Default::default()
    };
    let mut out = format!(
        "# anchors\t{:08x}\n# bins\t{}\n# mode\t{:?}\nid\tprefix\n",
        anchors.checksum(),
        a.bins,
        a.mode
    );
    for (i, id) in emb.ids().iter().enumerate() {
        let prefix =
            encode(&emb.row_f64(i), &anchors, &cfg).with_context(|| format!("row {id}"))?;
        let _ = writeln!(out, "{id}\t{}", prefix.render());
    }
    emit(a.out.as_deref(), &out)
}

fn topk(a: &TopkArgs) -> Result<()> {
    let anchors = load_anchors(&a.anchors)?;
    let emb = embeddings(&a.embeddings)?;
    let mut out = format!(
        "# anchors\t{:08x}\n# k\t{}\nid\tanchors\n",
        anchors.checksum(),
        a.k
    );
    for (i, id) in emb.ids().iter().enumerate() {
        let sel = topk_anchors(&emb.row_f64(i), &anchors, a.k)?;
        let names: Vec<String> = sel.iter().map(|&g| anchors.anchor_name(g)).collect();
        let _ = writeln!(out, "{id}\t{}", names.join(","));
    }
    emit(a.out.as_deref(), &out)
}

fn pca_fit(a: &PcaFitArgs, seed: u64) -> Result<()> {
    let emb = embeddings(&a.embeddings)?;
    let solver = match a.solver {
        SolverArg::Auto => PcaSolver::Auto,
        SolverArg::Exact => PcaSolver::Exact,
        SolverArg::Subspace => PcaSolver::Subspace { iterations: 50 },
    };
    let model = fit_pca_with(&emb, a.dim, solver)?;
    save_pca(&model, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(t) = &a.transform {
        save_embeddings(&model.project_matrix(&emb)?, t)
            .with_context(|| format!("writing {}", t.display()))?;
    }
    info!(seed, d = model.d(), r = model.r(), "pca fitted");
    Ok(())
}

fn index_build(a: &IndexBuildArgs, seed: u64) -> Result<()> {
    let emb = maybe_reduce(embeddings(&a.embeddings)?, a.pca.as_deref())?;
    let index = HnswIndex::build(
        &emb,
        HnswParams {
            m: a.m,
            ef_construction: a.efc,
            seed,
        },
    )?;
    save_index(&index, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    info!(
        n = index.len(),
        dim = index.dim(),
        levels = index.max_level() + 1,
        "index written"
    );
    Ok(())
}

fn index_query(a: &IndexQueryArgs) -> Result<()> {
    let index = load_index(&a.index)?;
    let queries = maybe_reduce(embeddings(&a.queries)?, a.pca.as_deref())?;
    let mut out = format!("# k\t{}\n# ef\t{}\nquery\trank\tid\tscore\n", a.k, a.ef);
    for (i, qid) in queries.ids().iter().enumerate() {
        let r = index.query(queries.row(i), a.k, a.ef)?;
        for (rank, (id, score)) in r.ids.iter().zip(&r.scores).enumerate() {
            let _ = writeln!(out, "{qid}\t{}\t{id}\t{score:.6}", rank + 1);
        }
    }
    emit(a.out.as_deref(), &out)
}

fn uniform_matrix(n: usize, d: usize, seed: u64, prefix: &str) -> Result<EmbeddingMatrix> {
    let mut rng = seeded(seed);
    let data: Vec<f32> = (0..n * d).map(|_| rng.random::<f32>()).collect();
    let ids = (0..n).map(|i| format!("{prefix}{i}")).collect();
    Ok(EmbeddingMatrix::new(d, data, ids)?)
}

fn bench(a: &BenchArgs, seed: u64) -> Result<()> {
    let index = match (&a.index, a.random) {
        (Some(p), _) => load_index(p)?,
        (None, Some(n)) => HnswIndex::build(
            &uniform_matrix(n, a.dim, seed, "v")?,
            HnswParams {
                m: a.m,
                ef_construction: a.efc,
                seed,
            },
        )?,
        (None, None) => bail!("pass --index or --random <n>"),
    };
    let queries = match &a.queries {
        Some(q) => maybe_reduce(embeddings(q)?, a.pca.as_deref())?,
        None => uniform_matrix(1000, index.dim(), seed ^ 0x5175_6572, "q")?,
    };
    let r = bench_query_latency(&index, &queries, a.k, a.ef)?;
    let mut out = format!("# seed\t{seed}\n");
    for (k, v) in [
        ("vectors", index.len().to_string()),
        ("dim", index.dim().to_string()),
        ("queries", r.queries.to_string()),
        ("k", r.k.to_string()),
        ("ef", r.ef_search.to_string()),
        ("mean_us", format!("{:.2}", r.mean_us)),
        ("p50_us", format!("{:.2}", r.p50_us)),
        ("p99_us", format!("{:.2}", r.p99_us)),
        ("max_us", format!("{:.2}", r.max_us)),
        ("visited", r.visited.to_string()),
    ] {
        let _ = writeln!(out, "{k}\t{v}");
    }
    emit(a.out.as_deref(), &out)
}

fn geometry(a: &GeometryArgs, seed: u64) -> Result<()> {
    let emb = embeddings(&a.embeddings)?;
    let partition = match a.partition {
        PartitionArg::Labels => {
            let c = corpus(
                a.corpus
                    .as_deref()
                    .context("--partition labels needs --corpus")?,
            )?;
            let factor = match parse_factor_list(&a.factor)?.as_slice() {
                [f] => *f,
                _ => bail!("--factor takes exactly one factor letter"),
            };
            ManifoldPartition::from_corpus(&c, emb.ids(), factor)?
        }
        PartitionArg::Anchors => {
            let anchors = load_anchors(
                a.anchors
                    .as_deref()
                    .context("--partition anchors needs --anchors")?,
            )?;
            ManifoldPartition::from_anchors(&emb, &anchors)?
        }
    };
    let report = GeometryReport::compute(&rows_f64(&emb), &partition)?;
    emit(
        a.out.as_deref(),
        &format!("# seed\t{seed}\n{}", report.to_tsv()),
    )
}

fn purity_cmd(a: &PurityArgs, seed: u64) -> Result<()> {
    let emb = embeddings(&a.embeddings)?;
    let c = a.corpus.as_deref().map(corpus).transpose()?;
    let langs = row_languages(emb.ids(), c.as_ref())?;
    let r = purity(&rows_f64(&emb), &langs)?;
    let mut out = format!("# seed\t{seed}\nlanguage\tpurity\n");
    for (l, p) in &r.per_language {
        let _ = writeln!(out, "{l}\t{p:.6}");
    }
    let _ = writeln!(out, "overall\t{:.6}", r.overall);
    if a.assignments {
        out.push_str("\nid\tgold\tpredicted\n");
        for ((id, gold), pred) in emb.ids().iter().zip(&langs).zip(&r.assignments) {
            let _ = writeln!(out, "{id}\t{gold}\t{pred}");
        }
    }
    emit(a.out.as_deref(), &out)
}

fn consistency(a: &ConsistencyArgs, seed: u64) -> Result<()> {
    let student = embeddings(&a.embeddings)?;
    let anchors = load_anchors(&a.anchors)?;
    let mut out = format!(
        "# seed\t{seed}\n# anchors\t{:08x}\n# topk\t{}\nmetric\tvalue\n",
        anchors.checksum(),
        a.topk
    );
    let sel = |m: &EmbeddingMatrix| anchor_selections(m, &anchors, a.topk);
    let student_sel = sel(&student)?;
    let cross = crosslingual_consistency(&student_sel)?;
    let _ = writeln!(out, "crosslingual_exact\t{:.6}", cross.exact);
    let _ = writeln!(out, "crosslingual_jaccard\t{:.6}", cross.mean_jaccard);
    if let Some(t) = &a.teacher {
        let teacher = embeddings(t)?;
        if teacher.d() != anchors.d() {
            bail!(
                "teacher width {} does not match anchor width {}",
                teacher.d(),
                anchors.d()
            );
        }
        let shared = match a.shared_dim {
            Some(r) => Some(SharedSpace::fit(&teacher, &student, r)?),
            None => None,
        };
        // Selections on both sides use the anchors' own space, so the student
        // must share it.
        let teacher_sel = sel(&teacher)?;
        let paired: BTreeMap<String, Vec<usize>> = student_sel
            .into_iter()
            .filter(|(id, _)| teacher_sel.contains_key(id))
            .collect();
        let agree = retrieval_consistency(&teacher_sel, &paired)?;
        let _ = writeln!(out, "teacher_top1\t{:.6}", agree.exact);
        let _ = writeln!(out, "teacher_jaccard\t{:.6}", agree.mean_jaccard);
        let langs = row_languages(teacher.ids(), None)?;
        for (l, s) in teacher_similarity(&teacher, &student, &langs, shared.as_ref())? {
            let _ = writeln!(out, "teacher_cosine_{l}\t{s:.6}");
        }
    }
    emit(a.out.as_deref(), &out)
}

fn load_config(path: Option<&Path>, seed: u64) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            TrainConfig::parse(&text).with_context(|| format!("config {}", p.display()))?
        }
        None => TrainConfig::default(),
    };
    cfg.seed = seed;
    Ok(cfg)
}

fn train_toy(a: &TrainToyArgs, seed: u64) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref(), seed)?;
    if let Some(s) = a.ecr {
        cfg.ecr = s == Switch::On;
    }
    if let Some(f) = &a.factors {
        cfg.factors = parse_factor_list(f)?;
    }
    if let Some(b) = a.bins {
        cfg.bins = b;
    }
    if let Some(g) = a.grad_clip {
        cfg.grad_clip = g;
    }
    cfg.validate()?;
    let data = ExperimentData::synthetic(&cfg)?;
    let anchors = a.anchors.as_deref().map(load_anchors).transpose()?;
    if a.paired {
        if anchors.is_some() {
            bail!("--anchors cannot be combined with --paired");
        }
        let r = run_experiment(&data, &cfg)?;
        let text = format!("{}\n{}", r.baseline.render(), r.ecr.render());
        emit(a.out.as_deref(), &text)?;
        if let Some(t) = &a.table {
            write_atomic(t, r.table().as_bytes())?;
        }
        return Ok(());
    }
    let label = if cfg.ecr { "ecr" } else { "baseline" };
    let r = run_arm(&data, &cfg, label, anchors.as_ref())?;
    if let Some(d) = r.diverged_at {
        tracing::warn!(step = d, "training diverged");
    }
    emit(a.out.as_deref(), &r.render())?;
    if let Some(t) = &a.table {
        write_atomic(
            t,
            ecr_core::toytrain::comparison_table(
                seed,
                &[ecr_core::toytrain::ComparisonRow::from_report(&r)],
            )
            .as_bytes(),
        )?;
    }
    Ok(())
}

fn make_synthetic(a: &MakeSyntheticArgs, seed: u64) -> Result<()> {
    let p = ecr_core::toytrain::SyntheticParams {
        seed,
        n_per_lang: a.n_per_lang,
        n_factors: a.n_factors,
        d: a.dim,
        ..Default::default()
    };
    let s = make_synthetic_corpus(&p)?;
    save_corpus(&s.corpus, &a.corpus_out)
        .with_context(|| format!("writing {}", a.corpus_out.display()))?;
    save_embeddings(&s.teacher, &a.embeddings_out)
        .with_context(|| format!("writing {}", a.embeddings_out.display()))?;
    info!(
        records = s.corpus.len(),
        rows = s.teacher.n(),
        "synthetic corpus written"
    );
    Ok(())
}

fn report(a: &ReportArgs, seed: u64) -> Result<()> {
    let cfg = load_config(a.config.as_deref(), seed)?;
    cfg.validate()?;
    let data = ExperimentData::synthetic(&cfg)?;
    let reports = ablation(&data, &cfg, &ABLATION_SUBSETS)?;
    emit(a.out.as_deref(), &ablation_table(seed, &reports))
}
