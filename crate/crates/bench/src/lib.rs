//! Fixtures shared by the benchmarks.

use ecr_core::anchors::{build_anchor_set, AnchorMode, AnchorParams, AnchorSet};
use ecr_core::corpus::EmbeddingMatrix;
use ecr_core::factor::FactorCode;
use ecr_core::rng::seeded;
use ecr_core::toytrain::{make_synthetic_corpus, SyntheticParams};
use rand::Rng;

/// `n` rows of U[0,1) entries, ids `v0..`.
pub fn uniform(n: usize, d: usize, seed: u64) -> EmbeddingMatrix {
    let mut rng = seeded(seed);
    let data = (0..n * d).map(|_| rng.random::<f32>()).collect();
    EmbeddingMatrix::new(d, data, (0..n).map(|i| format!("v{i}")).collect()).expect("valid shape")
}

/// Synthetic teacher embeddings with their T,L,E,I label anchors.
pub fn labelled(n_per_lang: usize, d: usize) -> (EmbeddingMatrix, AnchorSet) {
    let s = make_synthetic_corpus(&SyntheticParams {
        n_per_lang,
        d,
        ..Default::default()
    })
    .expect("synthetic corpus");
    let params = AnchorParams {
        mode: AnchorMode::Label,
        ..Default::default()
    };
    let anchors = build_anchor_set(
        &s.teacher,
        Some(&s.corpus),
        &[FactorCode::T, FactorCode::L, FactorCode::E, FactorCode::I],
        &params,
    )
    .expect("anchors");
    (s.teacher, anchors)
}
