//! Desk-scale training harness for control-token conditioning.
//!
//! A [`ToyModel`] embeds tokens, mean-pools them, and projects to the base
//! vocabulary. In a conditioned run each sample's pooled embedding `h` is
//! encoded against frozen anchors, the resulting control tokens are
//! prepended, and the model trains on `[prefix, x]` with next-token cross
//! entropy on the positions of `x` only.

mod config;
mod data;
mod experiment;
mod model;
mod optim;

pub use config::{PartitionChoice, PrefixMode, PrefixSource, TrainConfig};
pub use data::{
    dataset_from_corpus, make_synthetic_corpus, tokenize, Dataset, Sample, SyntheticCorpus,
    SyntheticParams,
};
pub use experiment::{
    ablation, ablation_table, build_inputs, comparison_table, nll_eval, run_arm, run_experiment,
    step_on_inputs, task_accuracy, train_step, ComparisonRow, EcrContext, EpochRecord,
    ExperimentData, ExperimentReport, Input, PairedReport, ABLATION_SUBSETS, DIVERGENCE_LOSS,
    DIVERGENCE_STEPS,
};
pub use model::{log_sum_exp, ToyModel, BOS};
pub use optim::{clip_grad_norm, AdamW};
