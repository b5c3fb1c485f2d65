//! Flat `key = value` configuration for toy training runs.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! errors. [`TrainConfig::render`] writes every key, so its output parses
//! back to an identical config.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::codec::{EncodeConfig, EncodeMode, RetrievalScope};
use crate::error::{EcrError, Result};
use crate::factor::{format_factor_list, parse_factor_list, FactorCode};

use super::data::SyntheticParams;

/// When control prefixes are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PrefixMode {
    /// From the current model at every step.
    #[default]
    Recompute,
    /// Once, from the initial model.
    Frozen,
}

impl FromStr for PrefixMode {
    type Err = EcrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recompute" => Ok(PrefixMode::Recompute),
            "frozen" => Ok(PrefixMode::Frozen),
            _ => Err(EcrError::invalid(format!("unknown prefix mode `{s}`"))),
        }
    }
}

impl PrefixMode {
    fn as_str(self) -> &'static str {
        match self {
            PrefixMode::Recompute => "recompute",
            PrefixMode::Frozen => "frozen",
        }
    }
}

/// Which tokens the prefix embedding `h` pools over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PrefixSource {
    /// The whole sequence `x`.
    #[default]
    Sequence,
    /// Only the tokens before the gold answer position.
    Query,
}

impl FromStr for PrefixSource {
    type Err = EcrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequence" => Ok(PrefixSource::Sequence),
            "query" => Ok(PrefixSource::Query),
            _ => Err(EcrError::invalid(format!("unknown prefix source `{s}`"))),
        }
    }
}

impl PrefixSource {
    fn as_str(self) -> &'static str {
        match self {
            PrefixSource::Sequence => "sequence",
            PrefixSource::Query => "query",
        }
    }
}

/// Manifold partition used for geometry snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionChoice {
    Labels(FactorCode),
    Anchors,
}

impl FromStr for PartitionChoice {
    type Err = EcrError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "anchors" {
            return Ok(PartitionChoice::Anchors);
        }
        match parse_factor_list(s)?.as_slice() {
            [f] if f.corpus_field().is_some() => Ok(PartitionChoice::Labels(*f)),
            _ => Err(EcrError::invalid(format!(
                "partition must be one of T, L, E, I or anchors, got `{s}`"
            ))),
        }
    }
}

impl std::fmt::Display for PartitionChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PartitionChoice::Labels(c) => write!(f, "{c}"),
            PartitionChoice::Anchors => f.write_str("anchors"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    /// Stop after this many optimizer steps; 0 means no cap.
    pub max_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub d: usize,
    pub init_scale: f64,

    pub ecr: bool,
    pub bins: u32,
    pub factors: Vec<FactorCode>,
    pub mode: EncodeMode,
    pub prefix: PrefixMode,
    pub prefix_source: PrefixSource,

    pub partition: PartitionChoice,
    /// Anchors selected per row for the consistency statistics.
    pub consistency_topk: usize,

    pub data: SyntheticParams,
    pub test_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 20,
            max_steps: 0,
            batch_size: 32,
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.1,
            grad_clip: 0.0,
            d: 32,
            init_scale: 0.1,
            ecr: true,
            bins: 8,
            factors: vec![FactorCode::T, FactorCode::L, FactorCode::E, FactorCode::I],
            mode: EncodeMode::Global,
            prefix: PrefixMode::Recompute,
            prefix_source: PrefixSource::Sequence,
            partition: PartitionChoice::Labels(FactorCode::T),
            consistency_topk: 3,
            data: SyntheticParams::default(),
            test_fraction: 0.2,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| EcrError::invalid(format!("bad value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        _ => Err(EcrError::invalid(format!(
            "bad value `{value}` for `{key}`"
        ))),
    }
}

impl TrainConfig {
    pub fn encode_config(&self) -> EncodeConfig {
        EncodeConfig {
            bins: self.bins,
            mode: self.mode,
            ..Default::default()
        }
    }

    /// Sets one key; used by the file parser and command-line overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "max_steps" => self.max_steps = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "beta1" => self.beta1 = parse(key, v)?,
            "beta2" => self.beta2 = parse(key, v)?,
            "eps" => self.eps = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "grad_clip" => self.grad_clip = parse(key, v)?,
            "d" => self.d = parse(key, v)?,
            "init_scale" => self.init_scale = parse(key, v)?,
            "ecr" => self.ecr = parse_bool(key, v)?,
            "bins" => self.bins = parse(key, v)?,
            "factors" => self.factors = parse_factor_list(v)?,
            "mode" => {
                self.mode = match v {
                    "global" => EncodeMode::Global,
                    "retrieval" => EncodeMode::Retrieval {
                        k: 1,
                        scope: RetrievalScope::PerFactor,
                    },
                    _ => return Err(EcrError::invalid(format!("bad value `{v}` for `mode`"))),
                }
            }
            "topk" => {
                let k: usize = parse(key, v)?;
                if let EncodeMode::Retrieval { scope, .. } = self.mode {
                    self.mode = EncodeMode::Retrieval { k, scope };
                } else {
                    return Err(EcrError::invalid(
                        "`topk` needs `mode = retrieval` set first",
                    ));
                }
            }
            "scope" => {
                let scope = match v {
                    "factor" => RetrievalScope::PerFactor,
                    "global" => RetrievalScope::Global,
                    _ => return Err(EcrError::invalid(format!("bad value `{v}` for `scope`"))),
                };
                if let EncodeMode::Retrieval { k, .. } = self.mode {
                    self.mode = EncodeMode::Retrieval { k, scope };
                } else {
                    return Err(EcrError::invalid(
                        "`scope` needs `mode = retrieval` set first",
                    ));
                }
            }
            "prefix" => self.prefix = v.parse()?,
            "prefix_source" => self.prefix_source = v.parse()?,
            "partition" => self.partition = v.parse()?,
            "consistency_topk" => self.consistency_topk = parse(key, v)?,
            "test_fraction" => self.test_fraction = parse(key, v)?,
            "n_per_lang" => self.data.n_per_lang = parse(key, v)?,
            "n_factors" => self.data.n_factors = parse(key, v)?,
            "lang_vocab" => self.data.lang_vocab = parse(key, v)?,
            "query_len" => self.data.query_len = parse(key, v)?,
            "answer_len" => self.data.answer_len = parse(key, v)?,
            "cue_rate" => self.data.cue_rate = parse(key, v)?,
            "noise" => self.data.noise = parse(key, v)?,
            other => return Err(EcrError::invalid(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| EcrError::Parse {
                line: i + 1,
                message: "expected `key = value`".into(),
            })?;
            cfg.set(k, v).map_err(|e| EcrError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(EcrError::invalid(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.grad_clip >= 0.0) {
            return bad("grad_clip must be non-negative");
        }
        if self.bins < 2 {
            return bad("bins must be at least 2");
        }
        if self.ecr && self.factors.is_empty() {
            return bad("ecr needs at least one factor");
        }
        if self.factors.contains(&FactorCode::P) {
            return bad("factor P has no labels in the toy corpus");
        }
        if self.consistency_topk == 0 {
            return bad("consistency_topk must be positive");
        }
        Ok(())
    }

    /// Synthetic corpus settings, with seed and dimension taken from the run.
    pub fn synthetic(&self) -> SyntheticParams {
        SyntheticParams {
            seed: self.seed,
            d: self.d,
            ..self.data.clone()
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("epochs", self.epochs.to_string());
        kv("max_steps", self.max_steps.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("learning_rate", self.learning_rate.to_string());
        kv("beta1", self.beta1.to_string());
        kv("beta2", self.beta2.to_string());
        kv("eps", self.eps.to_string());
        kv("weight_decay", self.weight_decay.to_string());
        kv("grad_clip", self.grad_clip.to_string());
        kv("d", self.d.to_string());
        kv("init_scale", self.init_scale.to_string());
        kv("ecr", if self.ecr { "on" } else { "off" }.to_string());
        kv("bins", self.bins.to_string());
        kv("factors", format_factor_list(&self.factors));
        match self.mode {
            EncodeMode::Global => kv("mode", "global".into()),
            EncodeMode::Retrieval { k, scope } => {
                kv("mode", "retrieval".into());
                kv("topk", k.to_string());
                let scope = match scope {
                    RetrievalScope::PerFactor => "factor",
                    RetrievalScope::Global => "global",
                };
                kv("scope", scope.into());
            }
        }
        kv("prefix", self.prefix.as_str().into());
        kv("prefix_source", self.prefix_source.as_str().into());
        kv("partition", self.partition.to_string());
        kv("consistency_topk", self.consistency_topk.to_string());
        kv("test_fraction", self.test_fraction.to_string());
        kv("n_per_lang", self.data.n_per_lang.to_string());
        kv("n_factors", self.data.n_factors.to_string());
        kv("lang_vocab", self.data.lang_vocab.to_string());
        kv("query_len", self.data.query_len.to_string());
        kv("answer_len", self.data.answer_len.to_string());
        kv("cue_rate", self.data.cue_rate.to_string());
        kv("noise", self.data.noise.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_optimizer() {
        let c = TrainConfig::default();
        assert_eq!(
            (c.beta1, c.beta2, c.weight_decay, c.grad_clip),
            (0.9, 0.95, 0.1, 0.0)
        );
    }

    #[test]
    fn render_parse_round_trip() {
        let mut c = TrainConfig::default();
        c.set("mode", "retrieval").unwrap();
        c.set("topk", "2").unwrap();
        c.set("scope", "global").unwrap();
        c.set("factors", "L,E").unwrap();
        c.set("prefix", "frozen").unwrap();
        c.set("prefix_source", "query").unwrap();
        c.set("learning_rate", "0.003").unwrap();
        c.set("partition", "anchors").unwrap();
        assert_eq!(TrainConfig::parse(&c.render()).unwrap(), c);
        assert_eq!(
            TrainConfig::parse(&TrainConfig::default().render()).unwrap(),
            TrainConfig::default()
        );
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = TrainConfig::parse("# comment\n\nseed = 3\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, EcrError::Parse { line: 4, .. }), "{err}");
        assert!(matches!(
            TrainConfig::parse("epochs 3"),
            Err(EcrError::Parse { line: 1, .. })
        ));
        assert!(TrainConfig::parse("batch_size = 0").is_err());
        assert!(TrainConfig::parse("topk = 2").is_err());
    }
}
