//! Run configuration as flat `section.key = value` text.
//!
//! ```text
//! # comments start with '#'
//! model.hops = 3
//! train.lr = 1e-3
//! data.train = corpus/train.jsonl
//! ```
//!
//! Undotted keys (`hops = 4`) resolve to the unique key with that last
//! segment, which is what `--set hops=4` on the command line relies on.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::tensor::Activation;

/// Bumped whenever the parameter layout or forward computation changes.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("ambiguous config key `{0}`")]
    AmbiguousKey(String),
    #[error("bad value `{value}` for `{key}`: {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoreMode {
    /// `LeakyReLU(aᵀ[W h_i ‖ W h_j])`
    Gat,
    /// `LeakyReLU((W h_i)·(W h_j))`
    Dot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateBackward {
    /// Binary mask treated as a constant in the backward pass.
    Hard,
    /// Mask replaced by `sigmoid((s - t) / gate_tau)` in both passes.
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SoftmaxSupport {
    Dense,
    Restricted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ablation {
    Full,
    NoSemantic,
    NoMsa,
    NoKd,
    MhGat,
}

impl Ablation {
    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoSemantic => "no_semantic",
            Ablation::NoMsa => "no_msa",
            Ablation::NoKd => "no_kd",
            Ablation::MhGat => "mh_gat",
        }
    }

    pub const ALL: [Ablation; 5] = [
        Ablation::Full,
        Ablation::NoSemantic,
        Ablation::NoMsa,
        Ablation::NoKd,
        Ablation::MhGat,
    ];
}

impl FromStr for Ablation {
    type Err = String;

    /// Accepts a comma-separated list but only a single mode.
    fn from_str(s: &str) -> Result<Self, String> {
        let modes: Vec<&str> = s.split(',').map(str::trim).filter(|m| !m.is_empty()).collect();
        if modes.contains(&"no_msa") && modes.contains(&"no_semantic") {
            return Err("no_msa and no_semantic together leave nothing to fuse".into());
        }
        if modes.len() != 1 {
            return Err("exactly one ablation mode is required".into());
        }
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == modes[0])
            .ok_or_else(|| format!("expected one of full, no_semantic, no_msa, no_kd, mh_gat"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmbeddingMode {
    Trainable,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecayMode {
    /// `lr / (1 + decay · step)`
    PerStep,
    /// `lr · (1 - decay)^epoch`
    PerEpoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub hops: usize,
    pub d_hidden: usize,
    /// `None` means `4 · d_model`.
    pub d_ffn: Option<usize>,
    pub ffn_activation: Activation,
    pub leaky_slope: f64,
    pub score: ScoreMode,
    pub gate: GateBackward,
    pub gate_tau: f64,
    pub softmax_support: SoftmaxSupport,
    pub alpha: f64,
    pub beta: f64,
    pub ablation: Ablation,
    pub embedding: EmbeddingMode,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 96,
            heads: 12,
            hops: 3,
            d_hidden: 384,
            d_ffn: None,
            ffn_activation: Activation::Relu,
            leaky_slope: 0.2,
            score: ScoreMode::Gat,
            gate: GateBackward::Hard,
            gate_tau: 0.1,
            softmax_support: SoftmaxSupport::Dense,
            alpha: 0.1,
            beta: 0.1,
            ablation: Ablation::Full,
            embedding: EmbeddingMode::Trainable,
            max_len: 150,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn d_head(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn d_ffn(&self) -> usize {
        self.d_ffn.unwrap_or(4 * self.d_model)
    }

    pub fn uses_semantic(&self) -> bool {
        self.ablation != Ablation::NoSemantic
    }

    pub fn uses_graph(&self) -> bool {
        self.ablation != Ablation::NoMsa
    }

    pub fn uses_keywords(&self) -> bool {
        self.ablation != Ablation::NoKd
    }

    /// `α` and `β` after the ablation is applied (`no_kd` forces 1 and 0).
    pub fn loss_weights(&self) -> (f64, f64) {
        if self.ablation == Ablation::NoKd {
            (1.0, 0.0)
        } else {
            (self.alpha, self.beta)
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.heads == 0 || self.d_model == 0 || self.d_model % self.heads != 0 {
            return bad("d_model must be a positive multiple of heads");
        }
        if self.hops == 0 {
            return bad("hops must be at least 1");
        }
        if self.d_hidden == 0 || self.d_ffn() == 0 || self.max_len == 0 {
            return bad("d_hidden, d_ffn and max_len must be positive");
        }
        if !(0.0..=1.0).contains(&self.alpha) || !(0.0..=1.0).contains(&self.beta) {
            return bad("alpha and beta must lie in [0, 1]");
        }
        if !(self.gate_tau > 0.0) {
            return bad("gate_tau must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub decay: f64,
    pub decay_mode: DecayMode,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub replicates: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            decay: 1e-6,
            decay_mode: DecayMode::PerStep,
            batch_size: 32,
            patience: 5,
            max_epochs: 30,
            seed: 0,
            replicates: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.lr > 0.0) {
            return Err(ConfigError::Invalid("lr must be positive".into()));
        }
        if self.patience == 0 || self.batch_size == 0 || self.max_epochs == 0 || self.replicates == 0 {
            return Err(ConfigError::Invalid(
                "patience, batch_size, max_epochs and replicates must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorpusFormat {
    Jsonl,
    Conllu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub format: CorpusFormat,
    pub vectors: Option<PathBuf>,
    pub keywords_k: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: None,
            val: None,
            test: None,
            format: CorpusFormat::Jsonl,
            vectors: None,
            keywords_k: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub output_dir: Option<PathBuf>,
}

const KEYS: &[&str] = &[
    "model.d_model",
    "model.heads",
    "model.hops",
    "model.d_hidden",
    "model.d_ffn",
    "model.ffn_activation",
    "model.leaky_slope",
    "model.score",
    "model.gate",
    "model.gate_tau",
    "model.softmax_support",
    "model.alpha",
    "model.beta",
    "model.ablation",
    "model.embedding",
    "model.max_len",
    "model.seed",
    "train.lr",
    "train.decay",
    "train.decay_mode",
    "train.batch_size",
    "train.patience",
    "train.max_epochs",
    "train.seed",
    "train.replicates",
    "data.train",
    "data.val",
    "data.test",
    "data.format",
    "data.vectors",
    "data.keywords_k",
    "output.dir",
];

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

fn bad(key: &str, value: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.into(),
    }
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty() && value != "none").then(|| PathBuf::from(value))
}

fn path_text(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or_else(|| "none".to_string(), |p| p.display().to_string())
}

fn activation_name(a: Activation) -> String {
    match a {
        Activation::Relu => "relu".into(),
        Activation::Sigmoid => "sigmoid".into(),
        Activation::LeakyRelu(s) => format!("leaky_relu:{s}"),
    }
}

/// Resolves a possibly undotted key to its canonical dotted form.
pub fn resolve_key(key: &str) -> Result<&'static str, ConfigError> {
    let key = key.trim();
    if let Some(k) = KEYS.iter().find(|k| **k == key) {
        return Ok(k);
    }
    if key.contains('.') {
        return Err(ConfigError::UnknownKey(key.to_string()));
    }
    let matches: Vec<&&str> = KEYS
        .iter()
        .filter(|k| k.rsplit('.').next() == Some(key))
        .collect();
    match matches.as_slice() {
        [one] => Ok(one),
        [] => Err(ConfigError::UnknownKey(key.to_string())),
        _ => Err(ConfigError::AmbiguousKey(key.to_string())),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.validate()?;
        self.train.validate()
    }

    /// Applies a `key=value` override such as `hops=4`.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or(ConfigError::Syntax { line: 0 })?;
        self.set(k, v)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = resolve_key(key)?;
        let value = value.trim();
        let m = &mut self.model;
        let t = &mut self.train;
        let d = &mut self.data;
        match key {
            "model.d_model" => m.d_model = parse_num(key, value)?,
            "model.heads" => m.heads = parse_num(key, value)?,
            "model.hops" => m.hops = parse_num(key, value)?,
            "model.d_hidden" => m.d_hidden = parse_num(key, value)?,
            "model.d_ffn" => {
                m.d_ffn = if value == "auto" {
                    None
                } else {
                    Some(parse_num(key, value)?)
                }
            }
            "model.ffn_activation" => {
                m.ffn_activation = match value {
                    "relu" => Activation::Relu,
                    "sigmoid" => Activation::Sigmoid,
                    v if v.starts_with("leaky_relu") => {
                        let slope = v.split_once(':').map_or(Ok(0.2), |(_, s)| parse_num(key, s))?;
                        Activation::LeakyRelu(slope)
                    }
                    _ => return Err(bad(key, value, "expected relu, sigmoid or leaky_relu[:slope]")),
                }
            }
            "model.leaky_slope" => m.leaky_slope = parse_num(key, value)?,
            "model.score" => {
                m.score = match value {
                    "gat" => ScoreMode::Gat,
                    "dot" => ScoreMode::Dot,
                    _ => return Err(bad(key, value, "expected gat or dot")),
                }
            }
            "model.gate" => {
                m.gate = match value {
                    "hard" => GateBackward::Hard,
                    "soft" => GateBackward::Soft,
                    _ => return Err(bad(key, value, "expected hard or soft")),
                }
            }
            "model.gate_tau" => m.gate_tau = parse_num(key, value)?,
            "model.softmax_support" => {
                m.softmax_support = match value {
                    "dense" => SoftmaxSupport::Dense,
                    "restricted" => SoftmaxSupport::Restricted,
                    _ => return Err(bad(key, value, "expected dense or restricted")),
                }
            }
            "model.alpha" => m.alpha = parse_num(key, value)?,
            "model.beta" => m.beta = parse_num(key, value)?,
            "model.ablation" => m.ablation = value.parse().map_err(|e: String| bad(key, value, e))?,
            "model.embedding" => {
                m.embedding = match value {
                    "trainable" => EmbeddingMode::Trainable,
                    "external" => EmbeddingMode::External,
                    _ => return Err(bad(key, value, "expected trainable or external")),
                }
            }
            "model.max_len" => m.max_len = parse_num(key, value)?,
            "model.seed" => m.seed = parse_num(key, value)?,
            "train.lr" => t.lr = parse_num(key, value)?,
            "train.decay" => t.decay = parse_num(key, value)?,
            "train.decay_mode" => {
                t.decay_mode = match value {
                    "step" => DecayMode::PerStep,
                    "epoch" => DecayMode::PerEpoch,
                    _ => return Err(bad(key, value, "expected step or epoch")),
                }
            }
            "train.batch_size" => t.batch_size = parse_num(key, value)?,
            "train.patience" => t.patience = parse_num(key, value)?,
            "train.max_epochs" => t.max_epochs = parse_num(key, value)?,
            "train.seed" => t.seed = parse_num(key, value)?,
            "train.replicates" => t.replicates = parse_num(key, value)?,
            "data.train" => d.train = opt_path(value),
            "data.val" => d.val = opt_path(value),
            "data.test" => d.test = opt_path(value),
            "data.format" => {
                d.format = match value {
                    "jsonl" => CorpusFormat::Jsonl,
                    "conllu" => CorpusFormat::Conllu,
                    _ => return Err(bad(key, value, "expected jsonl or conllu")),
                }
            }
            "data.vectors" => d.vectors = opt_path(value),
            "data.keywords_k" => d.keywords_k = parse_num(key, value)?,
            "output.dir" => self.output_dir = opt_path(value),
            _ => unreachable!("key list and match arms disagree: {key}"),
        }
        Ok(())
    }

    /// Canonical `key = value` text for one section (`model`, `train`,
    /// `data`, `output`) or all of them.
    pub fn to_text(&self, section: Option<&str>) -> String {
        let mut out = String::new();
        for key in KEYS {
            if section.map_or(true, |s| key.starts_with(&format!("{s}."))) {
                let _ = writeln!(out, "{key} = {}", self.get(key));
            }
        }
        out
    }

    pub fn get(&self, key: &str) -> String {
        let m = &self.model;
        let t = &self.train;
        let d = &self.data;
        match key {
            "model.d_model" => m.d_model.to_string(),
            "model.heads" => m.heads.to_string(),
            "model.hops" => m.hops.to_string(),
            "model.d_hidden" => m.d_hidden.to_string(),
            "model.d_ffn" => m.d_ffn.map_or_else(|| "auto".into(), |v| v.to_string()),
            "model.ffn_activation" => activation_name(m.ffn_activation),
            "model.leaky_slope" => m.leaky_slope.to_string(),
            "model.score" => match m.score {
                ScoreMode::Gat => "gat".into(),
                ScoreMode::Dot => "dot".into(),
            },
            "model.gate" => match m.gate {
                GateBackward::Hard => "hard".into(),
                GateBackward::Soft => "soft".into(),
            },
            "model.gate_tau" => m.gate_tau.to_string(),
            "model.softmax_support" => match m.softmax_support {
                SoftmaxSupport::Dense => "dense".into(),
                SoftmaxSupport::Restricted => "restricted".into(),
            },
            "model.alpha" => m.alpha.to_string(),
            "model.beta" => m.beta.to_string(),
            "model.ablation" => m.ablation.name().into(),
            "model.embedding" => match m.embedding {
                EmbeddingMode::Trainable => "trainable".into(),
                EmbeddingMode::External => "external".into(),
            },
            "model.max_len" => m.max_len.to_string(),
            "model.seed" => m.seed.to_string(),
            "train.lr" => t.lr.to_string(),
            "train.decay" => t.decay.to_string(),
            "train.decay_mode" => match t.decay_mode {
                DecayMode::PerStep => "step".into(),
                DecayMode::PerEpoch => "epoch".into(),
            },
            "train.batch_size" => t.batch_size.to_string(),
            "train.patience" => t.patience.to_string(),
            "train.max_epochs" => t.max_epochs.to_string(),
            "train.seed" => t.seed.to_string(),
            "train.replicates" => t.replicates.to_string(),
            "data.train" => path_text(&d.train),
            "data.val" => path_text(&d.val),
            "data.test" => path_text(&d.test),
            "data.format" => match d.format {
                CorpusFormat::Jsonl => "jsonl".into(),
                CorpusFormat::Conllu => "conllu".into(),
            },
            "data.vectors" => path_text(&d.vectors),
            "data.keywords_k" => d.keywords_k.to_string(),
            "output.dir" => path_text(&self.output_dir),
            _ => String::new(),
        }
    }
}

impl ModelConfig {
    /// Canonical text of the model section.
    pub fn to_text(&self) -> String {
        RunConfig {
            model: self.clone(),
            ..RunConfig::default()
        }
        .to_text(Some("model"))
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        Ok(RunConfig::parse(text)?.model)
    }

    /// SHA-256 over the model format version and the canonical model text.
    pub fn config_hash(&self) -> String {
        config_hash(&self.to_text())
    }
}

pub fn config_hash(model_text: &str) -> String {
    let mut h = Sha256::new();
    h.update(format!("msynfd-model-v{MODEL_FORMAT_VERSION}\n"));
    h.update(model_text.as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
