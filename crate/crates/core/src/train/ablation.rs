//! Train-and-test runs over ablation modes and replicate seeds.

use serde::{Deserialize, Serialize};

use super::{evaluate, train_loop, History, MetricsReport, TrainError, TrainOptions};
use crate::config::{Ablation, ModelConfig, TrainConfig};
use crate::model::{EncodedExample, Model};
use crate::tensor::Tensor;

pub struct Splits<'a> {
    pub train: &'a [EncodedExample],
    pub val: &'a [EncodedExample],
    pub test: &'a [EncodedExample],
    pub vocab_size: usize,
    pub vectors: Option<&'a Tensor>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub replicate: u64,
    pub model_seed: u64,
    pub train_seed: u64,
    pub test: MetricsReport,
    pub history: History,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeResult {
    pub mode: String,
    pub runs: Vec<RunResult>,
    pub mean_test_acc: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub modes: Vec<ModeResult>,
}

/// One training run; replicate `r` offsets both the model and the shuffle
/// seed by `r`.
pub fn run_once(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    splits: &Splits<'_>,
    replicate: u64,
    opts: &TrainOptions,
) -> Result<(Model, RunResult), TrainError> {
    let mcfg = ModelConfig {
        seed: model_cfg.seed + replicate,
        ..model_cfg.clone()
    };
    let tcfg = TrainConfig {
        seed: train_cfg.seed + replicate,
        ..train_cfg.clone()
    };
    let mcfg_seed = mcfg.seed;
    let model = Model::new(mcfg, splits.vocab_size, splits.vectors.cloned())?;
    let out = train_loop(model, splits.train, splits.val, &tcfg, opts)?;
    let test = evaluate(&out.model, splits.test)?;
    Ok((
        out.model,
        RunResult {
            replicate,
            model_seed: mcfg_seed,
            train_seed: tcfg.seed,
            test,
            history: out.history,
        },
    ))
}

/// Replicates `0..train_cfg.replicates`.
pub fn run_replicates(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    splits: &Splits<'_>,
    opts: &TrainOptions,
) -> Result<Vec<RunResult>, TrainError> {
    (0..train_cfg.replicates as u64)
        .map(|r| run_once(model_cfg, train_cfg, splits, r, opts).map(|(_, res)| res))
        .collect()
}

pub fn mean_acc(runs: &[RunResult]) -> f64 {
    runs.iter().map(|r| r.test.acc).sum::<f64>() / runs.len() as f64
}

pub fn run_ablation(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    splits: &Splits<'_>,
    modes: &[Ablation],
    opts: &TrainOptions,
) -> Result<AblationReport, TrainError> {
    let mut out = Vec::new();
    for &mode in modes {
        let cfg = ModelConfig {
            ablation: mode,
            ..model_cfg.clone()
        };
        let runs = run_replicates(&cfg, train_cfg, splits, opts)?;
        out.push(ModeResult {
            mode: mode.name().to_string(),
            mean_test_acc: mean_acc(&runs),
            runs,
        });
    }
    Ok(AblationReport { modes: out })
}
