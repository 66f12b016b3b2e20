use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::metrics::{compute_metrics, MetricsReport};
use super::TrainError;
use crate::config::TrainConfig;
use crate::model::{EncodedExample, Mode, Model};
use crate::tensor::Tensor;

/// Patience-based stopping on strict improvement of a score.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: Option<f64>,
    pub best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records an epoch's score; returns whether it is a new best.
    pub fn observe(&mut self, epoch: usize, score: f64) -> bool {
        if self.best.map_or(true, |b| score > b) {
            self.best = Some(score);
            self.best_epoch = epoch;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub lr: f64,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Mean batch loss of every optimizer step.
    pub step_losses: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Stop after this many optimizer steps (used by parity checks).
    pub max_steps: Option<usize>,
    /// Print one line per epoch to stderr.
    pub verbose: bool,
}

pub struct TrainOutcome {
    pub model: Model,
    pub history: History,
}

/// P(fake) for each example, in input order.
pub fn predict_scores(model: &Model, examples: &[EncodedExample]) -> Result<Vec<f64>, TrainError> {
    examples
        .par_iter()
        .map(|e| model.predict(e, Mode::Infer).map(|p| p.p_fake()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(TrainError::from)
}

pub fn evaluate(model: &Model, examples: &[EncodedExample]) -> Result<MetricsReport, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::EmptySplit("evaluation"));
    }
    let scores = predict_scores(model, examples)?;
    let labels: Vec<u8> = examples.iter().map(|e| e.label).collect();
    Ok(compute_metrics(&scores, &labels))
}

pub fn accuracy(model: &Model, examples: &[EncodedExample]) -> Result<f64, TrainError> {
    Ok(evaluate(model, examples)?.acc)
}

/// Mean loss and gradient over a batch. Per-example work runs in parallel;
/// the reduction walks the batch in order so results do not depend on the
/// thread count.
pub fn batch_gradient(model: &Model, batch: &[&EncodedExample]) -> Result<(f64, Vec<Option<Tensor>>), TrainError> {
    let per: Vec<(f64, Vec<Option<Tensor>>)> = batch
        .par_iter()
        .map(|e| model.loss_and_grads(e))
        .collect::<Result<Vec<_>, _>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut total: Vec<Option<Tensor>> = vec![None; model.store.len()];
    for (l, grads) in per {
        loss += l;
        for (acc, g) in total.iter_mut().zip(grads) {
            if let Some(g) = g {
                match acc {
                    Some(a) => a.add_assign(&g),
                    None => *acc = Some(g),
                }
            }
        }
    }
    for g in total.iter_mut().flatten() {
        g.scale_assign(scale);
    }
    Ok((loss * scale, total))
}

/// Seeded-shuffle epochs of mini-batch Adam with early stopping on
/// validation accuracy. Returns the best-validation model.
pub fn train_loop(
    model: Model,
    train: &[EncodedExample],
    val: &[EncodedExample],
    cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if val.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let mut model = model;
    let mut opt = Adam::from_config(&model.store, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut stop = EarlyStopping::new(cfg.patience);
    let mut best_store = model.store.clone();
    let mut history = History::default();
    let mut order: Vec<usize> = (0..train.len()).collect();

    'epochs: for epoch in 1..=cfg.max_epochs {
        opt.set_epoch(epoch as u64 - 1);
        order.shuffle(&mut rng);
        let lr = opt.current_lr();
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let mut hit_max = false;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&EncodedExample> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = batch_gradient(&model, &batch)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFinite { epoch, step: opt.steps() });
            }
            opt.step(&mut model.store, &grads);
            history.step_losses.push(loss);
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
            if opts.max_steps.is_some_and(|m| opt.steps() as usize >= m) {
                hit_max = true;
                break;
            }
        }
        let val_acc = accuracy(&model, val)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            val_acc,
            lr,
            steps: opt.steps(),
        });
        if opts.verbose {
            eprintln!(
                "epoch {epoch:3}  loss {:.6}  val_acc {val_acc:.4}  lr {lr:.3e}",
                loss_sum / seen as f64
            );
        }
        if stop.observe(epoch, val_acc) {
            best_store = model.store.clone();
        }
        if hit_max {
            break 'epochs;
        }
        if stop.should_stop() {
            history.stopped_early = true;
            break;
        }
    }
    history.best_epoch = stop.best_epoch;
    history.best_val_acc = stop.best.unwrap_or(0.0);
    model.store = best_store;
    Ok(TrainOutcome { model, history })
}
