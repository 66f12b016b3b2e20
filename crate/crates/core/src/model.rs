//! The full detector: embeddings, graph and semantic encoders, fusion head
//! and the keyword branch, wired according to the configured ablation.

use serde::Serialize;

use crate::config::{ConfigError, EmbeddingMode, ModelConfig};
use crate::graph::HopStack;
use crate::head::{self, pair, DebiasParams, DetectorParams, Prediction};
use crate::params::{Ctx, Init, ParamId, ParamStore};
use crate::saa::{self, SaaHeadTrace, SaaParams, SaaSettings};
use crate::semantic::{self, SemanticParams, SemanticTrace};
use crate::tensor::{BackwardFault, Result, Tape, Tensor, Var};

/// One example after vocabulary lookup and graph construction.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedExample {
    pub id: String,
    pub ids: Vec<usize>,
    pub hops: HopStack,
    /// Never empty; an example without keywords carries the sentinel id.
    pub keyword_ids: Vec<usize>,
    pub label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone)]
pub struct ModelParts {
    pub embedding: ParamId,
    pub kw_embedding: Option<ParamId>,
    pub saa: Option<SaaParams>,
    pub semantic: Option<SemanticParams>,
    pub detector: DetectorParams,
    pub debias: Option<DebiasParams>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub parts: ModelParts,
}

/// Everything inspectable about one forward pass.
#[derive(Debug, Clone, Serialize)]
pub struct ForwardTrace {
    pub saa: Vec<SaaHeadTrace>,
    pub semantic: Option<SemanticTrace>,
    pub pooling: Vec<f64>,
}

pub struct ForwardOutput {
    pub y_main: Var,
    pub y_kw: Option<Var>,
    pub y_fused: Option<Var>,
    /// Present in train mode only.
    pub loss: Option<Var>,
    pub trace: ForwardTrace,
}

impl Model {
    /// Builds a model over a vocabulary of `vocab_size` entries. In
    /// external-embedding mode `vectors` supplies the frozen table.
    pub fn new(config: ModelConfig, vocab_size: usize, vectors: Option<Tensor>) -> std::result::Result<Self, ConfigError> {
        config.validate()?;
        let d = config.d_model;
        let seed = config.seed;
        let mut store = ParamStore::new();
        let embedding = match (config.embedding, vectors) {
            (EmbeddingMode::Trainable, None) => store.add("embedding", vocab_size, d, Init::Uniform(1.0), seed),
            (EmbeddingMode::External, Some(v)) => {
                if v.shape() != (vocab_size, d) {
                    return Err(ConfigError::Invalid(format!(
                        "external vectors are {}x{}, expected {vocab_size}x{d}",
                        v.rows(),
                        v.cols()
                    )));
                }
                store.insert("embedding", v, false)
            }
            (EmbeddingMode::Trainable, Some(_)) => {
                return Err(ConfigError::Invalid("vectors supplied but model.embedding=trainable".into()))
            }
            (EmbeddingMode::External, None) => {
                return Err(ConfigError::Invalid("model.embedding=external requires data.vectors".into()))
            }
        };
        let saa = config.uses_graph().then(|| SaaParams::new(&mut store, &config));
        let semantic = config.uses_semantic().then(|| SemanticParams::new(&mut store, &config));
        let width = d * (saa.is_some() as usize + semantic.is_some() as usize);
        let detector = DetectorParams::new(&mut store, width, &config);
        let (kw_embedding, debias) = if config.uses_keywords() {
            let table = match config.embedding {
                EmbeddingMode::Trainable => store.add("kw.embedding", vocab_size, d, Init::Uniform(1.0), seed),
                EmbeddingMode::External => embedding,
            };
            (Some(table), Some(DebiasParams::new(&mut store, table, d, &config)))
        } else {
            (None, None)
        };
        Ok(Self {
            config,
            store,
            parts: ModelParts {
                embedding,
                kw_embedding,
                saa,
                semantic,
                detector,
                debias,
            },
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.store.get(self.parts.embedding).rows()
    }

    /// Records one forward pass. `frozen_masks` pins the hard gate masks
    /// (one per SAA head) for finite-difference checks.
    pub fn forward(
        &self,
        ctx: &mut Ctx<'_>,
        ex: &EncodedExample,
        mode: Mode,
        frozen_masks: Option<&[Tensor]>,
    ) -> Result<ForwardOutput> {
        let parts = &self.parts;
        let table = ctx.p(parts.embedding);
        let p = ctx.gather_rows(table, &ex.ids);

        let mut streams = Vec::with_capacity(2);
        let mut sem_trace = None;
        if let Some(sp) = &parts.semantic {
            let out = semantic::semantic_forward(ctx, p, sp)?;
            streams.push(out.output);
            sem_trace = Some(out.trace);
        }
        let mut saa_trace = Vec::new();
        if let Some(gp) = &parts.saa {
            let settings = SaaSettings::from_config(&self.config);
            let out = saa::saa_forward(ctx, p, &ex.hops, gp, &settings, frozen_masks)?;
            streams.push(out.output);
            saa_trace = out.heads;
        }
        let fused = if streams.len() == 2 {
            head::fuse(ctx, streams[0], streams[1])?
        } else {
            streams[0]
        };
        let det = &parts.detector;
        let (w_f, b_f) = (ctx.p(det.w_f), ctx.p(det.b_f));
        let (pooled, weights) = head::pool(ctx, fused, w_f, b_f)?;
        let y_main = head::classify(ctx, pooled, &det.mlp())?;
        let trace = ForwardTrace {
            saa: saa_trace,
            semantic: sem_trace,
            pooling: ctx.value(weights).data().to_vec(),
        };

        if mode == Mode::Infer {
            return Ok(ForwardOutput {
                y_main,
                y_kw: None,
                y_fused: None,
                loss: None,
                trace,
            });
        }
        let label = f64::from(ex.label);
        let (y_kw, y_fused, loss) = match &parts.debias {
            Some(dp) => {
                let y_kw = head::keyword_branch(ctx, &ex.keyword_ids, dp)?;
                let (alpha, beta) = self.config.loss_weights();
                let (loss, fused) = head::joint_loss(ctx, y_main, y_kw, label, alpha, beta)?;
                (Some(y_kw), Some(fused), loss)
            }
            None => (None, None, ctx.binary_cross_entropy(y_main, label)?),
        };
        Ok(ForwardOutput {
            y_main,
            y_kw,
            y_fused,
            loss: Some(loss),
            trace,
        })
    }

    pub fn predict(&self, ex: &EncodedExample, mode: Mode) -> Result<Prediction> {
        let mut ctx = Ctx::new(&self.store);
        let out = self.forward(&mut ctx, ex, mode, None)?;
        Ok(Prediction {
            y_main: pair(ctx.value(out.y_main)),
            y_kw: out.y_kw.map(|v| pair(ctx.value(v))),
            y_fused: out.y_fused.map(|v| pair(ctx.value(v))),
        })
    }

    pub fn trace(&self, ex: &EncodedExample) -> Result<(Prediction, ForwardTrace)> {
        let mut ctx = Ctx::new(&self.store);
        let out = self.forward(&mut ctx, ex, Mode::Infer, None)?;
        Ok((
            Prediction {
                y_main: pair(ctx.value(out.y_main)),
                y_kw: None,
                y_fused: None,
            },
            out.trace,
        ))
    }

    /// Training loss and per-parameter gradients for one example.
    pub fn loss_and_grads(&self, ex: &EncodedExample) -> Result<(f64, Vec<Option<Tensor>>)> {
        self.loss_and_grads_with(ex, None)
    }

    #[doc(hidden)]
    pub fn loss_and_grads_with(
        &self,
        ex: &EncodedExample,
        fault: Option<BackwardFault>,
    ) -> Result<(f64, Vec<Option<Tensor>>)> {
        let mut ctx = Ctx::with_tape(&self.store, Tape::with_fault(fault));
        let out = self.forward(&mut ctx, ex, Mode::Train, None)?;
        let loss = out.loss.expect("train mode yields a loss");
        let value = ctx.value(loss).item();
        ctx.backward(loss);
        Ok((value, ctx.grads()))
    }

    pub fn loss(&self, ex: &EncodedExample) -> Result<f64> {
        let mut ctx = Ctx::new(&self.store);
        let out = self.forward(&mut ctx, ex, Mode::Train, None)?;
        Ok(ctx.value(out.loss.expect("train mode yields a loss")).item())
    }
}
