//! Fusion, sequence-attention pooling, the main classifier, the keyword
//! branch and the joint training loss.

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::params::{Ctx, Init, ParamId, ParamStore};
use crate::tensor::{Result, Tensor, Var};

/// Index of the fake class in every probability pair.
pub const FAKE: usize = 1;

#[derive(Debug, Clone)]
pub struct DetectorParams {
    pub w_f: ParamId,
    pub b_f: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone)]
pub struct MlpParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

fn mlp(store: &mut ParamStore, prefix: &str, d_in: usize, d_hidden: usize, seed: u64) -> MlpParams {
    MlpParams {
        w1: store.add(&format!("{prefix}.w1"), d_in, d_hidden, Init::Xavier { gain: 1.0 }, seed),
        b1: store.add(&format!("{prefix}.b1"), 1, d_hidden, Init::Zeros, seed),
        w2: store.add(&format!("{prefix}.w2"), d_hidden, 2, Init::Xavier { gain: 0.1 }, seed),
        b2: store.add(&format!("{prefix}.b2"), 1, 2, Init::Zeros, seed),
    }
}

impl DetectorParams {
    /// `width` is the fused representation width (`2·d_model` when both
    /// encoders are active).
    pub fn new(store: &mut ParamStore, width: usize, cfg: &ModelConfig) -> Self {
        let s = cfg.seed;
        let w_f = store.add("head.pool.w_f", width, 1, Init::Xavier { gain: 1.0 }, s);
        let b_f = store.add("head.pool.b_f", 1, 1, Init::Zeros, s);
        let m = mlp(store, "head.cls", width, cfg.d_hidden, s);
        Self {
            w_f,
            b_f,
            w1: m.w1,
            b1: m.b1,
            w2: m.w2,
            b2: m.b2,
        }
    }

    pub fn mlp(&self) -> MlpParams {
        MlpParams {
            w1: self.w1,
            b1: self.b1,
            w2: self.w2,
            b2: self.b2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DebiasParams {
    /// Keyword lookup table over the shared vocabulary.
    pub embedding: ParamId,
    pub mlp: MlpParams,
}

impl DebiasParams {
    pub fn new(store: &mut ParamStore, embedding: ParamId, dim: usize, cfg: &ModelConfig) -> Self {
        Self {
            embedding,
            mlp: mlp(store, "kw.cls", dim, cfg.d_hidden, cfg.seed),
        }
    }
}

/// Probability pairs `[P(real), P(fake)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub y_main: [f64; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y_kw: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y_fused: Option<[f64; 2]>,
}

impl Prediction {
    pub fn p_fake(&self) -> f64 {
        self.y_main[FAKE]
    }

    /// Fake iff `P(fake) > 0.5`; exactly 0.5 is real.
    pub fn is_fake(&self) -> bool {
        self.p_fake() > 0.5
    }
}

pub fn pair(t: &Tensor) -> [f64; 2] {
    [t.get(0, 0), t.get(0, 1)]
}

pub fn fuse(ctx: &mut Ctx<'_>, r: Var, h: Var) -> Result<Var> {
    ctx.concat_cols(&[r, h])
}

/// Sequence-attention pooling. Returns the pooled `1 × width` row and the
/// `1 × n` token weights.
pub fn pool(ctx: &mut Ctx<'_>, f: Var, w_f: Var, b_f: Var) -> Result<(Var, Var)> {
    let scores = ctx.matmul(f, w_f)?;
    let scores = ctx.add_row(scores, b_f)?;
    let scores = ctx.transpose(scores);
    let weights = ctx.softmax_rows(scores, None, None)?;
    Ok((ctx.matmul(weights, f)?, weights))
}

/// `softmax(W_2 ReLU(W_1 x + b_1) + b_2)`.
pub fn classify(ctx: &mut Ctx<'_>, x: Var, p: &MlpParams) -> Result<Var> {
    let (w1, b1, w2, b2) = (ctx.p(p.w1), ctx.p(p.b1), ctx.p(p.w2), ctx.p(p.b2));
    let h = ctx.matmul(x, w1)?;
    let h = ctx.add_row(h, b1)?;
    let h = ctx.relu(h);
    let o = ctx.matmul(h, w2)?;
    let o = ctx.add_row(o, b2)?;
    ctx.softmax_rows(o, None, None)
}

/// Max-pooled keyword embeddings through the keyword classifier.
/// `ids` must be non-empty; callers map an empty list to the no-keyword id.
pub fn keyword_branch(ctx: &mut Ctx<'_>, ids: &[usize], p: &DebiasParams) -> Result<Var> {
    assert!(!ids.is_empty(), "keyword ids must be non-empty");
    let table = ctx.p(p.embedding);
    let rows = ctx.gather_rows(table, ids);
    let pooled = ctx.max_rows(rows);
    classify(ctx, pooled, &p.mlp)
}

/// `CE(α·y_main + (1−α)·y_kw) + β·CE(y_kw)`.
pub fn joint_loss(ctx: &mut Ctx<'_>, y_main: Var, y_kw: Var, label: f64, alpha: f64, beta: f64) -> Result<(Var, Var)> {
    let a = ctx.scale(y_main, alpha);
    let b = ctx.scale(y_kw, 1.0 - alpha);
    let fused = ctx.add(a, b)?;
    let main = ctx.binary_cross_entropy(fused, label)?;
    let kw = ctx.binary_cross_entropy(y_kw, label)?;
    let kw = ctx.scale(kw, beta);
    Ok((ctx.add(main, kw)?, fused))
}
