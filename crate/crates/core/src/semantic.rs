//! Semantic encoder: multi-head self-attention with a sequential
//! relative-position penalty, followed by residual/norm and a feed-forward
//! block.

use serde::Serialize;

use crate::config::ModelConfig;
use crate::graph::slope_schedule;
use crate::params::{Ctx, Init, ParamId, ParamStore};
use crate::tensor::{Activation, Result, Tensor, Var};

#[derive(Debug, Clone)]
pub struct SemanticParams {
    pub heads: usize,
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub b_v: ParamId,
    pub ffn_w1: ParamId,
    pub ffn_b1: ParamId,
    pub ffn_w2: ParamId,
    pub ffn_b2: ParamId,
    pub ffn_activation: Activation,
    pub norm1_gain: ParamId,
    pub norm1_shift: ParamId,
    pub norm2_gain: ParamId,
    pub norm2_shift: ParamId,
}

impl SemanticParams {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let f = cfg.d_ffn();
        let s = cfg.seed;
        let x = Init::Xavier { gain: 1.0 };
        Self {
            heads: cfg.heads,
            w_q: store.add("sem.w_q", d, d, x, s),
            w_k: store.add("sem.w_k", d, d, x, s),
            w_v: store.add("sem.w_v", d, d, x, s),
            b_v: store.add("sem.b_v", 1, d, Init::Zeros, s),
            ffn_w1: store.add("sem.ffn.w1", d, f, x, s),
            ffn_b1: store.add("sem.ffn.b1", 1, f, Init::Zeros, s),
            ffn_w2: store.add("sem.ffn.w2", f, d, x, s),
            ffn_b2: store.add("sem.ffn.b2", 1, d, Init::Zeros, s),
            ffn_activation: cfg.ffn_activation,
            norm1_gain: store.add("sem.norm1.gain", 1, d, Init::Ones, s),
            norm1_shift: store.add("sem.norm1.shift", 1, d, Init::Zeros, s),
            norm2_gain: store.add("sem.norm2.gain", 1, d, Init::Ones, s),
            norm2_shift: store.add("sem.norm2.shift", 1, d, Init::Zeros, s),
        }
    }
}

/// `-slope · |i - j|`.
pub fn seq_bias(n: usize, slope: f64) -> Tensor {
    Tensor::from_fn(n, n, |i, j| -slope * i.abs_diff(j) as f64)
}

#[derive(Debug, Clone, Serialize)]
pub struct SemanticTrace {
    pub slopes: Vec<f64>,
    pub attention: Vec<Tensor>,
}

pub struct SemanticOutput {
    pub output: Var,
    pub trace: SemanticTrace,
}

/// Concatenated per-head `softmax(Q Kᵀ / √d_head − slope·|i−j|) V`.
pub fn semantic_attention(
    ctx: &mut Ctx<'_>,
    p: Var,
    params: &SemanticParams,
    slopes: &[f64],
) -> Result<(Var, Vec<Tensor>)> {
    let (n, d) = ctx.value(p).shape();
    let h = params.heads;
    assert_eq!(d % h, 0, "d_model {d} not divisible by {h} heads");
    assert_eq!(slopes.len(), h);
    let dh = d / h;
    let (wq, wk, wv, bv) = (ctx.p(params.w_q), ctx.p(params.w_k), ctx.p(params.w_v), ctx.p(params.b_v));
    let q = ctx.matmul(p, wq)?;
    let k = ctx.matmul(p, wk)?;
    let v = ctx.matmul(p, wv)?;
    let v = ctx.add_row(v, bv)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(h);
    let mut maps = Vec::with_capacity(h);
    for (l, &slope) in slopes.iter().enumerate() {
        let ql = ctx.slice_cols(q, l * dh, dh);
        let kl = ctx.slice_cols(k, l * dh, dh);
        let vl = ctx.slice_cols(v, l * dh, dh);
        let kt = ctx.transpose(kl);
        let logits = ctx.matmul(ql, kt)?;
        let logits = ctx.scale(logits, scale);
        let att = ctx.softmax_rows(logits, Some(&seq_bias(n, slope)), None)?;
        maps.push(ctx.value(att).clone());
        outs.push(ctx.matmul(att, vl)?);
    }
    Ok((ctx.concat_cols(&outs)?, maps))
}

/// `R̃ = Norm(R + P̃)`, then `Norm(R̃ + FFN(R̃))`.
pub fn semantic_forward(ctx: &mut Ctx<'_>, p: Var, params: &SemanticParams) -> Result<SemanticOutput> {
    let slopes = slope_schedule(params.heads);
    semantic_forward_with_slopes(ctx, p, params, &slopes)
}

pub fn semantic_forward_with_slopes(
    ctx: &mut Ctx<'_>,
    p: Var,
    params: &SemanticParams,
    slopes: &[f64],
) -> Result<SemanticOutput> {
    let (r, maps) = semantic_attention(ctx, p, params, slopes)?;
    let res = ctx.add(r, p)?;
    let (g1, s1) = (ctx.p(params.norm1_gain), ctx.p(params.norm1_shift));
    let r1 = ctx.layer_norm(res, g1, s1)?;
    let (w1, b1, w2, b2) = (
        ctx.p(params.ffn_w1),
        ctx.p(params.ffn_b1),
        ctx.p(params.ffn_w2),
        ctx.p(params.ffn_b2),
    );
    let f = ctx.matmul(r1, w1)?;
    let f = ctx.add_row(f, b1)?;
    let f = ctx.activation(f, params.ffn_activation);
    let f = ctx.matmul(f, w2)?;
    let f = ctx.add_row(f, b2)?;
    let res2 = ctx.add(r1, f)?;
    let (g2, s2) = (ctx.p(params.norm2_gain), ctx.p(params.norm2_shift));
    let output = ctx.layer_norm(res2, g2, s2)?;
    Ok(SemanticOutput {
        output,
        trace: SemanticTrace {
            slopes: slopes.to_vec(),
            attention: maps,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, softmax_rows, LAYER_NORM_EPS};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_t(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn cfg(d: usize, h: usize) -> ModelConfig {
        ModelConfig {
            d_model: d,
            heads: h,
            ..ModelConfig::default()
        }
    }

    fn zero_store(store: &ParamStore) -> ParamStore {
        let mut out = ParamStore::new();
        for (_, p) in store.iter() {
            let v = if p.name.contains("gain") {
                Tensor::filled(p.value.rows(), p.value.cols(), 1.0)
            } else {
                Tensor::zeros(p.value.rows(), p.value.cols())
            };
            out.insert(&p.name, v, true);
        }
        out
    }

    fn ln_ref(x: &Tensor) -> Tensor {
        let d = x.cols();
        Tensor::from_fn(x.rows(), d, |i, j| {
            let row = x.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            (row[j] - mean) / (var + LAYER_NORM_EPS).sqrt()
        })
    }

    #[test]
    fn seq_bias_examples() {
        assert_eq!(
            seq_bias(3, 1.0).to_rows(),
            vec![vec![0.0, -1.0, -2.0], vec![-1.0, 0.0, -1.0], vec![-2.0, -1.0, 0.0]]
        );
        assert_eq!(seq_bias(1, 0.3).data(), &[0.0]);
        let b = seq_bias(350, 2f64.powi(-12));
        assert!((b.get(0, 349) + 349.0 / 4096.0).abs() < 1e-15);
        assert!((b.get(0, 349) + 0.0852).abs() < 1e-4);
        // Toeplitz
        for i in 1..350 {
            for j in 1..350 {
                assert_eq!(b.get(i, j), b.get(i - 1, j - 1));
            }
        }
    }

    fn qk_zero_setup(d: usize, h: usize) -> (ParamStore, SemanticParams) {
        let mut store = ParamStore::new();
        let params = SemanticParams::new(&mut store, &cfg(d, h));
        let mut z = zero_store(&store);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        *z.get_mut(params.w_v) = rand_t(d, d, &mut rng);
        *z.get_mut(params.b_v) = rand_t(1, d, &mut rng);
        (z, params)
    }

    #[test]
    fn content_free_attention() {
        let (store, params) = qk_zero_setup(2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pv = rand_t(2, 2, &mut rng);
        let mut ctx = Ctx::new(&store);
        let p = ctx.constant(pv.clone());
        let (r, maps) = semantic_attention(&mut ctx, p, &params, &[0.0]).unwrap();
        assert!(maps[0].data().iter().all(|&a| (a - 0.5).abs() < 1e-15));
        let v = pv.matmul(store.get(params.w_v)).unwrap();
        let bv = store.get(params.b_v);
        for j in 0..2 {
            let mean = (v.get(0, j) + v.get(1, j)) / 2.0 + bv.get(0, j);
            assert!((ctx.value(r).get(0, j) - mean).abs() < 1e-12);
        }
        let (_, maps) = semantic_attention(&mut ctx, p, &params, &[std::f64::consts::LN_2]).unwrap();
        assert!((maps[0].get(0, 0) - 2.0 / 3.0).abs() < 1e-12);
        assert!((maps[0].get(0, 1) - 1.0 / 3.0).abs() < 1e-12);

        let p1 = ctx.constant(rand_t(1, 2, &mut rng));
        let (r, _) = semantic_attention(&mut ctx, p1, &params, &[0.5]).unwrap();
        let v1 = ctx.value(p1).matmul(store.get(params.w_v)).unwrap();
        for j in 0..2 {
            assert!((ctx.value(r).get(0, j) - v1.get(0, j) - bv.get(0, j)).abs() < 1e-15);
        }
    }

    #[test]
    fn locality_and_row_sums() {
        let (store, params) = qk_zero_setup(4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut ctx = Ctx::new(&store);
        let p = ctx.constant(rand_t(7, 4, &mut rng));
        let (_, maps) = semantic_attention(&mut ctx, p, &params, &[0.5, 0.25]).unwrap();
        for m in &maps {
            for i in 0..7 {
                assert!((m.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for j in 0..7 {
                    for k in 0..7 {
                        if i.abs_diff(j) < i.abs_diff(k) {
                            assert!(m.get(i, j) > m.get(i, k));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn zero_parameters_reduce_to_double_norm() {
        let mut store = ParamStore::new();
        let params = SemanticParams::new(&mut store, &cfg(4, 2));
        let store = zero_store(&store);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for n in [1, 3, 6] {
            let pv = rand_t(n, 4, &mut rng);
            let mut ctx = Ctx::new(&store);
            let p = ctx.constant(pv.clone());
            let out = semantic_forward(&mut ctx, p, &params).unwrap();
            let expect = ln_ref(&ln_ref(&pv));
            assert_eq!(ctx.value(out.output).shape(), (n, 4));
            assert!(ctx.value(out.output).max_abs_diff(&expect) < 1e-9);
        }
    }

    /// Plain transformer encoder layer computed without the tape.
    fn reference_layer(store: &ParamStore, params: &SemanticParams, p: &Tensor) -> Tensor {
        let g = |id| store.get(id).clone();
        let d = p.cols();
        let dh = d / params.heads;
        let q = p.matmul(&g(params.w_q)).unwrap();
        let k = p.matmul(&g(params.w_k)).unwrap();
        let bv = g(params.b_v);
        let v = p.matmul(&g(params.w_v)).unwrap();
        let v = Tensor::from_fn(v.rows(), d, |i, j| v.get(i, j) + bv.get(0, j));
        let mut r = Tensor::zeros(p.rows(), d);
        for l in 0..params.heads {
            let (ql, kl, vl) = (q.slice_cols(l * dh, dh), k.slice_cols(l * dh, dh), v.slice_cols(l * dh, dh));
            let logits = ql.matmul(&kl.transpose()).unwrap().map(|x| x / (dh as f64).sqrt());
            let a = softmax_rows(&logits, None, None).unwrap();
            let o = a.matmul(&vl).unwrap();
            for i in 0..p.rows() {
                for j in 0..dh {
                    r.set(i, l * dh + j, o.get(i, j));
                }
            }
        }
        let affine = |x: &Tensor, w, b| {
            let y = x.matmul(&g(w)).unwrap();
            let bb = g(b);
            Tensor::from_fn(y.rows(), y.cols(), |i, j| y.get(i, j) + bb.get(0, j))
        };
        let norm = |x: &Tensor, gain, shift| {
            let (gn, sh) = (g(gain), g(shift));
            let z = ln_ref(x);
            Tensor::from_fn(z.rows(), z.cols(), |i, j| z.get(i, j) * gn.get(0, j) + sh.get(0, j))
        };
        let r1 = norm(&r.zip_map(p, |a, b| a + b), params.norm1_gain, params.norm1_shift);
        let f = affine(&r1, params.ffn_w1, params.ffn_b1).map(|x| x.max(0.0));
        let f = affine(&f, params.ffn_w2, params.ffn_b2);
        norm(&r1.zip_map(&f, |a, b| a + b), params.norm2_gain, params.norm2_shift)
    }

    #[test]
    fn slope_zero_matches_reference_encoder() {
        let mut store = ParamStore::new();
        let params = SemanticParams::new(&mut store, &cfg(8, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for id in store.ids().collect::<Vec<_>>() {
            let (r, c) = store.get(id).shape();
            *store.get_mut(id) = rand_t(r, c, &mut rng);
        }
        let pv = rand_t(5, 8, &mut rng);
        let mut ctx = Ctx::new(&store);
        let p = ctx.constant(pv.clone());
        let out = semantic_forward_with_slopes(&mut ctx, p, &params, &[0.0, 0.0]).unwrap();
        let expect = reference_layer(&store, &params, &pv);
        assert!(ctx.value(out.output).max_abs_diff(&expect) < 1e-10);
    }

    #[test]
    fn semantic_gradients() {
        let mut store = ParamStore::new();
        let params = SemanticParams::new(&mut store, &ModelConfig {
            d_ffn: Some(6),
            ..cfg(4, 2)
        });
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for id in store.ids().collect::<Vec<_>>() {
            let (r, c) = store.get(id).shape();
            *store.get_mut(id) = rand_t(r, c, &mut rng);
        }
        let pv = rand_t(3, 4, &mut rng);
        let weights = rand_t(3, 4, &mut rng);
        let mut named: Vec<(String, Tensor)> = store.iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect();
        named.push(("input".into(), pv));
        let n = store.len();
        let r = grad_check(
            |t, vars| {
                let tape = std::mem::take(t);
                let mut ctx = Ctx::prebound(&store, tape, &vars[..n]);
                let o = semantic_forward(&mut ctx, vars[n], &params)?;
                let w = ctx.constant(weights.clone());
                let m = ctx.mul(o.output, w)?;
                let a = ctx.constant(Tensor::filled(1, 3, 1.0));
                let b = ctx.constant(Tensor::filled(4, 1, 1.0));
                let s = ctx.matmul(a, m)?;
                let loss = ctx.matmul(s, b)?;
                *t = ctx.tape;
                Ok(loss)
            },
            &named,
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}
