//! Subgraph aggregation attention: hop-specific edge scores, sigmoid hop
//! mixing, adaptive threshold gating and a graph-distance-biased softmax,
//! run per head and concatenated under a layer norm.

use serde::Serialize;

use crate::config::{GateBackward, ModelConfig, ScoreMode, SoftmaxSupport};
use crate::graph::{slope_schedule, HopStack};
use crate::params::{Ctx, Init, ParamId, ParamStore};
use crate::tensor::{Result, Tape, Tensor, Var};

#[derive(Debug, Clone)]
pub struct HopParams {
    /// `W_A^d`, `d_head × d_head`.
    pub w_a: ParamId,
    /// `a^d` stored as `d_head × 2`: column 0 scores the source node,
    /// column 1 the target. `None` in dot-product mode.
    pub attn: Option<ParamId>,
}

#[derive(Debug, Clone)]
pub struct SaaHeadParams {
    /// Slice of `W_P` for this head, `d_model × d_head`.
    pub w_p: ParamId,
    pub hops: Vec<HopParams>,
    /// Hop-mixing logits, `1 × m`. Absent for the MH-GAT ablation.
    pub w_z: Option<ParamId>,
    /// Threshold projector, `d_head × 1`. Absent for the MH-GAT ablation.
    pub w_h: Option<ParamId>,
}

#[derive(Debug, Clone)]
pub struct SaaParams {
    pub heads: Vec<SaaHeadParams>,
    pub norm_gain: ParamId,
    pub norm_shift: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct SaaSettings {
    pub hops: usize,
    pub score: ScoreMode,
    pub gate: GateBackward,
    pub gate_tau: f64,
    pub support: SoftmaxSupport,
    pub leaky_slope: f64,
    /// Single-matrix GAT over `Ã^m`: no hop mixing, gate or distance bias.
    pub mh_gat: bool,
}

impl SaaSettings {
    pub fn from_config(cfg: &ModelConfig) -> Self {
        Self {
            hops: cfg.hops,
            score: cfg.score,
            gate: cfg.gate,
            gate_tau: cfg.gate_tau,
            support: cfg.softmax_support,
            leaky_slope: cfg.leaky_slope,
            mh_gat: cfg.ablation == crate::config::Ablation::MhGat,
        }
    }
}

impl SaaParams {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig) -> Self {
        let dh = cfg.d_head();
        let settings = SaaSettings::from_config(cfg);
        let hop_groups = if settings.mh_gat { 1 } else { cfg.hops };
        let seed = cfg.seed;
        let xavier = Init::Xavier { gain: 1.0 };
        let heads = (0..cfg.heads)
            .map(|k| {
                let pre = format!("saa.head{k}");
                let w_p = store.add(&format!("{pre}.w_p"), cfg.d_model, dh, xavier, seed);
                let hops = (1..=hop_groups)
                    .map(|d| HopParams {
                        w_a: store.add(&format!("{pre}.hop{d}.w_a"), dh, dh, xavier, seed),
                        attn: (cfg.score == ScoreMode::Gat)
                            .then(|| store.add(&format!("{pre}.hop{d}.attn"), dh, 2, xavier, seed)),
                    })
                    .collect();
                let (w_z, w_h) = if settings.mh_gat {
                    (None, None)
                } else {
                    (
                        Some(store.add(&format!("{pre}.w_z"), 1, cfg.hops, Init::Zeros, seed)),
                        Some(store.add(&format!("{pre}.w_h"), dh, 1, xavier, seed)),
                    )
                };
                SaaHeadParams { w_p, hops, w_z, w_h }
            })
            .collect();
        Self {
            heads,
            norm_gain: store.add("saa.norm.gain", 1, cfg.d_model, Init::Ones, seed),
            norm_shift: store.add("saa.norm.shift", 1, cfg.d_model, Init::Zeros, seed),
        }
    }
}

/// What one head computed, kept for inspection dumps.
#[derive(Debug, Clone, Serialize)]
pub struct SaaHeadTrace {
    pub slope: f64,
    /// `σ(W_Z)` per hop.
    pub hop_weights: Vec<f64>,
    /// Adaptive thresholds `t_i`.
    pub thresholds: Vec<f64>,
    /// Aggregated scores `S` before gating.
    pub aggregated: Tensor,
    /// Binary gate `M_ij = [s_ij > t_i]`.
    pub gate_mask: Option<Tensor>,
    /// Gated scores `S'` before the distance bias.
    pub gated: Tensor,
    /// Final row-stochastic attention `S̃`.
    pub attention: Tensor,
}

pub struct SaaOutput {
    /// `H̃`, `n × d_model`.
    pub output: Var,
    pub heads: Vec<SaaHeadTrace>,
}

/// `z_ij = LeakyReLU(score(W_A h_i, W_A h_j)) · Ã_ij`; zero off the support.
pub fn edge_scores(
    t: &mut Tape,
    h: Var,
    w_a: Var,
    attn: Option<Var>,
    adj: &Tensor,
    score: ScoreMode,
    leaky_slope: f64,
) -> Result<Var> {
    let g = t.matmul(h, w_a)?;
    let raw = match (score, attn) {
        (ScoreMode::Gat, Some(a)) => {
            let uv = t.matmul(g, a)?;
            let u = t.slice_cols(uv, 0, 1);
            let v = t.slice_cols(uv, 1, 1);
            t.outer_sum(u, v)?
        }
        _ => {
            let gt = t.transpose(g);
            t.matmul(g, gt)?
        }
    };
    let act = t.leaky_relu(raw, leaky_slope);
    t.mul_const(act, adj)
}

/// `S = Σ_d σ(W_Z[d]) · Z^d`.
pub fn aggregate_hops(t: &mut Tape, z: &[Var], w_z: Var) -> Result<Var> {
    let weights = t.sigmoid(w_z);
    let mut total: Option<Var> = None;
    for (d, &zd) in z.iter().enumerate() {
        let w = t.element(weights, 0, d);
        let term = t.scale_by(w, zd)?;
        total = Some(match total {
            None => term,
            Some(acc) => t.add(acc, term)?,
        });
    }
    Ok(total.expect("at least one hop"))
}

/// Threshold gate `S' = M ⊙ S` with `t = H W_H` and `M_ij = [s_ij > t_i]`.
///
/// Returns the gated scores and the binary mask. In hard mode the mask is a
/// constant for the backward pass; `frozen` replaces it outright. In soft
/// mode `M` is `sigmoid((s_ij - t_i) / tau)` on the tape.
pub fn gate(
    t: &mut Tape,
    s: Var,
    h: Var,
    w_h: Var,
    mode: GateBackward,
    tau: f64,
    frozen: Option<&Tensor>,
) -> Result<(Var, Tensor, Var)> {
    let thresholds = t.matmul(h, w_h)?;
    let sv = t.value(s);
    let tv = t.value(thresholds);
    let hard = Tensor::from_fn(sv.rows(), sv.cols(), |i, j| {
        if sv.get(i, j) > tv.get(i, 0) {
            1.0
        } else {
            0.0
        }
    });
    let gated = match mode {
        GateBackward::Hard => t.mul_const(s, frozen.unwrap_or(&hard))?,
        GateBackward::Soft => {
            let neg = t.scale(thresholds, -1.0);
            let diff = t.add_col(s, neg)?;
            let scaled = t.scale(diff, 1.0 / tau);
            let m = t.sigmoid(scaled);
            t.mul(m, s)?
        }
    };
    Ok((gated, hard, thresholds))
}

/// One head: `S̃ = softmax(S' − slope · min(dist, 2m))`, `H̃ = S̃ H`.
#[allow(clippy::too_many_arguments)]
pub fn saa_head_forward(
    ctx: &mut Ctx<'_>,
    h: Var,
    hs: &HopStack,
    params: &SaaHeadParams,
    settings: &SaaSettings,
    slope: f64,
    frozen_mask: Option<&Tensor>,
) -> Result<(Var, SaaHeadTrace)> {
    if settings.mh_gat {
        let hop = &params.hops[0];
        let w_a = ctx.p(hop.w_a);
        let attn = hop.attn.map(|a| ctx.p(a));
        let support = hs.adjacency(hs.hops());
        let z = edge_scores(ctx, h, w_a, attn, support, settings.score, settings.leaky_slope)?;
        let att = ctx.softmax_rows(z, None, Some(support))?;
        let out = ctx.matmul(att, h)?;
        let trace = SaaHeadTrace {
            slope: 0.0,
            hop_weights: Vec::new(),
            thresholds: Vec::new(),
            aggregated: ctx.value(z).clone(),
            gate_mask: None,
            gated: ctx.value(z).clone(),
            attention: ctx.value(att).clone(),
        };
        return Ok((out, trace));
    }

    let mut zs = Vec::with_capacity(params.hops.len());
    for (d, hop) in params.hops.iter().enumerate() {
        let w_a = ctx.p(hop.w_a);
        let attn = hop.attn.map(|a| ctx.p(a));
        let adj = hs.adjacency(d + 1);
        zs.push(edge_scores(ctx, h, w_a, attn, adj, settings.score, settings.leaky_slope)?);
    }
    let w_z = ctx.p(params.w_z.expect("hop mixing weights"));
    let s = aggregate_hops(ctx, &zs, w_z)?;
    let w_h = ctx.p(params.w_h.expect("threshold projector"));
    let (gated, mask, thresholds) = gate(ctx, s, h, w_h, settings.gate, settings.gate_tau, frozen_mask)?;
    let bias = hs.bias(slope);
    let support = match settings.support {
        SoftmaxSupport::Dense => None,
        SoftmaxSupport::Restricted => Some(hs.adjacency(hs.hops())),
    };
    let att = ctx.softmax_rows(gated, Some(&bias), support)?;
    let out = ctx.matmul(att, h)?;
    let trace = SaaHeadTrace {
        slope,
        hop_weights: ctx.value(w_z).data().iter().map(|&w| crate::tensor::sigmoid(w)).collect(),
        thresholds: ctx.value(thresholds).data().to_vec(),
        aggregated: ctx.value(s).clone(),
        gate_mask: Some(mask),
        gated: ctx.value(gated).clone(),
        attention: ctx.value(att).clone(),
    };
    Ok((out, trace))
}

/// All heads, concatenated and layer-normalized (no residual).
pub fn saa_forward(
    ctx: &mut Ctx<'_>,
    p: Var,
    hs: &HopStack,
    params: &SaaParams,
    settings: &SaaSettings,
    frozen_masks: Option<&[Tensor]>,
) -> Result<SaaOutput> {
    let slopes = slope_schedule(params.heads.len());
    let mut outs = Vec::with_capacity(params.heads.len());
    let mut traces = Vec::with_capacity(params.heads.len());
    for (k, head) in params.heads.iter().enumerate() {
        let w_p = ctx.p(head.w_p);
        let h = ctx.matmul(p, w_p)?;
        let frozen = frozen_masks.map(|m| &m[k]);
        let (o, trace) = saa_head_forward(ctx, h, hs, head, settings, slopes[k], frozen)?;
        outs.push(o);
        traces.push(trace);
    }
    let cat = ctx.concat_cols(&outs)?;
    let gain = ctx.p(params.norm_gain);
    let shift = ctx.p(params.norm_shift);
    let output = ctx.layer_norm(cat, gain, shift)?;
    Ok(SaaOutput {
        output,
        heads: traces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_hop_stack, DepParse};
    use crate::tensor::{grad_check, LAYER_NORM_EPS};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn chain3() -> HopStack {
        build_hop_stack(&DepParse::from_signed(&[-1, 0, 1], None).unwrap(), 2).unwrap()
    }

    fn rand_t(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn settings(hops: usize) -> SaaSettings {
        SaaSettings {
            hops,
            score: ScoreMode::Gat,
            gate: GateBackward::Hard,
            gate_tau: 0.1,
            support: SoftmaxSupport::Dense,
            leaky_slope: 0.2,
            mh_gat: false,
        }
    }

    #[test]
    fn identity_support_gives_diagonal_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut t = Tape::new();
        let h = t.constant(rand_t(4, 3, &mut rng));
        let w = t.constant(rand_t(3, 3, &mut rng));
        let a = t.constant(rand_t(3, 2, &mut rng));
        let z = edge_scores(&mut t, h, w, Some(a), &Tensor::identity(4), ScoreMode::Gat, 0.2).unwrap();
        let zv = t.value(z);
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert_eq!(zv.get(i, j), 0.0);
                }
            }
        }
        let zero = t.constant(Tensor::zeros(3, 2));
        let z = edge_scores(&mut t, h, w, Some(zero), &Tensor::filled(4, 4, 1.0), ScoreMode::Gat, 0.2).unwrap();
        assert!(t.value(z).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn chain_scores_match_scalar_computation() {
        let hs = chain3();
        let hv = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, -1.0]]);
        let wv = Tensor::from_rows(&[vec![2.0, 0.0], vec![1.0, 1.0]]);
        let av = Tensor::from_rows(&[vec![1.0, -0.5], vec![0.5, 1.0]]);
        let mut t = Tape::new();
        let (h, w, a) = (t.constant(hv.clone()), t.constant(wv.clone()), t.constant(av.clone()));
        let z = edge_scores(&mut t, h, w, Some(a), hs.adjacency(1), ScoreMode::Gat, 0.2).unwrap();
        // g_i = h_i W
        let g: Vec<[f64; 2]> = (0..3)
            .map(|i| {
                let (x, y) = (hv.get(i, 0), hv.get(i, 1));
                [x * 2.0 + y * 1.0, y * 1.0]
            })
            .collect();
        for i in 0..3 {
            for j in 0..3 {
                let e = 1.0 * g[i][0] + 0.5 * g[i][1] + (-0.5) * g[j][0] + 1.0 * g[j][1];
                let lr = if e > 0.0 { e } else { 0.2 * e };
                let expect = lr * hs.adjacency(1).get(i, j);
                assert!((t.value(z).get(i, j) - expect).abs() < 1e-12, "({i},{j})");
            }
        }
    }

    #[test]
    fn hop_aggregation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut t = Tape::new();
        let z1v = rand_t(3, 3, &mut rng);
        let z1 = t.constant(z1v.clone());
        let w = t.constant(Tensor::row_vector(&[0.0]));
        let s = aggregate_hops(&mut t, &[z1], w).unwrap();
        assert!(t.value(s).max_abs_diff(&z1v.map(|x| 0.5 * x)) < 1e-15);

        let z2v = rand_t(3, 3, &mut rng);
        let z2 = t.constant(z2v);
        let w = t.constant(Tensor::row_vector(&[40.0, -40.0]));
        let s = aggregate_hops(&mut t, &[z1, z2], w).unwrap();
        assert!(t.value(s).max_abs_diff(&z1v) < 1e-15);

        let zs: Vec<Tensor> = (0..3).map(|_| rand_t(4, 4, &mut rng)).collect();
        let wz = rand_t(1, 3, &mut rng);
        let vars: Vec<Var> = zs.iter().map(|z| t.constant(z.clone())).collect();
        let w = t.constant(wz.clone());
        let s = aggregate_hops(&mut t, &vars, w).unwrap();
        let mut expect = Tensor::zeros(4, 4);
        for (d, z) in zs.iter().enumerate() {
            let sig = 1.0 / (1.0 + (-wz.get(0, d)).exp());
            expect.add_assign(&z.map(|x| sig * x));
        }
        assert!(t.value(s).max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn gate_boundaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut t = Tape::new();
        let sv = rand_t(4, 4, &mut rng);
        let s = t.constant(sv.clone());
        let h = t.constant(Tensor::filled(4, 1, 1.0));
        let open = t.constant(Tensor::scalar(-1e6));
        let (g, m, _) = gate(&mut t, s, h, open, GateBackward::Hard, 0.1, None).unwrap();
        assert!(m.data().iter().all(|&x| x == 1.0));
        assert_eq!(t.value(g), &sv);

        let zero = t.constant(Tensor::scalar(0.0));
        let (_, m, _) = gate(&mut t, s, h, zero, GateBackward::Hard, 0.1, None).unwrap();
        for k in 0..16 {
            assert_eq!(m.data()[k], if sv.data()[k] > 0.0 { 1.0 } else { 0.0 });
        }

        // s_ij == t_i is closed
        let eq = t.constant(Tensor::filled(2, 2, 0.7));
        let h2 = t.constant(Tensor::filled(2, 1, 1.0));
        let wh = t.constant(Tensor::scalar(0.7));
        let (g, m, _) = gate(&mut t, eq, h2, wh, GateBackward::Hard, 0.1, None).unwrap();
        assert!(m.data().iter().all(|&x| x == 0.0));
        assert!(t.value(g).data().iter().all(|&x| x == 0.0));
    }

    fn head_params(store: &mut ParamStore, dh: usize, hops: usize, seed: u64) -> SaaHeadParams {
        let x = Init::Xavier { gain: 1.0 };
        SaaHeadParams {
            w_p: store.add("w_p", dh, dh, x, seed),
            hops: (1..=hops)
                .map(|d| HopParams {
                    w_a: store.add(&format!("w_a{d}"), dh, dh, x, seed),
                    attn: Some(store.add(&format!("attn{d}"), dh, 2, x, seed)),
                })
                .collect(),
            w_z: Some(store.add("w_z", 1, hops, Init::Uniform(1.0), seed)),
            w_h: Some(store.add("w_h", dh, 1, x, seed)),
        }
    }

    #[test]
    fn single_node_head_is_identity() {
        let hs = build_hop_stack(&DepParse::from_signed(&[-1], None).unwrap(), 2).unwrap();
        let mut store = ParamStore::new();
        let hp = head_params(&mut store, 3, 2, 0);
        let mut ctx = Ctx::new(&store);
        let hv = Tensor::row_vector(&[0.3, -1.0, 2.0]);
        let h = ctx.constant(hv.clone());
        let (o, tr) = saa_head_forward(&mut ctx, h, &hs, &hp, &settings(2), 0.5, None).unwrap();
        assert_eq!(tr.attention.data(), &[1.0]);
        assert!(ctx.value(o).max_abs_diff(&hv) < 1e-15);
    }

    #[test]
    fn bias_only_chain_row() {
        // W_H very large so the gate closes and S' = 0
        let hs = chain3();
        let mut store = ParamStore::new();
        let mut hp = head_params(&mut store, 2, 2, 0);
        hp.w_h = Some(store.insert("w_h_big", Tensor::column_vector(&[1e6, 1e6]), true));
        let mut ctx = Ctx::new(&store);
        let h = ctx.constant(Tensor::filled(3, 2, 1.0));
        let (_, tr) = saa_head_forward(&mut ctx, h, &hs, &hp, &settings(2), 0.5, None).unwrap();
        assert!(tr.gated.data().iter().all(|&v| v == 0.0));
        let e: Vec<f64> = [0.0f64, -0.5, -1.0].iter().map(|v| v.exp()).collect();
        let z: f64 = e.iter().sum();
        for j in 0..3 {
            assert!((tr.attention.get(0, j) - e[j] / z).abs() < 1e-12);
        }
        assert!((tr.attention.get(0, 0) - 0.5064).abs() < 1e-4);
        assert!((tr.attention.get(0, 1) - 0.3071).abs() < 1e-4);
        assert!((tr.attention.get(0, 2) - 0.1863).abs() < 1e-4);
        assert!(tr.attention.get(1, 1) > tr.attention.get(1, 0));
    }

    #[test]
    fn single_head_forward_is_head_plus_norm() {
        let mut cfg = ModelConfig::default();
        cfg.d_model = 4;
        cfg.heads = 1;
        cfg.hops = 2;
        let mut store = ParamStore::new();
        let params = SaaParams::new(&mut store, &cfg);
        let hs = chain3();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pv = rand_t(3, 4, &mut rng);
        let mut ctx = Ctx::new(&store);
        let p = ctx.constant(pv.clone());
        let st = SaaSettings::from_config(&cfg);
        let out = saa_forward(&mut ctx, p, &hs, &params, &st, None).unwrap();
        let w_p = store.get(params.heads[0].w_p).clone();
        let h = pv.matmul(&w_p).unwrap();
        let head = h_from_attention(&out.heads[0].attention, &h);
        for i in 0..3 {
            let row = head.row(i);
            let mean = row.iter().sum::<f64>() / 4.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            for j in 0..4 {
                let expect = (row[j] - mean) / (var + LAYER_NORM_EPS).sqrt();
                assert!((ctx.value(out.output).get(i, j) - expect).abs() < 1e-12);
            }
        }
    }

    fn h_from_attention(att: &Tensor, h: &Tensor) -> Tensor {
        att.matmul(h).unwrap()
    }

    #[test]
    fn permutation_equivariance() {
        let mut cfg = ModelConfig::default();
        cfg.d_model = 6;
        cfg.heads = 2;
        cfg.hops = 2;
        let mut store = ParamStore::new();
        let params = SaaParams::new(&mut store, &cfg);
        let parse = DepParse::from_signed(&[-1, 0, 0, 1, 3], None).unwrap();
        let hs = build_hop_stack(&parse, 2).unwrap();
        let perm = [3, 0, 4, 1, 2];
        let hs_p = hs.permute(&perm);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pv = rand_t(5, 6, &mut rng);
        let pv_p = Tensor::from_fn(5, 6, |i, j| pv.get(perm[i], j));
        let st = SaaSettings::from_config(&cfg);
        let mut c1 = Ctx::new(&store);
        let p1 = c1.constant(pv);
        let o1 = saa_forward(&mut c1, p1, &hs, &params, &st, None).unwrap();
        let mut c2 = Ctx::new(&store);
        let p2 = c2.constant(pv_p);
        let o2 = saa_forward(&mut c2, p2, &hs_p, &params, &st, None).unwrap();
        let a = c1.value(o1.output);
        let b = c2.value(o2.output);
        for i in 0..5 {
            for j in 0..6 {
                assert!((b.get(i, j) - a.get(perm[i], j)).abs() < 1e-9);
            }
        }
        for k in 0..2 {
            let m1 = &o1.heads[k].attention;
            let m2 = &o2.heads[k].attention;
            for i in 0..5 {
                for j in 0..5 {
                    assert!((m2.get(i, j) - m1.get(perm[i], perm[j])).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn support_and_nesting() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let parse = DepParse::from_signed(&[-1, 0, 1, 2, 3, 4, 0], None).unwrap();
        let mut prev_support: Option<Vec<bool>> = None;
        for m in 1..=4 {
            let mut cfg = ModelConfig::default();
            cfg.d_model = 4;
            cfg.heads = 1;
            cfg.hops = m;
            let mut store = ParamStore::new();
            let params = SaaParams::new(&mut store, &cfg);
            let hs = build_hop_stack(&parse, m).unwrap();
            let mut ctx = Ctx::new(&store);
            let p = ctx.constant(rand_t(7, 4, &mut rng));
            let o = saa_forward(&mut ctx, p, &hs, &params, &SaaSettings::from_config(&cfg), None).unwrap();
            let tr = &o.heads[0];
            for i in 0..7 {
                assert!((tr.attention.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
                for j in 0..7 {
                    if hs.distance(i, j).map_or(true, |d| d > m) {
                        assert_eq!(tr.gated.get(i, j), 0.0);
                        assert_eq!(tr.aggregated.get(i, j), 0.0);
                    }
                }
            }
            let support: Vec<bool> = (0..49).map(|k| hs.adjacency(m).data()[k] != 0.0).collect();
            if let Some(prev) = prev_support {
                assert!(prev.iter().zip(&support).all(|(a, b)| !a || *b));
            }
            prev_support = Some(support);
        }
    }

    #[test]
    fn saa_gradients_with_frozen_mask() {
        for gate_mode in [GateBackward::Hard, GateBackward::Soft] {
            let mut cfg = ModelConfig::default();
            cfg.d_model = 4;
            cfg.heads = 2;
            cfg.hops = 2;
            cfg.gate = gate_mode;
            let mut store = ParamStore::new();
            let params = SaaParams::new(&mut store, &cfg);
            let hs = build_hop_stack(&DepParse::from_signed(&[1, -1, 1, 2], None).unwrap(), 2).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            let pv = rand_t(4, 4, &mut rng);
            let weights = rand_t(4, 4, &mut rng);
            let st = SaaSettings::from_config(&cfg);
            let masks: Vec<Tensor> = {
                let mut ctx = Ctx::new(&store);
                let p = ctx.constant(pv.clone());
                let o = saa_forward(&mut ctx, p, &hs, &params, &st, None).unwrap();
                o.heads.iter().map(|h| h.gate_mask.clone().unwrap()).collect()
            };
            let mut named: Vec<(String, Tensor)> =
                store.iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect();
            named.push(("input".into(), pv.clone()));
            let n_store = store.len();
            let r = grad_check(
                |t, vars| {
                    let tape = std::mem::take(t);
                    let mut ctx = Ctx::prebound(&store, tape, &vars[..n_store]);
                    let o = saa_forward(&mut ctx, vars[n_store], &hs, &params, &st, Some(&masks))?;
                    let w = ctx.constant(weights.clone());
                    let m = ctx.mul(o.output, w)?;
                    let ones_r = ctx.constant(Tensor::filled(1, 4, 1.0));
                    let ones_c = ctx.constant(Tensor::filled(4, 1, 1.0));
                    let s = ctx.matmul(ones_r, m)?;
                    let loss = ctx.matmul(s, ones_c)?;
                    *t = ctx.tape;
                    Ok(loss)
                },
                &named,
                1e-5,
            )
            .unwrap();
            assert!(r.max_rel_error < 1e-4, "{gate_mode:?}: {r:?}");
        }
    }
}
