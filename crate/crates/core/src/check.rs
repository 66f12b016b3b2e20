//! Finite-difference checks of the complete training loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{GateBackward, ModelConfig};
use crate::graph::{build_hop_stack, DepParse};
use crate::model::{EncodedExample, Mode, Model};
use crate::params::Ctx;
use crate::tensor::{grad_check, BackwardFault, GradCheckReport, Result, Tensor};

pub const GRADCHECK_TOL: f64 = 1e-4;
pub const GRADCHECK_EPS: f64 = 1e-4;
pub const GENERIC_SPREAD: f64 = 0.3;

#[derive(Debug, Clone, Serialize)]
pub struct CaseReport {
    pub n: usize,
    pub gate: GateBackward,
    pub report: GradCheckReport,
    pub passed: bool,
}

/// A random tree over `n` tokens with random ids and keywords.
pub fn random_example(n: usize, vocab: usize, hops: usize, rng: &mut impl Rng) -> EncodedExample {
    let root = rng.gen_range(0..n);
    let mut order: Vec<usize> = (0..n).filter(|&i| i != root).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let mut heads = vec![-1i64; n];
    let mut placed = vec![root];
    for &i in &order {
        heads[i] = placed[rng.gen_range(0..placed.len())] as i64;
        placed.push(i);
    }
    let parse = DepParse::from_signed(&heads, None).expect("generated tree is valid");
    let k = rng.gen_range(1..=3);
    EncodedExample {
        id: format!("rand{n}"),
        ids: (0..n).map(|_| rng.gen_range(3..vocab)).collect(),
        hops: build_hop_stack(&parse, hops).expect("hops >= 1"),
        keyword_ids: (0..k).map(|_| rng.gen_range(3..vocab)).collect(),
        label: rng.gen_range(0..=1),
    }
}

/// Checks every parameter gradient of the training loss on one random
/// example. Hard gate masks are frozen at their values at the base point.
///
/// Trainable parameters are moved off their initial values by uniform noise
/// of width `GENERIC_SPREAD`: at initialization the small output layer
/// shrinks upstream gradients toward the finite-difference noise floor.
pub fn model_gradcheck(
    cfg: &ModelConfig,
    n: usize,
    seed: u64,
    fault: Option<BackwardFault>,
) -> Result<GradCheckReport> {
    let vocab = 12;
    let mut model = Model::new(cfg.clone(), vocab, None).expect("valid gradcheck config");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (n as u64) << 32);
    let ids: Vec<_> = model.store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    for id in ids {
        for x in model.store.get_mut(id).data_mut() {
            *x += rng.gen_range(-GENERIC_SPREAD..GENERIC_SPREAD);
        }
    }
    let ex = random_example(n, vocab, cfg.hops, &mut rng);
    let masks: Vec<Tensor> = {
        let mut ctx = Ctx::new(&model.store);
        let out = model.forward(&mut ctx, &ex, Mode::Train, None)?;
        out.trace.saa.iter().filter_map(|h| h.gate_mask.clone()).collect()
    };
    let frozen = (!masks.is_empty()).then_some(masks.as_slice());
    let named: Vec<(String, Tensor)> = model
        .store
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(_, p)| (p.name.clone(), p.value.clone()))
        .collect();
    let trainable: Vec<usize> = model
        .store
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(id, _)| id.index())
        .collect();
    grad_check(
        |t, vars| {
            t.set_fault(fault);
            let mut tape = std::mem::take(t);
            let mut all = Vec::with_capacity(model.store.len());
            let mut next = 0;
            for (id, p) in model.store.iter() {
                if trainable.get(next) == Some(&id.index()) {
                    all.push(vars[next]);
                    next += 1;
                } else {
                    all.push(tape.constant(p.value.clone()));
                }
            }
            let mut ctx = Ctx::prebound(&model.store, tape, &all);
            let out = model.forward(&mut ctx, &ex, Mode::Train, frozen)?;
            *t = ctx.tape;
            Ok(out.loss.expect("train mode yields a loss"))
        },
        &named,
        GRADCHECK_EPS,
    )
}

/// The full suite: `n ∈ {2, 5, 8}` in both gate modes.
pub fn gradcheck_suite(base: &ModelConfig, seed: u64, fault: Option<BackwardFault>) -> Result<Vec<CaseReport>> {
    let mut out = Vec::new();
    for gate in [GateBackward::Hard, GateBackward::Soft] {
        for n in [2, 5, 8] {
            let cfg = ModelConfig { gate, ..base.clone() };
            let report = model_gradcheck(&cfg, n, seed, fault)?;
            out.push(CaseReport {
                n,
                gate,
                passed: report.passes(GRADCHECK_TOL),
                report,
            });
        }
    }
    Ok(out)
}

/// Small configuration used by the suite. The soft gate runs at `τ = 1`;
/// at 0.1 it saturates and most threshold gradients sink below the
/// finite-difference noise floor.
pub fn small_config() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        heads: 2,
        hops: 2,
        d_hidden: 8,
        d_ffn: Some(16),
        gate_tau: 1.0,
        ..ModelConfig::default()
    }
}
