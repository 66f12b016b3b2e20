use crate::config::{DecayMode, TrainConfig};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam with inverse-time (or per-epoch multiplicative) learning-rate decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub decay: f64,
    pub decay_mode: DecayMode,
    step: u64,
    epoch: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, decay: f64, decay_mode: DecayMode) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(_, p)| Tensor::zeros(p.value.rows(), p.value.cols()))
                .collect::<Vec<_>>()
        };
        Self {
            lr,
            decay,
            decay_mode,
            step: 0,
            epoch: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn from_config(store: &ParamStore, cfg: &TrainConfig) -> Self {
        Self::new(store, cfg.lr, cfg.decay, cfg.decay_mode)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn set_epoch(&mut self, epoch: u64) {
        self.epoch = epoch;
    }

    /// Learning rate for the next step.
    pub fn current_lr(&self) -> f64 {
        match self.decay_mode {
            DecayMode::PerStep => self.lr / (1.0 + self.decay * self.step as f64),
            DecayMode::PerEpoch => self.lr * (1.0 - self.decay).powi(self.epoch as i32),
        }
    }

    /// Applies one update. Parameters whose gradient is `None` keep their
    /// value and moment estimates.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>]) {
        assert_eq!(grads.len(), self.m.len());
        let lr = self.current_lr();
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let Some(g) = &grads[k] else { continue };
            if !store.param(id).trainable {
                continue;
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let w = store.get_mut(id);
            for i in 0..g.len() {
                let gi = g.data()[i];
                let mi = BETA1 * m.data()[i] + (1.0 - BETA1) * gi;
                let vi = BETA2 * v.data()[i] + (1.0 - BETA2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                w.data_mut()[i] -= lr * (mi / bc1) / ((vi / bc2).sqrt() + ADAM_EPS);
            }
        }
    }
}
