//! Named parameter storage, seeded initialization, and binding of
//! parameters onto a tape.

use std::collections::HashMap;
use std::ops::{Deref, DerefMut};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Glorot uniform scaled by `gain`.
    Xavier { gain: f64 },
    Uniform(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

/// Per-parameter RNG stream so that adding or removing a parameter group
/// never shifts the initial values of another.
fn param_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

pub fn init_tensor(rows: usize, cols: usize, init: Init, seed: u64, name: &str) -> Tensor {
    match init {
        Init::Zeros => Tensor::zeros(rows, cols),
        Init::Ones => Tensor::filled(rows, cols, 1.0),
        Init::Xavier { gain } => {
            let a = gain * (6.0 / (rows + cols) as f64).sqrt();
            let mut rng = param_rng(seed, name);
            Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-a..a))
        }
        Init::Uniform(a) => {
            let mut rng = param_rng(seed, name);
            Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-a..a))
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor, trainable: bool) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        self.index.insert(name.to_string(), self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            value,
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn add(&mut self, name: &str, rows: usize, cols: usize, init: Init, seed: u64) -> ParamId {
        self.insert(name, init_tensor(rows, cols, init, seed, name), true)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// A tape together with lazily bound parameters.
///
/// Dereferences to the [`Tape`], so tape operations are called directly.
pub struct Ctx<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    bound: Vec<Option<Var>>,
}

impl<'a> Ctx<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self::with_tape(store, Tape::new())
    }

    pub fn with_tape(store: &'a ParamStore, tape: Tape) -> Self {
        Self {
            tape,
            store,
            bound: vec![None; store.len()],
        }
    }

    /// Uses already-recorded variables for every parameter, in store order.
    pub fn prebound(store: &'a ParamStore, tape: Tape, vars: &[Var]) -> Self {
        assert_eq!(vars.len(), store.len());
        Self {
            tape,
            store,
            bound: vars.iter().copied().map(Some).collect(),
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let param = self.store.param(id);
        let v = if param.trainable {
            self.tape.param(param.value.clone())
        } else {
            self.tape.constant(param.value.clone())
        };
        self.bound[id.0] = Some(v);
        v
    }

    /// Gradients of every parameter after `backward`; unused or frozen
    /// parameters report `None`.
    pub fn grads(&self) -> Vec<Option<Tensor>> {
        self.bound
            .iter()
            .map(|b| b.and_then(|v| self.tape.grad(v).cloned()))
            .collect()
    }
}

impl Deref for Ctx<'_> {
    type Target = Tape;

    fn deref(&self) -> &Tape {
        &self.tape
    }
}

impl DerefMut for Ctx<'_> {
    fn deref_mut(&mut self) -> &mut Tape {
        &mut self.tape
    }
}
