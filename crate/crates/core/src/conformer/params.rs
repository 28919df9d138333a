use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Index of a tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Learnable operation weight.
    Weight,
    /// Non-learnable state such as batch-norm running statistics.
    Buffer,
}

/// Named tensors of one network.
///
/// Random initial values are drawn from a generator keyed by the store seed
/// and the tensor name, so two stores with the same seed agree on every
/// tensor they both define regardless of creation order.
#[derive(Clone, Debug)]
pub struct ParamStore {
    seed: u64,
    names: Vec<String>,
    values: Vec<Tensor>,
    kinds: Vec<ParamKind>,
}

fn name_hash(name: &str) -> u64 {
    let digest = Sha256::digest(name.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            seed,
            names: Vec::new(),
            values: Vec::new(),
            kinds: Vec::new(),
        }
    }

    fn push(&mut self, name: String, value: Tensor, kind: ParamKind) -> ParamId {
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        self.kinds.push(kind);
        ParamId(self.values.len() - 1)
    }

    /// Weight drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn uniform(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize) -> ParamId {
        let name = name.into();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ name_hash(&name));
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        let t = Tensor::new(shape.to_vec(), data).expect("non-empty shape");
        self.push(name, t, ParamKind::Weight)
    }

    pub fn constant(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> ParamId {
        self.push(name.into(), Tensor::full(shape, value), ParamKind::Weight)
    }

    pub fn buffer(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> ParamId {
        self.push(name.into(), Tensor::full(shape, value), ParamKind::Buffer)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn kind(&self, id: ParamId) -> ParamKind {
        self.kinds[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn weight_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|&id| self.kind(id) == ParamKind::Weight)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of learnable scalars.
    pub fn weight_count(&self) -> usize {
        self.weight_ids().map(|id| self.get(id).len()).sum()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// `(name, tensor)` pairs in creation order.
    pub fn named(&self) -> Vec<(String, Tensor)> {
        self.names
            .iter()
            .cloned()
            .zip(self.values.iter().cloned())
            .collect()
    }

    /// Overwrites tensors by name; every stored name must be present with a
    /// matching shape.
    pub fn load_named(&mut self, tensors: &[(String, Tensor)]) -> Result<()> {
        for (i, name) in self.names.iter().enumerate() {
            let (_, t) = tensors
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::parse("checkpoint", format!("missing tensor {name}")))?;
            if t.shape() != self.values[i].shape() {
                return Err(Error::Shape {
                    op: "load_named",
                    lhs: self.values[i].shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            self.values[i] = t.clone();
        }
        Ok(())
    }
}

/// Pending batch-norm running-statistics update from one forward pass.
#[derive(Clone, Debug)]
pub struct NormStats {
    pub mean_id: ParamId,
    pub var_id: ParamId,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Momentum of the batch-norm running statistics.
pub const RUNNING_STAT_MOMENTUM: f64 = 0.1;

impl NormStats {
    pub fn apply(&self, store: &mut ParamStore) {
        let blend = |dst: &mut Tensor, src: &[f64]| {
            dst.data_mut().iter_mut().zip(src).for_each(|(r, b)| {
                *r = (1.0 - RUNNING_STAT_MOMENTUM) * *r + RUNNING_STAT_MOMENTUM * b
            });
        };
        blend(store.get_mut(self.mean_id), &self.mean);
        blend(store.get_mut(self.var_id), &self.var);
    }
}

/// State threaded through one forward pass of a network.
pub struct Forward<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    loaded: Vec<Option<Var>>,
    grad_weights: bool,
    /// Training mode: dropout active, batch norm on batch statistics.
    pub train: bool,
    pub dropout: f64,
    /// Add the relative sinusoidal bias to attention logits.
    pub relative_position: bool,
    pub rng: &'a mut ChaCha8Rng,
    pub norm_stats: Vec<NormStats>,
}

impl<'a> Forward<'a> {
    pub fn new(
        store: &'a ParamStore,
        train: bool,
        grad_weights: bool,
        rng: &'a mut ChaCha8Rng,
    ) -> Self {
        Forward {
            tape: Tape::new(),
            store,
            loaded: vec![None; store.len()],
            grad_weights,
            train,
            dropout: 0.0,
            relative_position: true,
            rng,
            norm_stats: Vec::new(),
        }
    }

    /// Tape handle of a stored tensor, recorded on first use. Weights are
    /// differentiable leaves only when the pass was created with
    /// `grad_weights`.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.loaded[id.0] {
            return v;
        }
        let t = self.store.get(id).clone();
        let v = if self.grad_weights && self.store.kind(id) == ParamKind::Weight {
            self.tape.leaf(t)
        } else {
            self.tape.constant(t)
        };
        self.loaded[id.0] = Some(v);
        v
    }

    /// Uses `v` for parameter `id` instead of loading the stored value.
    pub fn bind(&mut self, id: ParamId, v: Var) {
        self.loaded[id.0] = Some(v);
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn dropout(&mut self, x: Var) -> Result<Var> {
        self.tape
            .dropout(x, self.dropout, self.train, &mut *self.rng)
    }

    /// Parameters that were recorded as differentiable leaves.
    pub fn loaded_weights(&self) -> Vec<(ParamId, Var)> {
        self.loaded
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
            .filter(|(id, v)| {
                self.store.kind(*id) == ParamKind::Weight && self.tape.requires_grad(*v)
            })
            .collect()
    }
}
