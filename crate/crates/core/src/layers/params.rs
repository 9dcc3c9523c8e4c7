//! Named parameter registry with seeded initialization.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tape, Tensor, Var};

/// Index of a parameter within its [`ParamSet`]. Stable for the lifetime
/// of the set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Initialization scheme for a registered parameter.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// Uniform in `+-1/sqrt(fan_in)`.
    Uniform { fan_in: usize },
    Zeros,
    Ones,
}

/// All learnable tensors of a model, in deterministic registration order.
/// Names are unique; draws come from a seeded stream so construction is
/// reproducible.
pub struct ParamSet<E> {
    entries: Vec<(String, Tensor<E>)>,
    index: HashMap<String, usize>,
    rng: ChaCha8Rng,
}

impl<E: Element> ParamSet<E> {
    pub fn new(seed: u64) -> Self {
        ParamSet {
            entries: Vec::new(),
            index: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn register(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!(
                "parameter '{name}' registered twice"
            )));
        }
        let numel: usize = shape.iter().product();
        let data: Vec<E> = match init {
            Init::Uniform { fan_in } => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..numel)
                    .map(|_| E::from_f64(self.rng.gen_range(-bound..bound)))
                    .collect()
            }
            Init::Zeros => vec![E::zero(); numel],
            Init::Ones => vec![E::one(); numel],
        };
        let id = ParamId(self.entries.len());
        self.index.insert(name.to_string(), id.0);
        self.entries.push((name.to_string(), Tensor::from_vec(shape, data)?));
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn get(&self, id: ParamId) -> &Tensor<E> {
        &self.entries[id.0].1
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<E> {
        &mut self.entries[id.0].1
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    /// Replaces the data of `id`, keeping the registered shape.
    pub fn set_data(&mut self, id: ParamId, tensor: Tensor<E>) -> Result<()> {
        let (name, current) = &self.entries[id.0];
        if current.shape() != tensor.shape() {
            return Err(Error::Shape(format!(
                "parameter '{}': expected shape {:?}, got {:?}",
                name,
                current.shape(),
                tensor.shape()
            )));
        }
        self.entries[id.0].1 = tensor;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<E>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Deep copy with an independent RNG state.
    pub fn snapshot(&self) -> ParamSet<E> {
        ParamSet {
            entries: self.entries.clone(),
            index: self.index.clone(),
            rng: self.rng.clone(),
        }
    }
}

/// Tape bindings for every parameter of a set, in registration order.
pub struct ParamVars {
    vars: Vec<Var>,
}

impl ParamVars {
    pub fn get(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }
}

/// Registers every parameter as a leaf on `tape`. With `trainable` set,
/// gradients are accumulated for them during backward.
pub fn bind_params<E: Element>(
    tape: &mut Tape<E>,
    ps: &ParamSet<E>,
    trainable: bool,
) -> ParamVars {
    let vars = ps
        .iter()
        .map(|(_, tensor)| tape.leaf(tensor.clone(), trainable))
        .collect();
    ParamVars { vars }
}

/// Per-parameter gradients extracted from a tape after backward.
pub struct GradMap<E> {
    pub grads: Vec<Option<Tensor<E>>>,
}

impl<E: Element> GradMap<E> {
    pub fn get(&self, id: ParamId) -> Option<&Tensor<E>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Elementwise accumulate another gradient map (same registry).
    pub fn accumulate(&mut self, other: &GradMap<E>) {
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            match (mine.as_mut(), theirs) {
                (Some(a), Some(b)) => {
                    for (av, &bv) in a.data_mut().iter_mut().zip(b.data()) {
                        *av += bv;
                    }
                }
                (None, Some(b)) => *mine = Some(b.clone()),
                _ => {}
            }
        }
    }

    /// Scales every gradient in place.
    pub fn scale(&mut self, factor: f64) {
        let f = E::from_f64(factor);
        for g in self.grads.iter_mut().flatten() {
            for v in g.data_mut() {
                *v *= f;
            }
        }
    }
}

/// Collects gradients for every bound parameter after `tape.backward`.
pub fn collect_grads<E: Element>(tape: &Tape<E>, pv: &ParamVars) -> GradMap<E> {
    GradMap {
        grads: pv.vars.iter().map(|&v| tape.grad(v)).collect(),
    }
}
