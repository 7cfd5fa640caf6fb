//! Named, ordered parameter tensors and their binding onto a tape.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Arc<Tensor>>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces `name`. New names keep insertion order.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        match self.index.get(&name) {
            Some(&i) => self.values[i] = Arc::new(value),
            None => {
                self.index.insert(name.clone(), self.names.len());
                self.names.push(name);
                self.values.push(Arc::new(value));
            }
        }
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init_uniform(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut impl Rng) {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data).expect("finite init"));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| self.values[i].as_ref())
    }

    /// Copy-on-write access for optimizer updates.
    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = *self.index.get(name)?;
        Some(Arc::make_mut(&mut self.values[i]))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.values.iter().map(|v| v.as_ref()))
    }

    /// Registers every parameter as a trainable leaf of `tape`.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let vars = self.values.iter().map(|v| tape.param(Arc::clone(v))).collect();
        BoundParams {
            vars,
            index: self.index.clone(),
        }
    }

    /// Wraps vars created elsewhere, one per parameter in store order.
    pub fn bind_vars(&self, vars: Vec<Var>) -> BoundParams {
        assert_eq!(vars.len(), self.len(), "one var per parameter");
        BoundParams {
            vars,
            index: self.index.clone(),
        }
    }

    /// Registers every parameter as a constant (no gradients).
    pub fn bind_frozen(&self, tape: &mut Tape) -> BoundParams {
        let vars = self.values.iter().map(|v| tape.constant((**v).clone())).collect();
        BoundParams {
            vars,
            index: self.index.clone(),
        }
    }
}

/// Tape handles for every parameter of a [`ParamStore`].
pub struct BoundParams {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl BoundParams {
    /// Panics on an unknown name: parameter sets are fixed by the config.
    pub fn var(&self, name: &str) -> Var {
        match self.index.get(name) {
            Some(&i) => self.vars[i],
            None => panic!("unknown parameter {name}"),
        }
    }

    pub fn try_var(&self, name: &str) -> Option<Var> {
        self.index.get(name).map(|&i| self.vars[i])
    }

    /// `(name index, var)` in store order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// On-disk form of one parameter.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl ParamStore {
    pub fn to_records(&self) -> Vec<NamedTensor> {
        self.iter()
            .map(|(n, t)| NamedTensor {
                name: n.to_string(),
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect()
    }

    pub fn from_records(records: Vec<NamedTensor>) -> Result<Self, crate::tensor::TensorError> {
        let mut store = ParamStore::new();
        for r in records {
            store.insert(r.name, Tensor::new(r.shape, r.data)?);
        }
        Ok(store)
    }
}
