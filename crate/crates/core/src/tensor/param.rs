use std::collections::HashMap;
use std::sync::Arc;

use super::{Real, Tape, Tensor, Var};
use crate::error::{config_err, Result};

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T: Real = f32> {
    pub name: String,
    pub value: Arc<Tensor<T>>,
    pub grad: Option<Tensor<T>>,
}

/// Named, ordered parameter set. Names are unique.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T: Real = f32> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return config_err!("duplicate parameter name {name}");
        }
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Parameter {
            name,
            value: Arc::new(value),
            grad: None,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    /// Mutable access to a value; clones it if a tape still shares it.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.id(name).map(|id| &self.params[id.0])
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Puts every parameter on `tape` as a leaf, in store order.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> Vec<Var<'t, T>> {
        self.params.iter().map(|p| tape.leaf(p.value.clone())).collect()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Adds `grads[i]` into parameter `i`'s gradient.
    pub fn accumulate_grads(&mut self, grads: Vec<Option<Tensor<T>>>) -> Result<()> {
        for (p, g) in self.params.iter_mut().zip(grads) {
            let Some(g) = g else { continue };
            match &mut p.grad {
                Some(acc) => acc.add_assign(&g)?,
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    pub fn scale_grads(&mut self, s: T) {
        for p in &mut self.params {
            if let Some(g) = &mut p.grad {
                *g = g.scale(s);
            }
        }
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    /// Same names and shapes, converted element type.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: Arc::new(p.value.cast()),
                    grad: p.grad.as_ref().map(|g| g.cast()),
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Replaces the value of an existing parameter, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let Some(id) = self.id(name) else {
            return config_err!("unknown parameter {name}");
        };
        let slot = &mut self.params[id.0];
        if slot.value.shape() != value.shape() {
            return config_err!(
                "parameter {name} has shape {:?}, got {:?}",
                slot.value.shape(),
                value.shape()
            );
        }
        slot.value = Arc::new(value);
        Ok(())
    }
}
