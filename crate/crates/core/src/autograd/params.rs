use std::sync::atomic::{AtomicU64, Ordering};

use crate::autograd::{Gradients, Tape};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

static NEXT_SET_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a parameter inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    value: Tensor,
    grad: Vec<f64>,
    trainable: bool,
}

/// Named, ordered collection of model parameters with gradient buffers.
#[derive(Debug)]
pub struct ParamSet {
    id: u64,
    entries: Vec<Entry>,
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

impl Clone for ParamSet {
    fn clone(&self) -> Self {
        ParamSet {
            id: NEXT_SET_ID.fetch_add(1, Ordering::Relaxed),
            entries: self.entries.clone(),
        }
    }
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet {
            id: NEXT_SET_ID.fetch_add(1, Ordering::Relaxed),
            entries: Vec::new(),
        }
    }

    pub(crate) fn set_id(&self) -> u64 {
        self.id
    }

    /// Registers a trainable parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            self.find(&name).is_none(),
            "duplicate parameter name {name}"
        );
        let grad = vec![0.0; value.len()];
        self.entries.push(Entry {
            name,
            value,
            grad,
            trainable: true,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    /// Replaces a parameter value; the shape must not change.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if entry.value.shape() != value.shape() {
            return Err(Error::dim("ParamSet::set", entry.value.shape(), value.shape()));
        }
        entry.value = value;
        Ok(())
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    /// Marks every parameter frozen.
    pub fn freeze_all(&mut self) {
        for e in &mut self.entries {
            e.trainable = false;
        }
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].grad
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Adds the gradients of every parameter bound on `tape` into the buffers.
    pub fn accumulate(&mut self, tape: &Tape, grads: &Gradients) -> Result<()> {
        if let Some(set) = tape.bound_set() {
            if set != self.id {
                return Err(Error::Contract(
                    "tape was bound to a different parameter set".into(),
                ));
            }
        }
        for (pid, var) in tape.bound_params() {
            if let Some(g) = grads.get(var) {
                let entry = &mut self.entries[pid.0];
                for (acc, v) in entry.grad.iter_mut().zip(g.data()) {
                    *acc += v;
                }
            }
        }
        Ok(())
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn num_trainable_scalars(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.len())
            .sum()
    }

    /// `(name, tensor)` pairs in registration order.
    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.value))
    }
}
