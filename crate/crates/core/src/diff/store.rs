use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use crate::{Error, Result};

/// Handle to a registered parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One named parameter tensor with its gradient slot and optimizer state.
#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
    pub frozen: bool,
    pub grad: Vec<f64>,
    /// Set when the last gradient fill skipped this entry (frozen).
    pub skip: bool,
    pub(crate) m: Vec<f64>,
    pub(crate) v: Vec<f64>,
    pub step: u64,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: BTreeMap<String, usize>,
    grads_fresh: bool,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, shape: &[usize], value: Vec<f32>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::DuplicateParam(name.to_string()));
        }
        let n: usize = shape.iter().product();
        if n != value.len() || shape.is_empty() || shape.contains(&0) {
            return Err(Error::Shape {
                op: "register",
                detail: alloc::format!("{name}: shape {shape:?} vs {} values", value.len()),
            });
        }
        let id = self.entries.len();
        self.entries.push(ParamEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            value,
            frozen: false,
            grad: vec![0.0; n],
            skip: false,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        });
        self.index.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entry_mut(&mut self, id: ParamId) -> &mut ParamEntry {
        &mut self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Ids of all entries whose name starts with `prefix`.
    pub fn ids_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.entries
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.name.starts_with(prefix))
            .map(|(i, _)| ParamId(i))
    }

    /// Toggles the freeze flag of a whole namespace; returns how many entries matched.
    pub fn set_frozen_prefix(&mut self, prefix: &str, frozen: bool) -> usize {
        let mut n = 0;
        for e in self.entries.iter_mut().filter(|e| e.name.starts_with(prefix)) {
            e.frozen = frozen;
            n += 1;
        }
        n
    }

    /// Zeroes AdamW moments and step counters of every entry.
    pub fn reset_optimizer(&mut self) {
        for e in &mut self.entries {
            e.m.iter_mut().for_each(|x| *x = 0.0);
            e.v.iter_mut().for_each(|x| *x = 0.0);
            e.step = 0;
        }
    }

    pub fn set_value(&mut self, id: ParamId, value: Vec<f32>) -> Result<()> {
        let e = &mut self.entries[id.0];
        if e.value.len() != value.len() {
            return Err(Error::LengthMismatch(e.value.len(), value.len()));
        }
        e.value = value;
        Ok(())
    }

    /// Working-precision snapshot for forward passes.
    pub fn values(&self) -> ParamValues {
        ParamValues {
            tensors: self
                .entries
                .iter()
                .map(|e| {
                    Tensor::new(e.shape.clone(), e.value.iter().map(|&v| v as f64).collect())
                        .expect("store shapes are validated on registration")
                })
                .collect(),
            trainable: self.entries.iter().map(|e| !e.frozen).collect(),
        }
    }

    /// Writes reduced gradients into the gradient slots. Frozen entries get a
    /// zero slot and the skip flag.
    pub fn fill_gradients(&mut self, grads: &ParamGrads) -> Result<()> {
        if grads.slots.len() != self.entries.len() {
            return Err(Error::LengthMismatch(grads.slots.len(), self.entries.len()));
        }
        for (e, g) in self.entries.iter_mut().zip(&grads.slots) {
            e.grad.iter_mut().for_each(|x| *x = 0.0);
            if e.frozen {
                e.skip = true;
                continue;
            }
            e.skip = false;
            if let Some(g) = g {
                if g.len() != e.grad.len() {
                    return Err(Error::LengthMismatch(g.len(), e.grad.len()));
                }
                e.grad.copy_from_slice(g);
            }
        }
        self.grads_fresh = true;
        Ok(())
    }

    pub(crate) fn take_fresh(&mut self) -> bool {
        core::mem::replace(&mut self.grads_fresh, false)
    }

    pub(crate) fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    /// Names whose values differ bit-wise between two stores with the same layout.
    pub fn diff_names(&self, other: &ParamStore) -> Vec<String> {
        self.entries
            .iter()
            .filter(|e| match other.index.get(&e.name) {
                Some(&j) => {
                    let o = &other.entries[j];
                    o.shape != e.shape
                        || o
                            .value
                            .iter()
                            .zip(&e.value)
                            .any(|(a, b)| a.to_bits() != b.to_bits())
                }
                None => true,
            })
            .map(|e| e.name.clone())
            .collect()
    }
}

/// 64-bit copy of every parameter plus its trainable flag.
#[derive(Debug, Clone)]
pub struct ParamValues {
    tensors: Vec<Tensor>,
    trainable: Vec<bool>,
}

impl ParamValues {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn trainable(&self, id: ParamId) -> bool {
        self.trainable[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn set(&mut self, id: ParamId, index: usize, value: f64) {
        self.tensors[id.0].data_mut()[index] = value;
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.trainable[id.0] = trainable;
    }
}

/// Per-parameter gradient accumulator, indexed like the store.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub(crate) slots: Vec<Option<Vec<f64>>>,
}

impl ParamGrads {
    pub fn zeros_like(values: &ParamValues) -> Self {
        Self {
            slots: vec![None; values.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.slots[id.0].as_deref()
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, g: &[f64]) {
        match &mut self.slots[id.0] {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g.to_vec()),
        }
    }

    /// `self += other`, in a fixed slot order.
    pub fn add(&mut self, other: &ParamGrads) {
        for (i, g) in other.slots.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.slots.iter_mut().flatten() {
            g.iter_mut().for_each(|x| *x *= c);
        }
    }

    /// Sum of a sequence of gradients in the order given.
    pub fn sum<'a>(values: &ParamValues, parts: impl IntoIterator<Item = &'a ParamGrads>) -> Self {
        let mut acc = Self::zeros_like(values);
        for p in parts {
            acc.add(p);
        }
        acc
    }
}

/// Reverse pass from a scalar `loss` straight into the store's gradient slots.
pub fn backward_gradients(graph: &Graph<'_>, loss: NodeId, store: &mut ParamStore) -> Result<()> {
    let grads = graph.backward(loss)?;
    store.fill_gradients(&grads)
}
