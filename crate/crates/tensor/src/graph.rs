use std::ops::{Deref, DerefMut};

use crate::error::TensorError;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which optimizer owns a parameter. The two groups are never stepped together.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Group {
    /// Encoders and decoder.
    Model,
    /// The variational networks of the mutual-information estimators.
    Estimator,
}

impl Group {
    pub fn tag(self) -> u8 {
        match self {
            Group::Model => 0,
            Group::Estimator => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Group::Model),
            1 => Some(Group::Estimator),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    /// Running statistics and other state that is never differentiated.
    Buffer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub group: Group,
    pub kind: ParamKind,
}

/// Owns every named tensor of a model, in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, group: Group) -> ParamId {
        self.push(name.into(), value, group, ParamKind::Trainable)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor, group: Group) -> ParamId {
        self.push(name.into(), value, group, ParamKind::Buffer)
    }

    fn push(&mut self, name: String, value: Tensor, group: Group, kind: ParamKind) -> ParamId {
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.entries.push(ParamEntry { name, value, group, kind });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
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

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Number of trainable scalars in `group`.
    pub fn count(&self, group: Group) -> usize {
        self.entries
            .iter()
            .filter(|e| e.group == group && e.kind == ParamKind::Trainable)
            .map(|e| e.value.numel())
            .sum()
    }

    /// Overwrite values from `other`, matching by name and shape.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<(), TensorError> {
        if other.len() != self.len() {
            return Err(TensorError::Param {
                name: "*".into(),
                detail: format!("expected {} tensors, found {}", self.len(), other.len()),
            });
        }
        for e in &mut self.entries {
            let src = other
                .find(&e.name)
                .map(|id| other.get(id))
                .ok_or_else(|| TensorError::Param {
                    name: e.name.clone(),
                    detail: "missing".into(),
                })?;
            if src.shape() != e.value.shape() {
                return Err(TensorError::Param {
                    name: e.name.clone(),
                    detail: format!("shape {:?}, expected {:?}", src.shape(), e.value.shape()),
                });
            }
            e.value = src.clone();
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in normalization layers; running stats are updated.
    Train,
    /// Running statistics; no state changes.
    Eval,
}

/// A tape plus the binding of store parameters onto it for one forward pass.
///
/// Parameters whose group is listed in `grad_groups` become differentiable
/// leaves; all others enter as constants.
#[derive(Debug)]
pub struct Graph {
    tape: Tape,
    mode: Mode,
    grad_groups: Vec<Group>,
    bound: Vec<(ParamId, Var)>,
    buffer_updates: Vec<(ParamId, Tensor)>,
}

impl Graph {
    pub fn new(mode: Mode, grad_groups: &[Group]) -> Self {
        Self {
            tape: Tape::new(),
            mode,
            grad_groups: grad_groups.to_vec(),
            bound: Vec::new(),
            buffer_updates: Vec::new(),
        }
    }

    /// Inference graph: nothing is differentiable.
    pub fn inference() -> Self {
        Self::new(Mode::Eval, &[])
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    /// Bind parameter `id` (once per graph).
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.bound.iter().rev().find(|(p, _)| *p == id) {
            return v;
        }
        let e = store.entry(id);
        let rg = e.kind == ParamKind::Trainable && self.grad_groups.contains(&e.group);
        let v = self.tape.leaf(e.value.clone(), rg);
        self.bound.push((id, v));
        v
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.tape.constant(value)
    }

    pub fn record_buffer(&mut self, id: ParamId, value: Tensor) {
        self.buffer_updates.push((id, value));
    }

    /// Pending running-statistic updates, in recording order.
    pub fn buffer_updates(&self) -> &[(ParamId, Tensor)] {
        &self.buffer_updates
    }

    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        self.tape.backward(loss)
    }

    /// Gradients for every bound differentiable parameter that the loss reached.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<(ParamId, Tensor)> {
        let mut out: Vec<(ParamId, Tensor)> = self
            .bound
            .iter()
            .filter(|(_, v)| self.tape.requires_grad(*v))
            .filter_map(|&(p, v)| grads.get(v).map(|g| (p, g)))
            .collect();
        out.sort_by_key(|(p, _)| *p);
        out
    }

    /// Write recorded running statistics back into the store.
    pub fn commit_buffers(&self, store: &mut ParamStore) {
        for (id, t) in &self.buffer_updates {
            *store.get_mut(*id) = t.clone();
        }
    }
}

impl Deref for Graph {
    type Target = Tape;
    fn deref(&self) -> &Tape {
        &self.tape
    }
}

impl DerefMut for Graph {
    fn deref_mut(&mut self) -> &mut Tape {
        &mut self.tape
    }
}
