//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! Values are recorded on a [`Tape`] as primitives execute; [`Tape::backward`]
//! walks the tape in reverse and returns a gradient for every node the loss
//! depends on. Model parameters live in a [`ParamSet`] between steps and are
//! bound onto a fresh tape for each forward pass.

mod adam;
mod array;
mod tape;

use alloc::string::String;
use alloc::vec::Vec;

pub use adam::{clip_global_norm, Adam, AdamConfig};
pub use array::Array;
pub use tape::{Axis, Gradients, NodeId, Tape};

use alloc::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} needs {} elements, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{0}: no inputs")]
    EmptyInput(&'static str),
    #[error("slice {start}..{end} out of range for length {len}")]
    SliceOutOfRange {
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("index {index} outside vocabulary of size {vocab}")]
    IndexOutOfVocab { index: usize, vocab: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("missing parameter `{0}`")]
    MissingParameter(String),
}

/// Named trainable arrays.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    params: BTreeMap<String, Array>,
}

/// Tape handles for a bound [`ParamSet`].
#[derive(Debug, Clone, Default)]
pub struct Bound {
    ids: BTreeMap<String, NodeId>,
}

impl Bound {
    /// Handle for a parameter. Panics on unknown names, which indicates a
    /// model construction bug rather than bad input.
    pub fn get(&self, name: &str) -> NodeId {
        match self.ids.get(name) {
            Some(&id) => id,
            None => panic!("parameter `{name}` not bound"),
        }
    }

    pub fn try_get(&self, name: &str) -> Option<NodeId> {
        self.ids.get(name).copied()
    }

    /// Collects parameter gradients by name; unreachable parameters get zeros.
    pub fn gradients(&self, tape: &Tape, grads: &Gradients) -> BTreeMap<String, Array> {
        self.ids
            .iter()
            .map(|(name, &id)| (name.clone(), grads.get_or_zeros(id, tape.value(id).shape())))
            .collect()
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Array> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array)> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Array::len).sum()
    }

    /// Records every parameter as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            ids: self
                .params
                .iter()
                .map(|(name, value)| (name.clone(), tape.param(value.clone())))
                .collect(),
        }
    }

    /// Records every parameter as a constant (no gradient flows into it).
    pub fn bind_frozen(&self, tape: &mut Tape) -> Bound {
        Bound {
            ids: self
                .params
                .iter()
                .map(|(name, value)| (name.clone(), tape.constant(value.clone())))
                .collect(),
        }
    }
}
