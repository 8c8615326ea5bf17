//! Named parameter storage shared by the transformer and the GNN.
//!
//! A [`ParamStore`] holds the master copy of every model tensor, keyed by a
//! hierarchical name such as `plm.enc0.attn.wq`. Each training step binds the
//! store into a fresh [`Tape`]; gradients come back keyed by tape node and are
//! translated back to names with [`Bound::named_grads`] so the optimizer can
//! keep per-parameter state across steps.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::checkpoint;
use super::tape::{NodeId, Tape};
use super::{Tensor, TensorError};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a fresh parameter. Names must be unique; reusing one is a
    /// wiring bug, not a runtime condition.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        let prev = self.tensors.insert(name.clone(), value);
        assert!(prev.is_none(), "duplicate parameter {name}");
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.tensors
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Absorbs another store, e.g. merging `gnn.*` into a `plm.*` store for
    /// joint training. Name collisions are a wiring bug.
    pub fn merge(&mut self, other: ParamStore) {
        for (name, value) in other.tensors {
            self.insert(name, value);
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), TensorError> {
        checkpoint::save_tensors(path, &self.tensors)
    }

    pub fn load(path: &Path) -> Result<Self, TensorError> {
        Ok(ParamStore { tensors: checkpoint::load_tensors(path)? })
    }

    /// Copies every tensor into `tape`. Names accepted by `trainable` become
    /// tape parameters (gradients tracked); the rest become plain inputs, which
    /// both freezes them exactly and skips their gradient work.
    pub fn bind(&self, tape: &mut Tape, trainable: impl Fn(&str) -> bool) -> Bound {
        let mut ids = BTreeMap::new();
        let mut tracked = BTreeSet::new();
        for (name, value) in &self.tensors {
            let id = if trainable(name) {
                tracked.insert(name.clone());
                tape.param(value.clone())
            } else {
                tape.input(value.clone())
            };
            ids.insert(name.clone(), id);
        }
        Bound { ids, tracked }
    }

    pub fn bind_all(&self, tape: &mut Tape) -> Bound {
        self.bind(tape, |_| true)
    }

    /// Binds everything as plain inputs, for inference-only passes.
    pub fn bind_frozen(&self, tape: &mut Tape) -> Bound {
        self.bind(tape, |_| false)
    }
}

/// The tape-local image of a [`ParamStore`]: name -> node id for one forward
/// pass, plus the set of names that were bound as trainable.
#[derive(Debug)]
pub struct Bound {
    ids: BTreeMap<String, NodeId>,
    tracked: BTreeSet<String>,
}

impl Bound {
    pub fn id(&self, name: &str) -> NodeId {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    /// Translates a tape gradient map back to parameter names. Trainable
    /// parameters that never entered the forward pass are simply absent.
    pub fn named_grads(&self, grads: &BTreeMap<NodeId, Tensor>) -> BTreeMap<String, Tensor> {
        self.tracked
            .iter()
            .filter_map(|name| grads.get(&self.ids[name]).map(|g| (name.clone(), g.clone())))
            .collect()
    }
}

/// Element-wise accumulation of per-example gradients into a running batch sum.
pub fn accumulate_grads(into: &mut BTreeMap<String, Tensor>, part: BTreeMap<String, Tensor>) {
    for (name, grad) in part {
        match into.get_mut(&name) {
            Some(acc) => {
                assert_eq!(acc.shape(), grad.shape(), "gradient shape drift for {name}");
                for (a, g) in acc.data_mut().iter_mut().zip(grad.data()) {
                    *a += g;
                }
            }
            None => {
                into.insert(name, grad);
            }
        }
    }
}

pub fn scale_grads(grads: &mut BTreeMap<String, Tensor>, factor: f32) {
    for grad in grads.values_mut() {
        for g in grad.data_mut() {
            *g *= factor;
        }
    }
}
