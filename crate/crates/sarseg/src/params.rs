//! Named parameter groups shared by the model, optimizer, and checkpoints.
//!
//! Parameters live in insertion order (deterministic binding, optimizer
//! walks, and serialization). Group membership is by name prefix, e.g.
//! `sar_dense.block0.attn.wq` belongs to group `sar_dense`.

use indexmap::IndexMap;

use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        let prev = self.entries.insert(name.clone(), value);
        assert!(prev.is_none(), "duplicate parameter {name}");
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.entries.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.entries.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn group(&self, name: &str) -> &str {
        name.split('.').next().unwrap_or(name)
    }

    pub fn group_names(&self) -> Vec<String> {
        let mut groups = Vec::new();
        for name in self.entries.keys() {
            let g = self.group(name).to_string();
            if !groups.contains(&g) {
                groups.push(g);
            }
        }
        groups
    }

    pub fn total_values(&self) -> usize {
        self.entries.values().map(|t| t.len()).sum()
    }

    /// FNV-1a over the exact f64 bits of every parameter in a group; used to
    /// assert that frozen groups are bit-unchanged by training.
    pub fn group_hash(&self, group: &str) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for (name, tensor) in &self.entries {
            if self.group(name) != group {
                continue;
            }
            for byte in name.as_bytes() {
                hash = (hash ^ *byte as u64).wrapping_mul(0x100_0000_01b3);
            }
            for v in tensor.data() {
                for byte in v.to_le_bytes() {
                    hash = (hash ^ byte as u64).wrapping_mul(0x100_0000_01b3);
                }
            }
        }
        hash
    }
}

/// Parameter leaves bound into a graph for one forward pass.
pub struct BoundParams {
    ids: IndexMap<String, NodeId>,
}

impl BoundParams {
    pub fn bind(store: &ParamStore, graph: &mut Graph) -> Self {
        let mut ids = IndexMap::with_capacity(store.len());
        for (name, tensor) in store.iter() {
            ids.insert(name.clone(), graph.leaf(tensor.clone()));
        }
        Self { ids }
    }

    pub fn id(&self, name: &str) -> NodeId {
        *self.ids.get(name).unwrap_or_else(|| panic!("unbound parameter {name}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &NodeId)> {
        self.ids.iter()
    }
}
