//! Named tensor collections: the checkpoint container format and seeded synthesis.

mod container;
mod synth;

use std::collections::btree_map::{self, BTreeMap};

use serde::{Deserialize, Serialize};

pub use container::{load_container, parse_container, save_container, serialize_container};
pub use synth::{synth, synth_tensor, tensor_rng, Distribution, SynthSpec};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DType {
    F64,
    F32,
    F16,
    BF16,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F64 => 8,
            DType::F32 => 4,
            DType::F16 | DType::BF16 => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F64 => "F64",
            DType::F32 => "F32",
            DType::F16 => "F16",
            DType::BF16 => "BF16",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "F64" => DType::F64,
            "F32" => DType::F32,
            "F16" => DType::F16,
            "BF16" => DType::BF16,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    /// Storage dtype; values are always held widened to f64.
    pub dtype: DType,
    pub tensor: Tensor,
}

/// Ordered, uniquely named tensors. Iteration is in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorSet {
    entries: BTreeMap<String, TensorEntry>,
}

impl TensorSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, dtype: DType, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if let Some(index) = tensor.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteTensor { name, index });
        }
        match self.entries.entry(name) {
            btree_map::Entry::Occupied(e) => Err(Error::InvalidConfig(format!(
                "duplicate tensor name `{}`",
                e.key()
            ))),
            btree_map::Entry::Vacant(v) => {
                v.insert(TensorEntry { dtype, tensor });
                Ok(())
            }
        }
    }

    pub fn insert_f64(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        self.insert(name, DType::F64, tensor)
    }

    pub fn get(&self, name: &str) -> Option<&TensorEntry> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &TensorEntry)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Keeps only tensors whose name contains one of `patterns` (all if empty).
    pub fn filter_names(self, patterns: &[String]) -> Self {
        if patterns.is_empty() {
            return self;
        }
        Self {
            entries: self
                .entries
                .into_iter()
                .filter(|(k, _)| patterns.iter().any(|p| k.contains(p.as_str())))
                .collect(),
        }
    }
}

impl IntoIterator for TensorSet {
    type Item = (String, TensorEntry);
    type IntoIter = btree_map::IntoIter<String, TensorEntry>;

    fn into_iter(self) -> Self::IntoIter {
        self.entries.into_iter()
    }
}
