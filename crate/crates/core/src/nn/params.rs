//! Named parameter tensors with blob (de)serialization.

use std::collections::HashMap;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::tape::{NodeId, Tape};

/// Index of a parameter within its [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamDef {
    name: String,
    rows: usize,
    cols: usize,
    /// Whether decoupled weight decay applies (off for biases and
    /// normalization parameters, following common BERT practice).
    decay: bool,
}

/// An ordered collection of named `f64` matrices.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    defs: Vec<ParamDef>,
    values: Vec<Array2<f64>>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, value: Array2<f64>, decay: bool) -> ParamId {
        assert!(
            !self.defs.iter().any(|d| d.name == name),
            "duplicate parameter name {name}"
        );
        let (rows, cols) = value.dim();
        self.defs.push(ParamDef { name: name.to_string(), rows, cols, decay });
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Appends every parameter of `other`, returning the id offset at which
    /// they start.
    pub fn extend_from(&mut self, other: &ParamSet) -> usize {
        let offset = self.values.len();
        for (def, value) in other.defs.iter().zip(&other.values) {
            self.register(&def.name, value.clone(), def.decay);
        }
        offset
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.defs[id.0].name
    }

    pub fn decays(&self, id: ParamId) -> bool {
        self.defs[id.0].decay
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.defs.iter().position(|d| d.name == name).map(ParamId)
    }

    /// Ids whose names start with `prefix`.
    pub fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.defs
            .iter()
            .enumerate()
            .filter(|(_, d)| d.name.starts_with(prefix))
            .map(|(i, _)| ParamId(i))
            .collect()
    }

    /// New set holding only the parameters whose names start with `prefix`,
    /// names and order preserved.
    pub fn subset(&self, prefix: &str) -> ParamSet {
        let mut out = ParamSet::new();
        for id in self.ids_with_prefix(prefix) {
            out.register(self.name(id), self.value(id).clone(), self.decays(id));
        }
        out
    }

    /// Inserts every parameter as a tape leaf, for building forward graphs.
    pub fn insert_leaves(&self, tape: &mut Tape) -> ParamLeaves {
        let mut map = HashMap::new();
        for id in self.ids() {
            let node = tape.param(id, self.value(id).clone());
            map.insert(id, node);
        }
        ParamLeaves { map }
    }

    /// Total number of scalar coordinates.
    pub fn n_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Serializes to a blob: definitions plus base64 of the little-endian
    /// `f64` bytes, concatenated in registration order. Exact round trip.
    pub fn to_blob(&self) -> WeightBlob {
        let mut bytes = Vec::with_capacity(self.n_scalars() * 8);
        for v in &self.values {
            for &x in v.iter() {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
        }
        WeightBlob { defs: self.defs.clone(), data: BASE64.encode(bytes) }
    }

    pub fn from_blob(blob: &WeightBlob) -> Result<Self, String> {
        let bytes = BASE64.decode(&blob.data).map_err(|e| format!("bad blob data: {e}"))?;
        let expected: usize = blob.defs.iter().map(|d| d.rows * d.cols * 8).sum();
        if bytes.len() != expected {
            return Err(format!("blob length {} != expected {expected}", bytes.len()));
        }
        let mut values = Vec::with_capacity(blob.defs.len());
        let mut offset = 0;
        for def in &blob.defs {
            let n = def.rows * def.cols;
            let mut data = Vec::with_capacity(n);
            for i in 0..n {
                let mut buf = [0u8; 8];
                buf.copy_from_slice(&bytes[offset + i * 8..offset + i * 8 + 8]);
                data.push(f64::from_le_bytes(buf));
            }
            offset += n * 8;
            let arr = Array2::from_shape_vec((def.rows, def.cols), data)
                .map_err(|e| format!("bad shape for {}: {e}", def.name))?;
            values.push(arr);
        }
        Ok(Self { defs: blob.defs.clone(), values })
    }

    /// Bitwise equality of every stored value.
    pub fn bitwise_eq(&self, other: &ParamSet) -> bool {
        self.values.len() == other.values.len()
            && self.values.iter().zip(&other.values).all(|(a, b)| {
                a.dim() == b.dim()
                    && a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// Serialized form of a [`ParamSet`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightBlob {
    defs: Vec<ParamDef>,
    data: String,
}

/// Tape leaves for one parameter set.
pub struct ParamLeaves {
    map: HashMap<ParamId, NodeId>,
}

impl ParamLeaves {
    pub fn node(&self, id: ParamId) -> NodeId {
        self.map[&id]
    }
}
