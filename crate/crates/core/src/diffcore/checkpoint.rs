//! `CDTW` checkpoint files.
//!
//! Layout: magic `CDTW`, version `u32`, header length `u64`, a JSON header
//! (network kind, recurrent cell, hyperparameters, tensor names and shapes),
//! then every tensor's values as little-endian `f64` in header order.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DiffError, ParamSet, Tensor};

pub const MAGIC: &[u8; 4] = b"CDTW";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: String,
    pub cell: String,
    pub hyperparameters: BTreeMap<String, serde_json::Value>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub cell: String,
    pub hyperparameters: BTreeMap<String, serde_json::Value>,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn new(kind: &str, params: ParamSet) -> Self {
        Checkpoint {
            kind: kind.to_string(),
            cell: super::nn::RECURRENT_CELL.to_string(),
            hyperparameters: BTreeMap::new(),
            params,
        }
    }

    pub fn with_hyper(mut self, key: &str, value: impl Serialize) -> Self {
        self.hyperparameters
            .insert(key.to_string(), serde_json::to_value(value).expect("serializable hyperparameter"));
        self
    }

    pub fn hyper<T: for<'de> Deserialize<'de>>(&self, key: &str) -> Result<T, DiffError> {
        let v = self
            .hyperparameters
            .get(key)
            .ok_or_else(|| DiffError::Checkpoint(format!("missing hyperparameter `{key}`")))?;
        serde_json::from_value(v.clone()).map_err(|e| DiffError::Checkpoint(format!("hyperparameter `{key}`: {e}")))
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), DiffError> {
        let header = CheckpointHeader {
            kind: self.kind.clone(),
            cell: self.cell.clone(),
            hyperparameters: self.hyperparameters.clone(),
            tensors: self
                .params
                .iter()
                .map(|(n, t)| TensorEntry { name: n.to_string(), shape: t.shape().to_vec() })
                .collect(),
        };
        let text = serde_json::to_vec_pretty(&header).map_err(|e| DiffError::Checkpoint(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(text.len() as u64).to_le_bytes())?;
        w.write_all(&text)?;
        let mut buf = Vec::new();
        for (_, t) in self.params.iter() {
            buf.clear();
            buf.extend(t.data().iter().flat_map(|v| v.to_le_bytes()));
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, DiffError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(DiffError::Checkpoint(format!("bad magic {magic:?}")));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(DiffError::Checkpoint(format!("unsupported version {version}")));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        let mut text = vec![0u8; len];
        r.read_exact(&mut text)?;
        let header: CheckpointHeader =
            serde_json::from_slice(&text).map_err(|e| DiffError::Checkpoint(format!("header: {e}")))?;
        let mut params = ParamSet::new();
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            let mut raw = vec![0u8; n * 8];
            r.read_exact(&mut raw)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            params.insert(entry.name, Tensor::new(entry.shape, data)?);
        }
        Ok(Checkpoint { kind: header.kind, cell: header.cell, hyperparameters: header.hyperparameters, params })
    }

    pub fn save(&self, path: &Path) -> Result<(), DiffError> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DiffError> {
        let f = std::fs::File::open(path).map_err(|e| DiffError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::read_from(std::io::BufReader::new(f))
    }
}
