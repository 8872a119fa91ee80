//! Single-file model checkpoints: named `f64` tensors plus a JSON metadata record,
//! stored in the safetensors layout.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::graph::Mat;

const META_KEY: &str = "faceshield";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub metadata: Value,
    pub tensors: BTreeMap<String, Mat>,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, metadata: Value) -> Self {
        Self {
            kind: kind.into(),
            metadata,
            tensors: BTreeMap::new(),
        }
    }

    pub fn with(mut self, name: &str, m: &Mat) -> Self {
        self.tensors.insert(name.to_string(), m.clone());
        self
    }

    pub fn tensor(&self, name: &str) -> Result<&Mat> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}` in {}", self.kind)))
    }

    pub fn meta_f64(&self, key: &str) -> Result<f64> {
        self.metadata
            .get(key)
            .and_then(Value::as_f64)
            .ok_or_else(|| Error::Checkpoint(format!("missing metadata `{key}` in {}", self.kind)))
    }

    pub fn meta_usize(&self, key: &str) -> Result<usize> {
        self.metadata
            .get(key)
            .and_then(Value::as_u64)
            .map(|v| v as usize)
            .ok_or_else(|| Error::Checkpoint(format!("missing metadata `{key}` in {}", self.kind)))
    }

    pub fn meta_usizes(&self, key: &str) -> Result<Vec<usize>> {
        self.metadata
            .get(key)
            .and_then(Value::as_array)
            .map(|a| {
                a.iter()
                    .filter_map(Value::as_u64)
                    .map(|v| v as usize)
                    .collect()
            })
            .ok_or_else(|| Error::Checkpoint(format!("missing metadata `{key}` in {}", self.kind)))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a {kind} checkpoint, found {}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let buffers: Vec<(String, Vec<usize>, Vec<u8>)> = self
            .tensors
            .iter()
            .map(|(name, m)| {
                let bytes = m.iter().flat_map(|v| v.to_le_bytes()).collect();
                (name.clone(), vec![m.nrows(), m.ncols()], bytes)
            })
            .collect();
        let views = buffers
            .iter()
            .map(|(name, shape, bytes)| {
                TensorView::new(Dtype::F64, shape.clone(), bytes)
                    .map(|v| (name.clone(), v))
                    .map_err(|e| Error::Checkpoint(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let record = serde_json::json!({ "kind": self.kind, "metadata": self.metadata });
        let mut info = HashMap::new();
        info.insert(META_KEY.to_string(), serde_json::to_string(&record)?);
        safetensors::tensor::serialize(views, &Some(info))
            .map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (_, header) =
            SafeTensors::read_metadata(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let record: Value = header
            .metadata()
            .as_ref()
            .and_then(|m| m.get(META_KEY))
            .ok_or_else(|| Error::Checkpoint("missing metadata record".into()))
            .and_then(|s| Ok(serde_json::from_str(s)?))?;
        let kind = record
            .get("kind")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Checkpoint("metadata record lacks `kind`".into()))?
            .to_string();
        let metadata = record.get("metadata").cloned().unwrap_or(Value::Null);
        let st = SafeTensors::deserialize(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut tensors = BTreeMap::new();
        for (name, view) in st.tensors() {
            if view.dtype() != Dtype::F64 || view.shape().len() != 2 {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` is not a 2-D f64"
                )));
            }
            let data: Vec<f64> = view
                .data()
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let m = Mat::from_shape_vec((view.shape()[0], view.shape()[1]), data)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
            tensors.insert(name, m);
        }
        Ok(Self {
            kind,
            metadata,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn roundtrip_preserves_bits() {
        let ck = Checkpoint::new(
            "probe",
            serde_json::json!({ "seed": 7, "shape": [4, 8, 8] }),
        )
        .with(
            "w",
            &array![[0.1, -2.5e-300, f64::MAX], [1.0 / 3.0, 0.0, -0.0]],
        )
        .with("b", &array![[std::f64::consts::PI]]);
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back.kind, "probe");
        assert_eq!(back.meta_usize("seed").unwrap(), 7);
        assert_eq!(back.meta_usizes("shape").unwrap(), vec![4, 8, 8]);
        for (name, m) in &ck.tensors {
            let other = back.tensor(name).unwrap();
            assert!(m
                .iter()
                .zip(other.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(Checkpoint::from_bytes(b"not a checkpoint").is_err());
    }
}
