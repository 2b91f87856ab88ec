use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MetaLinkModel, ModelConfig};
use crate::error::{Error, Result};
use crate::numcore::{DenseMatrix, ParamStore, Scalar};

#[derive(Serialize, Deserialize)]
struct Tensor {
    name: String,
    shape: [usize; 2],
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    config: ModelConfig,
    params: Vec<Tensor>,
}

impl<S: Scalar> MetaLinkModel<S> {
    /// Config plus every named tensor. Floats are written with the shortest
    /// decimal that parses back to the same `f64`, so loading is bit-exact.
    pub fn to_json(&self) -> Result<String> {
        let params = self
            .params
            .iter()
            .map(|(_, name, m)| Tensor {
                name: name.to_string(),
                shape: [m.rows(), m.cols()],
                values: m.values().iter().map(|v| v.as_f64()).collect(),
            })
            .collect();
        let ck = Checkpoint {
            config: self.config.clone(),
            params,
        };
        Ok(serde_json::to_string_pretty(&ck)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        let mut store = ParamStore::new();
        for t in ck.params {
            let values = t.values.into_iter().map(S::lit).collect();
            store.add(t.name, DenseMatrix::from_vec(t.shape[0], t.shape[1], values)?)?;
        }
        Self::from_parts(ck.config, store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
