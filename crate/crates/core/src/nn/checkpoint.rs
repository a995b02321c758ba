//! JSON checkpoint of named parameter tensors.
//!
//! ```json
//! {"format":"daal-mlp","version":1,"tensors":[
//!   {"name":"extractor.0.weight","shape":[h,d_in],"data":[...]},
//!   {"name":"extractor.0.bias","shape":[h],"data":[...]},
//!   ...
//!   {"name":"classifier.weight","shape":[K,d],"data":[...]},
//!   {"name":"classifier.bias","shape":[K],"data":[...]}]}
//! ```
//!
//! Weights are row-major `[out, in]`. Floats are written in shortest
//! round-trip form, so save/load is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dense, MlpModel};
use crate::error::{DaalError, Result};

pub const CHECKPOINT_FORMAT: &str = "daal-mlp";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub tensors: Vec<Tensor>,
}

fn layer_name(i: usize, n: usize) -> String {
    if i + 1 == n {
        "classifier".to_string()
    } else {
        format!("extractor.{i}")
    }
}

impl Checkpoint {
    pub fn from_model(model: &MlpModel) -> Self {
        let n = model.layers.len();
        let tensors = model
            .layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                let name = layer_name(i, n);
                [
                    Tensor {
                        name: format!("{name}.weight"),
                        shape: vec![l.outputs, l.inputs],
                        data: l.weight.clone(),
                    },
                    Tensor {
                        name: format!("{name}.bias"),
                        shape: vec![l.outputs],
                        data: l.bias.clone(),
                    },
                ]
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            tensors,
        }
    }

    pub fn into_model(self) -> Result<MlpModel> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(DaalError::Consistency(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        if self.tensors.len() < 4 || !self.tensors.len().is_multiple_of(2) {
            return Err(DaalError::Consistency("checkpoint has a malformed tensor list".into()));
        }
        let n = self.tensors.len() / 2;
        let mut layers = Vec::with_capacity(n);
        let mut it = self.tensors.into_iter();
        for i in 0..n {
            let name = layer_name(i, n);
            let w = it.next().expect("even length");
            let b = it.next().expect("even length");
            if w.name != format!("{name}.weight") || b.name != format!("{name}.bias") {
                return Err(DaalError::Consistency(format!(
                    "expected {name} tensors, found {} and {}",
                    w.name, b.name
                )));
            }
            let [outputs, inputs] = w.shape[..] else {
                return Err(DaalError::Consistency(format!("{} is not 2-D", w.name)));
            };
            if w.data.len() != outputs * inputs || b.shape != [outputs] || b.data.len() != outputs {
                return Err(DaalError::Consistency(format!("{name} shape mismatch")));
            }
            if let Some(prev) = layers.last() {
                let prev: &Dense = prev;
                if prev.outputs != inputs {
                    return Err(DaalError::Consistency(format!("{name} input width mismatch")));
                }
            }
            layers.push(Dense {
                inputs,
                outputs,
                weight: w.data,
                bias: b.data,
            });
        }
        Ok(MlpModel { layers })
    }
}

pub fn save_checkpoint(model: &MlpModel, path: &Path) -> Result<()> {
    let text = serde_json::to_string(&Checkpoint::from_model(model))
        .map_err(|e| DaalError::Serde(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| DaalError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<MlpModel> {
    let text = std::fs::read_to_string(path).map_err(|e| DaalError::io(path, e))?;
    let ck: Checkpoint =
        serde_json::from_str(&text).map_err(|e| DaalError::format(path, e.to_string()))?;
    ck.into_model()
}
