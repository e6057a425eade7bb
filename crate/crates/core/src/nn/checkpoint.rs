//! JSON checkpoints of network parameters.
//!
//! ```json
//! {"format_version":1,"seed":7,
//!  "spec":{"input_dim":30,"hidden_dims":[128,128],"num_classes":10},
//!  "layers":[{"out_dim":128,"in_dim":30,"weight":[...],"bias":[...]}, ...]}
//! ```
//! Weights are row-major `(out_dim, in_dim)`. Floats are written in shortest
//! round-trip form, so loading reproduces the parameters bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::mlp::{Dense, MlpParameters, MlpSpec};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct LayerDoc {
    out_dim: usize,
    in_dim: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointDoc {
    format_version: u32,
    seed: u64,
    spec: MlpSpec,
    layers: Vec<LayerDoc>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: MlpParameters,
    pub seed: u64,
}

pub fn to_json(params: &MlpParameters, seed: u64) -> Result<String> {
    let doc = CheckpointDoc {
        format_version: CHECKPOINT_VERSION,
        seed,
        spec: params.spec().clone(),
        layers: params
            .layers()
            .iter()
            .map(|l| LayerDoc {
                out_dim: l.out_dim,
                in_dim: l.in_dim,
                weight: l.weight.clone(),
                bias: l.bias.clone(),
            })
            .collect(),
    };
    Ok(serde_json::to_string(&doc)?)
}

pub fn save(path: &Path, params: &MlpParameters, seed: u64) -> Result<()> {
    fs::write(path, to_json(params, seed)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path)?;
    let format = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| format(e.to_string()))?;
    let version = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| format("missing format_version".into()))?;
    if version != CHECKPOINT_VERSION as u64 {
        return Err(Error::Version {
            path: path.to_path_buf(),
            found: version as u32,
            expected: CHECKPOINT_VERSION,
        });
    }
    let doc: CheckpointDoc = serde_json::from_value(value).map_err(|e| format(e.to_string()))?;
    let params = MlpParameters::from_layers(
        doc.layers
            .into_iter()
            .map(|l| Dense {
                in_dim: l.in_dim,
                out_dim: l.out_dim,
                weight: l.weight,
                bias: l.bias,
            })
            .collect(),
    )
    .map_err(|e| format(e.to_string()))?;
    if params.spec() != &doc.spec {
        return Err(format("layer shapes disagree with the recorded spec".into()));
    }
    Ok(Checkpoint {
        params,
        seed: doc.seed,
    })
}
