use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::util;

const FORMAT: &str = "hypkg-checkpoint";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Tensor {
    name: String,
    shape: [usize; 2],
    /// Row-major values.
    data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    seed: u64,
    epoch: usize,
    config: ModelConfig,
    tensors: Vec<Tensor>,
}

/// Parameters restored from disk with their training context.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub seed: u64,
    pub epoch: usize,
}

pub fn checkpoint_json(params: &ModelParams, seed: u64, epoch: usize) -> Result<String> {
    let file = CheckpointFile {
        format: FORMAT.into(),
        version: VERSION,
        seed,
        epoch,
        config: params.config.clone(),
        tensors: params
            .tensors()
            .into_iter()
            .map(|(name, data, (r, c))| Tensor {
                name,
                shape: [r, c],
                data: data.to_vec(),
            })
            .collect(),
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn save_checkpoint(path: &Path, params: &ModelParams, seed: u64, epoch: usize) -> Result<()> {
    util::write_string(path, &checkpoint_json(params, seed, epoch)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file: CheckpointFile = serde_json::from_str(&util::read_to_string(path)?)?;
    if file.format != FORMAT || file.version != VERSION {
        return Err(Error::parse(
            path,
            1,
            format!("unsupported checkpoint {} v{}", file.format, file.version),
        ));
    }
    let mut params = ModelParams::init(&file.config, 0)?;
    let expected = params.tensors();
    if expected.len() != file.tensors.len() {
        return Err(Error::parse(path, 1, "tensor count does not match the config"));
    }
    for ((name, _, (r, c)), t) in expected.iter().zip(&file.tensors) {
        if *name != t.name || [*r, *c] != t.shape || t.data.len() != r * c {
            return Err(Error::parse(path, 1, format!("tensor `{}` has the wrong name or shape", t.name)));
        }
    }
    let flat: Vec<f64> = file.tensors.into_iter().flat_map(|t| t.data).collect();
    params.unflatten(&flat)?;
    Ok(Checkpoint {
        params,
        seed: file.seed,
        epoch: file.epoch,
    })
}
