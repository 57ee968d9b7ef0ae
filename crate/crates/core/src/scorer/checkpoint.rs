//! JSON checkpoints of scorer networks.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{Hyper, ScorerNetwork};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "l2c-scorer";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    num_vars: usize,
    hyper: Hyper,
    params: BTreeMap<String, Tensor>,
}

pub fn checkpoint_to_string(net: &ScorerNetwork) -> Result<String> {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        num_vars: net.num_vars,
        hyper: net.hyper.clone(),
        params: net
            .params()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect(),
    };
    Ok(serde_json::to_string(&file)?)
}

/// Parses a checkpoint; with `num_vars` given, rejects networks built for a
/// different model size.
pub fn checkpoint_from_str(text: &str, num_vars: Option<usize>) -> Result<ScorerNetwork> {
    let mut file: CheckpointFile =
        serde_json::from_str(text).map_err(|e| Error::Schema(format!("bad checkpoint: {e}")))?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(Error::Schema(format!(
            "not a checkpoint (format {:?})",
            file.format
        )));
    }
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: file.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    if let Some(n) = num_vars {
        if n != file.num_vars {
            return Err(Error::Shape(format!(
                "checkpoint is for {} variables, the model has {n}",
                file.num_vars
            )));
        }
    }
    let mut net = ScorerNetwork::zeros(file.num_vars, file.hyper)?;
    for (name, slot) in net.params_mut() {
        let t = file
            .params
            .remove(&name)
            .ok_or_else(|| Error::Schema(format!("checkpoint misses parameter {name}")))?;
        if t.shape != slot.shape || t.data.len() != slot.data.len() {
            return Err(Error::Shape(format!(
                "parameter {name} has shape {:?}, expected {:?}",
                t.shape, slot.shape
            )));
        }
        *slot = t;
    }
    if let Some(name) = file.params.keys().next() {
        return Err(Error::Schema(format!("unexpected parameter {name}")));
    }
    Ok(net)
}

pub fn save_checkpoint(net: &ScorerNetwork, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_to_string(net)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path, num_vars: Option<usize>) -> Result<ScorerNetwork> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    checkpoint_from_str(&text, num_vars)
}
