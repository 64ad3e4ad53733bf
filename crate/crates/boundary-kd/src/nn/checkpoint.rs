//! Checkpoint persistence: manifest JSON plus a little-endian f32 blob.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Network, NetworkSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub spec: NetworkSpec,
    pub seed: u64,
    pub epoch: usize,
    pub dtype: String,
    pub param_count: usize,
}

fn paths(base: &Path) -> (PathBuf, PathBuf) {
    (base.with_extension("json"), base.with_extension("bin"))
}

/// Write `base.json` + `base.bin`. Loadable as a student to keep training or
/// wrapped into a hard-label oracle.
pub fn save_checkpoint(network: &Network<f32>, epoch: usize, base: &Path) -> Result<()> {
    let (json_path, bin_path) = paths(base);
    let manifest = CheckpointManifest {
        spec: network.spec().clone(),
        seed: network.seed(),
        epoch,
        dtype: "f32-le".into(),
        param_count: network.parameter_count(),
    };
    let file = std::fs::File::create(json_path)?;
    serde_json::to_writer_pretty(file, &manifest)?;
    let params = network.params_flat();
    let mut bytes = Vec::with_capacity(params.len() * 4);
    for v in params {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(bin_path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_checkpoint(base: &Path) -> Result<(Network<f32>, CheckpointManifest)> {
    let (json_path, bin_path) = paths(base);
    let manifest: CheckpointManifest = serde_json::from_reader(std::fs::File::open(&json_path)?)?;
    if manifest.dtype != "f32-le" {
        return Err(Error::InvalidConfig(format!(
            "unsupported checkpoint dtype {:?}",
            manifest.dtype
        )));
    }
    let mut bytes = Vec::new();
    std::fs::File::open(&bin_path)?.read_to_end(&mut bytes)?;
    if bytes.len() != manifest.param_count * 4 {
        return Err(Error::Truncated {
            wanted: manifest.param_count * 4,
            context: "checkpoint parameter blob",
        });
    }
    let params: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let mut network = Network::init(manifest.spec.clone(), manifest.seed)?;
    network.set_params_flat(&params)?;
    Ok((network, manifest))
}
