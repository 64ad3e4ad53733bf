//! Shared manifest + little-endian f32 blob reader/writer used by datasets,
//! transfer sets and checkpoints alike.

use std::io::{Read, Write};
use std::path::Path;

use serde::{de::DeserializeOwned, Serialize};

use crate::error::{Error, Result};

pub(crate) fn write_manifest<M: Serialize>(path: &Path, manifest: &M) -> Result<()> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(file, manifest)?;
    Ok(())
}

pub(crate) fn read_manifest<M: DeserializeOwned>(path: &Path) -> Result<M> {
    let file = std::fs::File::open(path)?;
    Ok(serde_json::from_reader(file)?)
}

pub(crate) fn write_f32_blob(path: &Path, values: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub(crate) fn read_f32_blob(path: &Path, expected_len: usize) -> Result<Vec<f32>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < expected_len * 4 {
        return Err(Error::Truncated {
            wanted: expected_len * 4 - bytes.len(),
            context: "f32 blob",
        });
    }
    if bytes.len() != expected_len * 4 {
        return Err(Error::InvalidConfig(format!(
            "blob has {} bytes, expected {}",
            bytes.len(),
            expected_len * 4
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}
