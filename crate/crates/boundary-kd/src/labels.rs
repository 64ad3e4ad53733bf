//! Soft labels from robustness records, and the transfer set they form.
//!
//! Off-class activations are inverse distances; the own-class activation is
//! their sum; everything is divided by the squared sum, which leaves the
//! own-class activation at exactly `1 / sum(1/r)`. A temperature softmax
//! turns the activations into the stored probability vector.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::blobio;
use crate::error::{Error, Result};
use crate::geometry::{RobustnessRecord, RobustnessStrategy};
use crate::oracle::{argmax_lowest, ClassLabel};
use crate::shape::Shape;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelConfig {
    pub temperature: f64,
    /// Distances below this are lifted to it before inversion.
    pub clamp_floor: f64,
    /// Apply the temperature to the constructed teacher distribution
    /// (symmetric with the student side). `false` stores plain softmax(a).
    pub soften_teacher: bool,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            temperature: 0.3,
            clamp_floor: 1e-8,
            soften_teacher: true,
        }
    }
}

impl LabelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperature <= 0.0 {
            return Err(Error::InvalidConfig("temperature must be positive".into()));
        }
        if self.clamp_floor <= 0.0 {
            return Err(Error::InvalidConfig("clamp_floor must be positive".into()));
        }
        Ok(())
    }
}

/// A constructed probability distribution over classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftLabel {
    pub probabilities: Vec<f32>,
    pub top1: ClassLabel,
}

impl SoftLabel {
    /// Rebuild the top-1 index from stored probabilities (ties to the lowest
    /// index, matching every other argmax in the crate).
    pub fn from_probabilities(probabilities: Vec<f32>) -> Self {
        let scores: Vec<f64> = probabilities.iter().map(|&p| p as f64).collect();
        SoftLabel {
            top1: ClassLabel(argmax_lowest(&scores)),
            probabilities,
        }
    }
}

/// Pre-softmax activations from a robustness record (own-class entry is the
/// inverse-distance sum; everything divided by the squared sum).
pub fn construct_activations(record: &RobustnessRecord) -> Result<Vec<f64>> {
    let l = record.class_count();
    let m = record.own_class.0;
    if m >= l {
        return Err(Error::ClassOutOfRange { class: m, count: l });
    }
    let mut inv_sum = 0.0f64;
    for (n, entry) in record.distances.iter().enumerate() {
        if n == m {
            continue;
        }
        match entry {
            Some(r) if *r > 0.0 => inv_sum += 1.0 / r,
            Some(r) => {
                return Err(Error::NonPositiveDistance {
                    class: n,
                    value: *r,
                })
            }
            None => {
                return Err(Error::InvalidConfig(format!(
                    "record {} is missing the distance for class {n}",
                    record.sample_index
                )))
            }
        }
    }
    let denom = inv_sum * inv_sum;
    let mut activations = Vec::with_capacity(l);
    for (n, entry) in record.distances.iter().enumerate() {
        if n == m {
            activations.push(inv_sum / denom);
        } else {
            activations.push((1.0 / entry.expect("validated above")) / denom);
        }
    }
    Ok(activations)
}

/// Temperature softmax in 64-bit, with max subtraction.
pub fn softened_probabilities(activations: &[f64], temperature: f64) -> Vec<f64> {
    let max = activations
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = activations
        .iter()
        .map(|&a| ((a - max) / temperature).exp())
        .collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax of `activations / temperature` as a stored soft label.
pub fn soften(activations: &[f64], temperature: f64) -> Result<SoftLabel> {
    if temperature <= 0.0 {
        return Err(Error::InvalidConfig("temperature must be positive".into()));
    }
    if activations.iter().any(|a| !a.is_finite()) {
        return Err(Error::InvalidConfig(
            "activations must be finite to soften".into(),
        ));
    }
    let probs = softened_probabilities(activations, temperature);
    Ok(SoftLabel::from_probabilities(
        probs.into_iter().map(|p| p as f32).collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransferSource {
    Real,
    Pseudo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferMetadata {
    pub source: TransferSource,
    pub strategy: Option<RobustnessStrategy>,
    pub temperature: f64,
    pub seed: u64,
    /// Free-form description of the teacher (kind, checkpoint path, ...).
    pub oracle: String,
    /// Creation parameters worth keeping next to the data.
    #[serde(default)]
    pub params: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferEntry {
    pub pixels: Vec<f32>,
    pub label: SoftLabel,
}

/// Ordered (sample, soft label) pairs plus provenance; the distillation input.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferSet {
    pub shape: Shape,
    pub class_count: usize,
    pub entries: Vec<TransferEntry>,
    pub metadata: TransferMetadata,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransferManifest {
    shape: Shape,
    #[serde(rename = "L")]
    class_count: usize,
    count: usize,
    dtype: String,
    metadata: TransferMetadata,
}

impl TransferSet {
    pub fn validate(&self) -> Result<()> {
        if self.metadata.temperature <= 0.0 {
            return Err(Error::InvalidConfig(
                "metadata temperature must be positive".into(),
            ));
        }
        let d = self.shape.len();
        for e in &self.entries {
            if e.pixels.len() != d {
                return Err(Error::ShapeMismatch {
                    got: e.pixels.len(),
                    expected: d,
                    shape: self.shape,
                });
            }
            if e.label.probabilities.len() != self.class_count {
                return Err(Error::CountMismatch {
                    left: "probabilities",
                    left_count: e.label.probabilities.len(),
                    right: "classes",
                    right_count: self.class_count,
                });
            }
        }
        Ok(())
    }

    fn record_len(&self) -> usize {
        self.shape.len() + self.class_count
    }

    /// Write `<base>.json` (manifest) and `<base>.bin` (per record: pixels
    /// then probabilities, little-endian f32). Bit-exact round trip.
    pub fn save(&self, base: &Path) -> Result<(PathBuf, PathBuf)> {
        self.validate()?;
        let manifest = TransferManifest {
            shape: self.shape,
            class_count: self.class_count,
            count: self.entries.len(),
            dtype: "f32-le".into(),
            metadata: self.metadata.clone(),
        };
        let json_path = base.with_extension("json");
        let bin_path = base.with_extension("bin");
        blobio::write_manifest(&json_path, &manifest)?;
        let mut values = Vec::with_capacity(self.entries.len() * self.record_len());
        for e in &self.entries {
            values.extend_from_slice(&e.pixels);
            values.extend_from_slice(&e.label.probabilities);
        }
        blobio::write_f32_blob(&bin_path, &values)?;
        Ok((json_path, bin_path))
    }

    pub fn load(base: &Path) -> Result<TransferSet> {
        let manifest: TransferManifest = blobio::read_manifest(&base.with_extension("json"))?;
        if manifest.dtype != "f32-le" {
            return Err(Error::InvalidConfig(format!(
                "unsupported transfer dtype {:?}",
                manifest.dtype
            )));
        }
        let d = manifest.shape.len();
        let record_len = d + manifest.class_count;
        let values =
            blobio::read_f32_blob(&base.with_extension("bin"), manifest.count * record_len)?;
        let entries = values
            .chunks_exact(record_len)
            .map(|rec| TransferEntry {
                pixels: rec[..d].to_vec(),
                label: SoftLabel::from_probabilities(rec[d..].to_vec()),
            })
            .collect();
        let set = TransferSet {
            shape: manifest.shape,
            class_count: manifest.class_count,
            entries,
            metadata: manifest.metadata,
        };
        set.validate()?;
        Ok(set)
    }
}

/// Assemble a transfer set: one record per sample, aligned by index.
/// Distances are clamped at the config floor before label construction.
pub fn build_transfer_set(
    images: &[f32],
    shape: Shape,
    class_count: usize,
    records: &[RobustnessRecord],
    config: &LabelConfig,
    metadata: TransferMetadata,
) -> Result<TransferSet> {
    config.validate()?;
    let d = shape.len();
    if images.len() != records.len() * d {
        return Err(Error::CountMismatch {
            left: "image values",
            left_count: images.len(),
            right: "records x dims",
            right_count: records.len() * d,
        });
    }
    let temperature = if config.soften_teacher {
        config.temperature
    } else {
        1.0
    };
    let mut entries = Vec::with_capacity(records.len());
    for (i, record) in records.iter().enumerate() {
        if record.class_count() != class_count {
            return Err(Error::CountMismatch {
                left: "record classes",
                left_count: record.class_count(),
                right: "classes",
                right_count: class_count,
            });
        }
        let activations = construct_activations(&record.clamped(config.clamp_floor))?;
        let label = soften(&activations, temperature)?;
        entries.push(TransferEntry {
            pixels: images[i * d..(i + 1) * d].to_vec(),
            label,
        });
    }
    let set = TransferSet {
        shape,
        class_count,
        entries,
        metadata,
    };
    set.validate()?;
    Ok(set)
}
