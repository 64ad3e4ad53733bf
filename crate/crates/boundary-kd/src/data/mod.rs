//! Dataset ingestion, synthetic verification tasks, and persistence.

pub(crate) mod blobio;
mod digits;
mod idx;
mod synthetic;

pub use digits::rendered_digits;
pub use idx::load_idx;
pub use synthetic::{generate_synthetic, SyntheticKind, SyntheticSpec, SyntheticTask};

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ReferenceSet;
use crate::oracle::ClassLabel;
use crate::seed;
use crate::shape::Shape;

/// Labeled image tensors, pixels in `[0, 1]`, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub shape: Shape,
    pub class_count: usize,
    pub split: String,
    images: Vec<f32>,
    labels: Vec<ClassLabel>,
}

impl Dataset {
    pub fn new(
        shape: Shape,
        class_count: usize,
        images: Vec<f32>,
        labels: Vec<ClassLabel>,
        split: impl Into<String>,
    ) -> Result<Self> {
        let d = shape.len();
        if images.len() != labels.len() * d {
            return Err(Error::CountMismatch {
                left: "image values",
                left_count: images.len(),
                right: "labels x dims",
                right_count: labels.len() * d,
            });
        }
        if let Some(bad) = images.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidConfig(format!("pixel {bad} outside [0, 1]")));
        }
        if let Some(l) = labels.iter().find(|l| l.0 >= class_count) {
            return Err(Error::ClassOutOfRange {
                class: l.0,
                count: class_count,
            });
        }
        Ok(Dataset {
            shape,
            class_count,
            split: split.into(),
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let d = self.shape.len();
        &self.images[i * d..(i + 1) * d]
    }

    pub fn label(&self, i: usize) -> ClassLabel {
        self.labels[i]
    }

    pub fn images_flat(&self) -> &[f32] {
        &self.images
    }

    pub fn labels(&self) -> &[ClassLabel] {
        &self.labels
    }

    /// Samples per class, indexed by class.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0usize; self.class_count];
        for l in &self.labels {
            hist[l.0] += 1;
        }
        hist
    }

    /// Reference batches bucketed by the dataset's own labels.
    pub fn reference_set(&self) -> ReferenceSet {
        let mut set = ReferenceSet::new(self.shape, self.class_count);
        for i in 0..self.len() {
            set.add(self.label(i), self.image(i).to_vec())
                .expect("dataset invariants enforce shape and range");
        }
        set
    }

    /// Deterministic stratified subsample: exactly `per_class` from every
    /// class, chosen by `seed`, original order preserved.
    pub fn subset(&self, per_class: usize, seed_value: u64) -> Result<Dataset> {
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); self.class_count];
        for (i, l) in self.labels.iter().enumerate() {
            by_class[l.0].push(i);
        }
        for (class, indices) in by_class.iter().enumerate() {
            if indices.len() < per_class {
                return Err(Error::InsufficientSamples {
                    class,
                    have: indices.len(),
                    want: per_class,
                });
            }
        }
        let mut rng = seed::rng(seed_value, &[0x7375_6273_6574]);
        let mut selected = Vec::with_capacity(per_class * self.class_count);
        for mut indices in by_class {
            // Partial Fisher-Yates: the first per_class entries are a
            // uniform sample without replacement.
            for i in 0..per_class {
                let j = rng.random_range(i..indices.len());
                indices.swap(i, j);
            }
            selected.extend_from_slice(&indices[..per_class]);
        }
        selected.sort_unstable();
        let d = self.shape.len();
        let mut images = Vec::with_capacity(selected.len() * d);
        let mut labels = Vec::with_capacity(selected.len());
        for &i in &selected {
            images.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        Dataset::new(
            self.shape,
            self.class_count,
            images,
            labels,
            self.split.clone(),
        )
    }

    /// Override the class count (e.g. a subset that happens to miss the
    /// largest label).
    pub fn with_class_count(mut self, class_count: usize) -> Result<Self> {
        if let Some(l) = self.labels.iter().find(|l| l.0 >= class_count) {
            return Err(Error::ClassOutOfRange {
                class: l.0,
                count: class_count,
            });
        }
        self.class_count = class_count;
        Ok(self)
    }

    /// Write `<base>.json` + `<base>.bin` in the shared manifest/blob layout
    /// (each record: pixels then the label as one f32).
    pub fn save(&self, base: &Path) -> Result<(PathBuf, PathBuf)> {
        let manifest = DatasetManifest {
            shape: self.shape,
            class_count: self.class_count,
            count: self.len(),
            dtype: "f32-le".into(),
            metadata: DatasetMetadata {
                split: self.split.clone(),
            },
        };
        let json_path = base.with_extension("json");
        let bin_path = base.with_extension("bin");
        blobio::write_manifest(&json_path, &manifest)?;
        let d = self.shape.len();
        let mut values = Vec::with_capacity(self.len() * (d + 1));
        for i in 0..self.len() {
            values.extend_from_slice(self.image(i));
            values.push(self.labels[i].0 as f32);
        }
        blobio::write_f32_blob(&bin_path, &values)?;
        Ok((json_path, bin_path))
    }

    pub fn load(base: &Path) -> Result<Dataset> {
        let manifest: DatasetManifest = blobio::read_manifest(&base.with_extension("json"))?;
        if manifest.dtype != "f32-le" {
            return Err(Error::InvalidConfig(format!(
                "unsupported dataset dtype {:?}",
                manifest.dtype
            )));
        }
        let d = manifest.shape.len();
        let values = blobio::read_f32_blob(&base.with_extension("bin"), manifest.count * (d + 1))?;
        let mut images = Vec::with_capacity(manifest.count * d);
        let mut labels = Vec::with_capacity(manifest.count);
        for rec in values.chunks_exact(d + 1) {
            images.extend_from_slice(&rec[..d]);
            labels.push(ClassLabel(rec[d] as usize));
        }
        Dataset::new(
            manifest.shape,
            manifest.class_count,
            images,
            labels,
            manifest.metadata.split,
        )
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetManifest {
    shape: Shape,
    #[serde(rename = "L")]
    class_count: usize,
    count: usize,
    dtype: String,
    metadata: DatasetMetadata,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetMetadata {
    split: String,
}
