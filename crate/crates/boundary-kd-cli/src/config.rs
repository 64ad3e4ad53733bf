//! Run configuration: one JSON document binds a command's full parameter
//! set. Unknown keys are rejected everywhere; the resolved document is
//! written next to the outputs of every run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use boundary_kd::data::{SyntheticKind, SyntheticSpec};
use boundary_kd::geometry::RobustnessConfig;
use boundary_kd::labels::LabelConfig;
use boundary_kd::nn::{DistillConfig, OptimizerSpec};
use boundary_kd::shape::Shape;
use boundary_kd::synth::{AugmentationPolicy, GenerationConfig};
use boundary_kd::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// IDX image/label pair, gzip sniffed.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        class_count: Option<usize>,
    },
    /// Gaussian blobs around separated anchors, teacher included.
    Blobs {
        dimensions: Shape,
        class_count: usize,
        per_class: usize,
        dispersion: f64,
        seed: u64,
        /// Disjoint slot ranges split one task (same seed, same anchors).
        #[serde(default)]
        slot_offset: usize,
    },
    /// Near-Voronoi linear regions, teacher included.
    LinearRegions {
        dimensions: Shape,
        class_count: usize,
        per_class: usize,
        dispersion: f64,
        seed: u64,
        #[serde(default)]
        slot_offset: usize,
    },
    /// Procedurally rendered digit glyphs (offline stand-in for MNIST).
    Digits { per_class: usize, seed: u64 },
    /// A dataset previously saved in the internal manifest+blob format.
    Internal { base: PathBuf },
}

impl DatasetSource {
    pub fn synthetic_spec(&self) -> Option<SyntheticSpec> {
        match self {
            DatasetSource::Blobs {
                dimensions,
                class_count,
                per_class,
                dispersion,
                seed,
                slot_offset,
            } => Some(SyntheticSpec {
                kind: SyntheticKind::GaussianBlobs,
                dimensions: *dimensions,
                class_count: *class_count,
                per_class: *per_class,
                dispersion: *dispersion,
                seed: *seed,
                slot_offset: *slot_offset,
            }),
            DatasetSource::LinearRegions {
                dimensions,
                class_count,
                per_class,
                dispersion,
                seed,
                slot_offset,
            } => Some(SyntheticSpec {
                kind: SyntheticKind::LinearRegions,
                dimensions: *dimensions,
                class_count: *class_count,
                per_class: *per_class,
                dispersion: *dispersion,
                seed: *seed,
                slot_offset: *slot_offset,
            }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleSource {
    /// Network checkpoint (`<base>.json` + `<base>.bin`) behind the
    /// hard-label interface.
    Checkpoint { base: PathBuf },
    /// Analytic teacher JSON document.
    Analytic { path: PathBuf },
    /// The analytic teacher generated alongside a synthetic dataset source.
    DatasetTeacher,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherTrainSection {
    pub preset: String,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub optimizer: OptimizerSpec,
    #[serde(default)]
    pub init_seed: u64,
}

fn default_batch() -> usize {
    128
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillMode {
    Db3kd,
    StudentCe,
    StandardKd,
    SurrogateKd,
    NoiseLogits,
}

impl std::fmt::Display for DistillMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            DistillMode::Db3kd => "db3kd",
            DistillMode::StudentCe => "student_ce",
            DistillMode::StandardKd => "standard_kd",
            DistillMode::SurrogateKd => "surrogate_kd",
            DistillMode::NoiseLogits => "noise_logits",
        };
        f.write_str(s)
    }
}

fn default_noise_range() -> [f64; 2] {
    [0.02, 10.0]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillSection {
    pub preset: String,
    pub mode: DistillMode,
    /// Transfer-set base path for `db3kd` mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transfer_base: Option<PathBuf>,
    /// Teacher checkpoint for `standard_kd` mode; the teacher side is
    /// softened at `train.temperature`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher_checkpoint: Option<PathBuf>,
    /// Log-uniform robustness range for the noise-logits baseline.
    #[serde(default = "default_noise_range")]
    pub noise_distance_range: [f64; 2],
    pub train: DistillConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    QueryBudget,
    Iterations,
    SampleCount,
    Temperature,
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SweepAxis::QueryBudget => "query_budget",
            SweepAxis::Iterations => "iterations",
            SweepAxis::SampleCount => "sample_count",
            SweepAxis::Temperature => "temperature",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    /// Global oracle budget for the whole run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetSource>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_dataset: Option<DatasetSource>,
    /// Stratified subset of the dataset, taken before anything else.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subset_per_class: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSource>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub robustness: Option<RobustnessConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<LabelConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub teacher_train: Option<TeacherTrainSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distill: Option<DistillSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generation: Option<GenerationConfig>,
    /// Augmentation applied to generated samples (generate command).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub augmentation: Option<AugmentationPolicy>,
    /// Records CSV consumed by the labels command.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub records_csv: Option<PathBuf>,
    /// Checkpoint consumed by evaluate/whitebox-heatmap.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            workers: None,
            budget: None,
            dataset: None,
            eval_dataset: None,
            subset_per_class: None,
            oracle: None,
            robustness: None,
            labels: None,
            teacher_train: None,
            distill: None,
            generation: None,
            augmentation: None,
            records_csv: None,
            checkpoint: None,
            sweep: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::InvalidConfig(format!("cannot read config {}: {e}", path.display()))
        })?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("bad config {}: {e}", path.display())))?;
        Ok(config)
    }

    pub fn require_dataset(&self) -> Result<&DatasetSource> {
        self.dataset
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("config needs a \"dataset\" section".into()))
    }

    pub fn require_oracle(&self) -> Result<&OracleSource> {
        self.oracle
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("config needs an \"oracle\" section".into()))
    }
}
