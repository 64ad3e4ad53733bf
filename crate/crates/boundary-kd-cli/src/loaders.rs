//! Shared dataset/oracle loading for all commands.

use boundary_kd::data::{generate_synthetic, load_idx, rendered_digits, Dataset};
use boundary_kd::nn::load_checkpoint;
use boundary_kd::oracle::{AnalyticTeacher, DecisionOracle, NetworkOracle};
use boundary_kd::{Error, Result};

use crate::config::{DatasetSource, OracleSource, RunConfig};

pub struct LoadedData {
    pub dataset: Dataset,
    /// Analytic teacher created alongside a synthetic dataset.
    pub teacher: Option<AnalyticTeacher>,
}

pub fn load_dataset(source: &DatasetSource) -> Result<LoadedData> {
    match source {
        DatasetSource::Idx {
            images,
            labels,
            class_count,
        } => {
            let ds = load_idx(images, labels)?;
            let ds = match class_count {
                Some(l) => ds.with_class_count(*l)?,
                None => ds,
            };
            Ok(LoadedData {
                dataset: ds,
                teacher: None,
            })
        }
        DatasetSource::Digits { per_class, seed } => Ok(LoadedData {
            dataset: rendered_digits(*per_class, *seed, "digits"),
            teacher: None,
        }),
        DatasetSource::Internal { base } => Ok(LoadedData {
            dataset: Dataset::load(base)?,
            teacher: None,
        }),
        DatasetSource::Blobs { .. } | DatasetSource::LinearRegions { .. } => {
            let spec = source.synthetic_spec().expect("synthetic variants");
            let task = generate_synthetic(&spec)?;
            Ok(LoadedData {
                dataset: task.dataset,
                teacher: Some(task.teacher),
            })
        }
    }
}

/// Dataset with the configured stratified subset applied.
pub fn load_dataset_subset(config: &RunConfig, source: &DatasetSource) -> Result<LoadedData> {
    let mut loaded = load_dataset(source)?;
    if let Some(per_class) = config.subset_per_class {
        loaded.dataset = loaded.dataset.subset(per_class, config.seed)?;
    }
    Ok(loaded)
}

/// The teacher oracle, with the configured global budget applied.
pub fn load_oracle(
    config: &RunConfig,
    data_teacher: Option<AnalyticTeacher>,
) -> Result<Box<dyn DecisionOracle>> {
    let source = config.require_oracle()?;
    let oracle: Box<dyn DecisionOracle> = match source {
        OracleSource::Checkpoint { base } => {
            let (network, _) = load_checkpoint(base)?;
            Box::new(NetworkOracle::new(network))
        }
        OracleSource::Analytic { path } => Box::new(AnalyticTeacher::load_json(path)?),
        OracleSource::DatasetTeacher => Box::new(data_teacher.ok_or_else(|| {
            Error::InvalidConfig(
                "oracle kind \"dataset_teacher\" needs a synthetic dataset source".into(),
            )
        })?),
    };
    oracle.reset_budget(config.budget);
    Ok(oracle)
}

/// Short human-readable oracle descriptor for transfer-set metadata.
pub fn oracle_descriptor(config: &RunConfig) -> String {
    match &config.oracle {
        Some(OracleSource::Checkpoint { base }) => format!("checkpoint:{}", base.display()),
        Some(OracleSource::Analytic { path }) => format!("analytic:{}", path.display()),
        Some(OracleSource::DatasetTeacher) => "dataset-teacher".into(),
        None => "none".into(),
    }
}
