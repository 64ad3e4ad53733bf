//! One function per subcommand, plus the composite pipeline pieces the sweep
//! command re-runs per grid cell.

use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::Serialize;

use boundary_kd::data::Dataset;
use boundary_kd::geometry::{
    mean_distance_matrix, normalize_matrix, read_records_csv, robustness_records,
    write_records_csv, ReferenceSet, RobustnessConfig, RobustnessRecord,
};
use boundary_kd::labels::{
    build_transfer_set, LabelConfig, SoftLabel, TransferMetadata, TransferSet, TransferSource,
};
use boundary_kd::nn::{
    evaluate, load_checkpoint, save_checkpoint, softmax_rows, train_classifier, train_student,
    DistillConfig, EpochMetrics, Evaluation, Network, NetworkSpec,
};
use boundary_kd::oracle::{ClassLabel, DecisionOracle};
use boundary_kd::synth::{generate_pseudo_set, recover_label, PseudoSample};
use boundary_kd::{seed, Error, Result, Shape};

use crate::config::{DistillMode, RunConfig, SweepAxis};
use crate::loaders::{load_dataset, load_dataset_subset, load_oracle, oracle_descriptor};
use crate::runio::{matrix_header, matrix_rows, progress, RunDir};

fn metrics_rows(metrics: &[EpochMetrics]) -> Vec<String> {
    metrics
        .iter()
        .map(|m| format!("{},{},{}", m.epoch, m.loss, m.accuracy))
        .collect()
}

fn evaluate_into(
    run: &RunDir,
    name: &str,
    network: &Network<f32>,
    dataset: &Dataset,
) -> Result<Evaluation> {
    let eval = evaluate(network, dataset.images_flat(), dataset.labels())?;
    run.write_json(name, &eval)?;
    Ok(eval)
}

// ---------------------------------------------------------------------------
// train-teacher
// ---------------------------------------------------------------------------

pub fn cmd_train_teacher(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let section = config
        .teacher_train
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("config needs a \"teacher_train\" section".into()))?;
    let run = RunDir::create(out_dir, config)?;
    let data = load_dataset_subset(config, config.require_dataset()?)?;
    let spec = NetworkSpec::preset(
        &section.preset,
        data.dataset.shape,
        data.dataset.class_count,
    )?;
    let mut network = Network::<f32>::init(spec, section.init_seed)?;
    let train_cfg = DistillConfig {
        lambda: 0.0,
        epochs: section.epochs,
        batch_size: section.batch_size,
        optimizer: section.optimizer,
        seed: config.seed,
        ..DistillConfig::default()
    };
    progress("train-teacher", 0, section.epochs, 0);
    let metrics = train_classifier(
        &mut network,
        data.dataset.images_flat(),
        data.dataset.labels(),
        &train_cfg,
    )?;
    progress("train-teacher", section.epochs, section.epochs, 0);
    run.write_csv("metrics.csv", "epoch,loss,accuracy", metrics_rows(&metrics))?;
    save_checkpoint(&network, section.epochs, &run.path("teacher"))?;
    if let Some(source) = &config.eval_dataset {
        let eval_data = load_dataset(source)?;
        evaluate_into(&run, "eval.json", &network, &eval_data.dataset)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// robustness
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct RobustnessSummary {
    samples: usize,
    completed: usize,
    budget_exhausted: usize,
    queries_total: u64,
}

/// Records for every sample of `dataset`, references relabeled by the oracle.
/// Per-sample budget exhaustion is collected, not fatal.
fn robustness_stage(
    oracle: &dyn DecisionOracle,
    dataset: &Dataset,
    rcfg: &RobustnessConfig,
    global_seed: u64,
) -> Result<(Vec<RobustnessRecord>, RobustnessSummary)> {
    let refs =
        ReferenceSet::from_oracle_labels(oracle, (0..dataset.len()).map(|i| dataset.image(i)))?;
    progress("robustness", 0, dataset.len(), oracle.query_count());
    let results = robustness_records(
        oracle,
        dataset.images_flat(),
        dataset.labels(),
        &refs,
        rcfg,
        global_seed,
    );
    let mut records = Vec::with_capacity(results.len());
    let mut budget_exhausted = 0usize;
    for r in results {
        match r {
            Ok(record) => records.push(record),
            Err(e) if e.is_budget() => budget_exhausted += 1,
            Err(e) => return Err(e),
        }
    }
    progress(
        "robustness",
        dataset.len(),
        dataset.len(),
        oracle.query_count(),
    );
    let summary = RobustnessSummary {
        samples: dataset.len(),
        completed: records.len(),
        budget_exhausted,
        queries_total: records.iter().map(|r| r.queries_spent).sum(),
    };
    Ok((records, summary))
}

pub fn cmd_robustness(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let run = RunDir::create(out_dir, config)?;
    let data = load_dataset_subset(config, config.require_dataset()?)?;
    let oracle = load_oracle(config, data.teacher)?;
    let rcfg = config.robustness.unwrap_or_default();
    let (records, summary) = robustness_stage(oracle.as_ref(), &data.dataset, &rcfg, config.seed)?;
    if records.is_empty() {
        return Err(Error::BudgetExhausted {
            budget: config.budget.unwrap_or(0),
            spent: oracle.query_count(),
        });
    }

    let mut csv = Vec::new();
    write_records_csv(&mut csv, &records, data.dataset.class_count)?;
    let text = String::from_utf8(csv).expect("csv is utf-8");
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default().to_string();
    run.write_csv(
        "records.csv",
        &header,
        lines.map(|l| l.to_string()).collect::<Vec<_>>(),
    )?;

    let mut matrix = mean_distance_matrix(&records, data.dataset.class_count);
    normalize_matrix(&mut matrix);
    run.write_csv(
        "heatmap.csv",
        &matrix_header(data.dataset.class_count),
        matrix_rows(&matrix),
    )?;
    run.write_json("summary.json", &summary)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// labels
// ---------------------------------------------------------------------------

fn label_metadata(
    config: &RunConfig,
    source: TransferSource,
    label_cfg: &LabelConfig,
) -> TransferMetadata {
    let mut params = serde_json::Map::new();
    if let Some(p) = config.subset_per_class {
        params.insert("subset_per_class".into(), p.into());
    }
    TransferMetadata {
        source,
        strategy: config.robustness.map(|r| r.strategy),
        temperature: label_cfg.temperature,
        seed: config.seed,
        oracle: oracle_descriptor(config),
        params,
    }
}

pub fn cmd_labels(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let run = RunDir::create(out_dir, config)?;
    let data = load_dataset_subset(config, config.require_dataset()?)?;
    let records_path = config
        .records_csv
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("config needs \"records_csv\"".into()))?;
    let file = std::fs::File::open(records_path)?;
    let records = read_records_csv(std::io::BufReader::new(file))?;
    let label_cfg = config.labels.unwrap_or_default();

    // Align by sample index into the (subset) dataset; records may have gaps.
    let d = data.dataset.shape.len();
    let mut images = Vec::with_capacity(records.len() * d);
    for r in &records {
        if r.sample_index >= data.dataset.len() {
            return Err(Error::InvalidConfig(format!(
                "record index {} outside the dataset ({} samples); labels must run on the same dataset/subset as robustness",
                r.sample_index,
                data.dataset.len()
            )));
        }
        images.extend_from_slice(data.dataset.image(r.sample_index));
    }
    let set = build_transfer_set(
        &images,
        data.dataset.shape,
        data.dataset.class_count,
        &records,
        &label_cfg,
        label_metadata(config, TransferSource::Real, &label_cfg),
    )?;
    set.save(&run.path("transfer"))?;
    progress("labels", set.entries.len(), set.entries.len(), 0);
    Ok(())
}

// ---------------------------------------------------------------------------
// distill
// ---------------------------------------------------------------------------

/// Soft labels from a white-box network's logits at `temperature`; hard
/// labels stay the dataset's.
fn logits_transfer_set(
    network: &Network<f32>,
    dataset: &Dataset,
    temperature: f64,
    metadata: TransferMetadata,
) -> Result<TransferSet> {
    let d = dataset.shape.len();
    let n = dataset.len();
    let l = dataset.class_count;
    let mut soft_rows = Vec::with_capacity(n * l);
    for start in (0..n).step_by(256) {
        let b = 256.min(n - start);
        let acts = network.forward_eval(&dataset.images_flat()[start * d..(start + b) * d], b)?;
        let scaled = acts.mapv(|v| v / temperature as f32);
        soft_rows.extend(softmax_rows(&scaled).iter().copied());
    }
    let soft = Array2::from_shape_vec((n, l), soft_rows).expect("length matches");
    let entries = (0..n)
        .map(|i| boundary_kd::labels::TransferEntry {
            pixels: dataset.image(i).to_vec(),
            label: SoftLabel {
                probabilities: soft.row(i).to_vec(),
                top1: dataset.label(i),
            },
        })
        .collect();
    let set = TransferSet {
        shape: dataset.shape,
        class_count: l,
        entries,
        metadata,
    };
    set.validate()?;
    Ok(set)
}

/// Labels built from uniformly random robustness (the noise-logits baseline).
fn noise_transfer_set(
    dataset: &Dataset,
    range: [f64; 2],
    label_cfg: &LabelConfig,
    global_seed: u64,
    metadata: TransferMetadata,
) -> Result<TransferSet> {
    if !(range[0] > 0.0 && range[1] > range[0]) {
        return Err(Error::InvalidConfig(
            "noise_distance_range must be positive and increasing".into(),
        ));
    }
    let mut rng = seed::rng(global_seed, &[0x6e6f_6973_65]);
    let (lo, hi) = (range[0].ln(), range[1].ln());
    let records: Vec<RobustnessRecord> = (0..dataset.len())
        .map(|i| {
            let own = dataset.label(i);
            let distances = (0..dataset.class_count)
                .map(|c| {
                    if c == own.0 {
                        None
                    } else {
                        let u: f64 = rng.random();
                        Some((lo + u * (hi - lo)).exp())
                    }
                })
                .collect();
            RobustnessRecord {
                sample_index: i,
                own_class: own,
                distances,
                queries_spent: 0,
            }
        })
        .collect();
    build_transfer_set(
        dataset.images_flat(),
        dataset.shape,
        dataset.class_count,
        &records,
        label_cfg,
        metadata,
    )
}

pub struct DistillOutcome {
    pub metrics: Vec<EpochMetrics>,
    pub network: Network<f32>,
    pub evaluation: Option<Evaluation>,
}

/// The distill stage without any file IO, reused by the sweep cells.
pub fn distill_stage(
    config: &RunConfig,
    dataset: &Dataset,
    transfer_override: Option<&TransferSet>,
) -> Result<DistillOutcome> {
    let section = config
        .distill
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("config needs a \"distill\" section".into()))?;
    let spec = NetworkSpec::preset(&section.preset, dataset.shape, dataset.class_count)?;
    let mut student = Network::<f32>::init(spec.clone(), section.train.seed)?;
    let label_cfg = config.labels.unwrap_or_default();

    let metrics = match section.mode {
        DistillMode::StudentCe => train_classifier(
            &mut student,
            dataset.images_flat(),
            dataset.labels(),
            &section.train,
        )?,
        DistillMode::Db3kd => {
            let set = match transfer_override {
                Some(set) => set.clone(),
                None => {
                    let base = section.transfer_base.as_ref().ok_or_else(|| {
                        Error::InvalidConfig("db3kd mode needs \"transfer_base\"".into())
                    })?;
                    TransferSet::load(base)?
                }
            };
            train_student(&mut student, &set, &section.train)?
        }
        DistillMode::StandardKd | DistillMode::SurrogateKd => {
            let teacher_net = match section.mode {
                DistillMode::StandardKd => {
                    let base = section.teacher_checkpoint.as_ref().ok_or_else(|| {
                        Error::InvalidConfig("standard_kd mode needs \"teacher_checkpoint\"".into())
                    })?;
                    load_checkpoint(base)?.0
                }
                _ => {
                    // Surrogate: a white-box stand-in with the student's own
                    // architecture, trained on the same data with plain CE.
                    let mut surrogate = Network::<f32>::init(
                        spec.clone(),
                        seed::derive(section.train.seed, &[0x7375_7272]),
                    )?;
                    let surrogate_cfg = DistillConfig {
                        lambda: 0.0,
                        seed: seed::derive(section.train.seed, &[0x7375_7272, 1]),
                        ..section.train.clone()
                    };
                    train_classifier(
                        &mut surrogate,
                        dataset.images_flat(),
                        dataset.labels(),
                        &surrogate_cfg,
                    )?;
                    surrogate
                }
            };
            let set = logits_transfer_set(
                &teacher_net,
                dataset,
                section.train.temperature,
                label_metadata(config, TransferSource::Real, &label_cfg),
            )?;
            train_student(&mut student, &set, &section.train)?
        }
        DistillMode::NoiseLogits => {
            let mut cfg = label_cfg;
            cfg.temperature = section.train.temperature;
            let set = noise_transfer_set(
                dataset,
                section.noise_distance_range,
                &cfg,
                config.seed,
                label_metadata(config, TransferSource::Real, &cfg),
            )?;
            train_student(&mut student, &set, &section.train)?
        }
    };

    let evaluation = match &config.eval_dataset {
        Some(source) => {
            let eval_data = load_dataset(source)?;
            Some(evaluate(
                &student,
                eval_data.dataset.images_flat(),
                eval_data.dataset.labels(),
            )?)
        }
        None => None,
    };
    Ok(DistillOutcome {
        metrics,
        network: student,
        evaluation,
    })
}

pub fn cmd_distill(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let run = RunDir::create(out_dir, config)?;
    let data = load_dataset_subset(config, config.require_dataset()?)?;
    let section = config.distill.as_ref().expect("checked in distill_stage");
    progress("distill", 0, section.train.epochs, 0);
    let outcome = distill_stage(config, &data.dataset, None)?;
    progress("distill", section.train.epochs, section.train.epochs, 0);
    run.write_csv(
        "metrics.csv",
        "epoch,loss,accuracy",
        metrics_rows(&outcome.metrics),
    )?;
    save_checkpoint(&outcome.network, section.train.epochs, &run.path("student"))?;
    if let Some(eval) = &outcome.evaluation {
        run.write_json("eval.json", eval)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct GenerateSummary {
    generated: usize,
    augmented: usize,
    augmented_dropped: usize,
}

pub fn cmd_generate(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let run = RunDir::create(out_dir, config)?;
    let gen_cfg = config
        .generation
        .clone()
        .ok_or_else(|| Error::InvalidConfig("config needs a \"generation\" section".into()))?;
    let data_teacher = match &config.dataset {
        Some(source) => load_dataset(source)?.teacher,
        None => None,
    };
    let oracle = load_oracle(config, data_teacher)?;
    progress(
        "generate",
        0,
        gen_cfg.per_class_quota * oracle.class_count(),
        0,
    );
    let (samples, report) = generate_pseudo_set(oracle.as_ref(), &gen_cfg)?;
    progress(
        "generate",
        samples.len(),
        gen_cfg.per_class_quota * oracle.class_count(),
        oracle.query_count(),
    );

    let mut all: Vec<(Vec<f32>, ClassLabel)> = samples
        .iter()
        .map(|s| (s.tensor.clone(), s.teacher_class))
        .collect();
    let mut augmented = 0usize;
    let mut dropped = 0usize;
    if let Some(policy) = &config.augmentation {
        let tensors: Vec<Vec<f32>> = samples.iter().map(|s| s.tensor.clone()).collect();
        let variants = boundary_kd::synth::augment(&tensors, oracle.input_shape(), policy)?;
        let epsilon = gen_cfg.robustness.binary_search_epsilon;
        for variant in variants {
            let parent = &samples[variant.parent_index];
            match recover_label(
                oracle.as_ref(),
                &variant.tensor,
                &parent.tensor,
                parent.teacher_class,
                epsilon,
            )? {
                Some(tensor) => {
                    all.push((tensor, parent.teacher_class));
                    augmented += 1;
                }
                None => dropped += 1,
            }
        }
    }

    // Transfer-set binary with placeholder uniform probabilities; real soft
    // labels come from the robustness + labels pipeline over this file.
    let l = oracle.class_count();
    let uniform = vec![1.0f32 / l as f32; l];
    let entries = all
        .iter()
        .map(|(tensor, _)| boundary_kd::labels::TransferEntry {
            pixels: tensor.clone(),
            label: SoftLabel::from_probabilities(uniform.clone()),
        })
        .collect();
    let label_cfg = config.labels.unwrap_or_default();
    let mut metadata = label_metadata(config, TransferSource::Pseudo, &label_cfg);
    metadata
        .params
        .insert("labels".into(), "placeholder-uniform".into());
    let set = TransferSet {
        shape: oracle.input_shape(),
        class_count: l,
        entries,
        metadata,
    };
    set.save(&run.path("pseudo"))?;

    // The dataset form keeps the teacher classes for direct re-labeling.
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (tensor, class) in &all {
        images.extend_from_slice(tensor);
        labels.push(*class);
    }
    Dataset::new(oracle.input_shape(), l, images, labels, "pseudo")?
        .save(&run.path("pseudo_dataset"))?;

    run.write_json("report.json", &report)?;
    run.write_json(
        "summary.json",
        &GenerateSummary {
            generated: samples.len(),
            augmented,
            augmented_dropped: dropped,
        },
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

pub fn cmd_evaluate(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let run = RunDir::create(out_dir, config)?;
    let base = config
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("config needs \"checkpoint\"".into()))?;
    let (network, _) = load_checkpoint(base)?;
    let data = load_dataset_subset(config, config.require_dataset()?)?;
    let eval = evaluate_into(&run, "eval.json", &network, &data.dataset)?;
    let rows = eval
        .confusion
        .iter()
        .enumerate()
        .map(|(m, row)| {
            let mut s = m.to_string();
            for v in row {
                s.push(',');
                s.push_str(&v.to_string());
            }
            s
        })
        .collect::<Vec<_>>();
    run.write_csv(
        "confusion.csv",
        &matrix_header(data.dataset.class_count),
        rows,
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// whitebox-heatmap
// ---------------------------------------------------------------------------

/// `1 - softmax probability` means per (true class, class) pair, normalized;
/// the white-box counterpart of the robustness heatmap.
pub fn whitebox_heatmap(network: &Network<f32>, dataset: &Dataset) -> Result<Vec<Vec<f64>>> {
    let l = dataset.class_count;
    let d = dataset.shape.len();
    let n = dataset.len();
    let mut sums = vec![vec![0.0f64; l]; l];
    let mut counts = vec![0u64; l];
    for start in (0..n).step_by(256) {
        let b = 256.min(n - start);
        let acts = network.forward_eval(&dataset.images_flat()[start * d..(start + b) * d], b)?;
        let probs = softmax_rows(&acts);
        for (row, idx) in probs.rows().into_iter().zip(start..start + b) {
            let m = dataset.label(idx).0;
            counts[m] += 1;
            for (c, &p) in row.iter().enumerate() {
                sums[m][c] += 1.0 - p as f64;
            }
        }
    }
    let mut matrix: Vec<Vec<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(row, &c)| {
            row.iter()
                .map(|&s| if c == 0 { f64::NAN } else { s / c as f64 })
                .collect()
        })
        .collect();
    normalize_matrix(&mut matrix);
    Ok(matrix)
}

pub fn cmd_whitebox_heatmap(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let run = RunDir::create(out_dir, config)?;
    let base = config
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("config needs \"checkpoint\"".into()))?;
    let (network, _) = load_checkpoint(base)?;
    let data = load_dataset_subset(config, config.require_dataset()?)?;
    let matrix = whitebox_heatmap(&network, &data.dataset)?;
    run.write_csv(
        "whitebox_heatmap.csv",
        &matrix_header(data.dataset.class_count),
        matrix_rows(&matrix),
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct SweepRow {
    value: f64,
    accuracy: f64,
    queries_total: u64,
}

fn apply_axis(config: &mut RunConfig, axis: SweepAxis, value: f64) -> Result<()> {
    match axis {
        SweepAxis::QueryBudget => {
            let r = config.robustness.as_mut().ok_or_else(|| {
                Error::InvalidConfig("query_budget sweep needs \"robustness\"".into())
            })?;
            r.query_limit_per_direction = value as u64;
        }
        SweepAxis::Temperature => {
            let l = config.labels.get_or_insert_with(LabelConfig::default);
            l.temperature = value;
            if let Some(d) = config.distill.as_mut() {
                d.train.temperature = value;
            }
        }
        SweepAxis::Iterations => {
            let g = config.generation.as_mut().ok_or_else(|| {
                Error::InvalidConfig("iterations sweep needs \"generation\"".into())
            })?;
            g.outer_iterations = value as usize;
        }
        SweepAxis::SampleCount => {
            let g = config.generation.as_mut().ok_or_else(|| {
                Error::InvalidConfig("sample_count sweep needs \"generation\"".into())
            })?;
            g.per_class_quota = value as usize;
        }
    }
    Ok(())
}

/// One real-data cell: robustness -> labels -> distill -> evaluate.
fn real_data_cell(config: &RunConfig, cell_dir: &Path) -> Result<SweepRow> {
    let run = RunDir::create(cell_dir, config)?;
    let data = load_dataset_subset(config, config.require_dataset()?)?;
    let oracle = load_oracle(config, data.teacher)?;
    let rcfg = config.robustness.unwrap_or_default();
    let (records, summary) = robustness_stage(oracle.as_ref(), &data.dataset, &rcfg, config.seed)?;
    let label_cfg = config.labels.unwrap_or_default();
    let set = build_transfer_set(
        data.dataset.images_flat(),
        data.dataset.shape,
        data.dataset.class_count,
        &records,
        &label_cfg,
        label_metadata(config, TransferSource::Real, &label_cfg),
    )?;
    let outcome = distill_stage(config, &data.dataset, Some(&set))?;
    let accuracy = outcome
        .evaluation
        .as_ref()
        .map(|e| e.accuracy)
        .ok_or_else(|| Error::InvalidConfig("sweep needs \"eval_dataset\"".into()))?;
    let row = SweepRow {
        value: 0.0,
        accuracy,
        queries_total: summary.queries_total,
    };
    run.write_json("eval.json", outcome.evaluation.as_ref().unwrap())?;
    Ok(row)
}

/// One zero-shot cell: generate -> robustness over pseudo samples -> labels
/// -> distill -> evaluate.
fn pseudo_cell(config: &RunConfig, cell_dir: &Path) -> Result<SweepRow> {
    let run = RunDir::create(cell_dir, config)?;
    let gen_cfg = config
        .generation
        .clone()
        .ok_or_else(|| Error::InvalidConfig("config needs a \"generation\" section".into()))?;
    let data_teacher = match &config.dataset {
        Some(source) => load_dataset(source)?.teacher,
        None => None,
    };
    let oracle = load_oracle(config, data_teacher)?;
    let (samples, report) = generate_pseudo_set(oracle.as_ref(), &gen_cfg)?;
    let pseudo = pseudo_dataset(&samples, oracle.input_shape(), oracle.class_count())?;
    let rcfg = config.robustness.unwrap_or_default();
    let (records, _) = robustness_stage(oracle.as_ref(), &pseudo, &rcfg, config.seed)?;
    let label_cfg = config.labels.unwrap_or_default();
    let set = build_transfer_set(
        pseudo.images_flat(),
        pseudo.shape,
        pseudo.class_count,
        &records,
        &label_cfg,
        label_metadata(config, TransferSource::Pseudo, &label_cfg),
    )?;
    let outcome = distill_stage(config, &pseudo, Some(&set))?;
    let accuracy = outcome
        .evaluation
        .as_ref()
        .map(|e| e.accuracy)
        .ok_or_else(|| Error::InvalidConfig("sweep needs \"eval_dataset\"".into()))?;
    run.write_json("eval.json", outcome.evaluation.as_ref().unwrap())?;
    Ok(SweepRow {
        value: 0.0,
        accuracy,
        queries_total: report.queries_total,
    })
}

fn pseudo_dataset(samples: &[PseudoSample], shape: Shape, class_count: usize) -> Result<Dataset> {
    let mut images = Vec::with_capacity(samples.len() * shape.len());
    let mut labels = Vec::with_capacity(samples.len());
    for s in samples {
        images.extend_from_slice(&s.tensor);
        labels.push(s.teacher_class);
    }
    Dataset::new(shape, class_count, images, labels, "pseudo")
}

pub fn cmd_sweep(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let sweep = config
        .sweep
        .clone()
        .ok_or_else(|| Error::InvalidConfig("config needs a \"sweep\" section".into()))?;
    let run = RunDir::create(out_dir, config)?;
    let mut rows = Vec::new();
    for (i, &value) in sweep.values.iter().enumerate() {
        let mut cell_config = config.clone();
        cell_config.sweep = None;
        apply_axis(&mut cell_config, sweep.axis, value)?;
        let cell_dir = run.path(&format!("cell_{}_{}", sweep.axis, value));
        let resolved = serde_json::to_string_pretty(&cell_config)?;

        // Resume: a completed, identically-configured cell is skipped; a
        // conflicting one is an error.
        let marker = cell_dir.join("eval.json");
        let existing_config = cell_dir.join("resolved_config.json");
        if marker.exists() {
            let existing = std::fs::read_to_string(&existing_config).unwrap_or_default();
            if existing == resolved {
                progress("sweep", i + 1, sweep.values.len(), 0);
                let eval: serde_json::Value =
                    serde_json::from_reader(std::fs::File::open(&marker)?)?;
                let accuracy = eval["accuracy"].as_f64().unwrap_or(f64::NAN);
                rows.push(SweepRow {
                    value,
                    accuracy,
                    queries_total: 0,
                });
                continue;
            }
            return Err(Error::InvalidConfig(format!(
                "sweep cell {} exists with a different resolved config; \
                 remove it or change --out-dir",
                cell_dir.display()
            )));
        }

        let mut row = match sweep.axis {
            SweepAxis::QueryBudget | SweepAxis::Temperature => {
                real_data_cell(&cell_config, &cell_dir)?
            }
            SweepAxis::Iterations | SweepAxis::SampleCount => pseudo_cell(&cell_config, &cell_dir)?,
        };
        row.value = value;
        progress("sweep", i + 1, sweep.values.len(), row.queries_total);
        rows.push(row);
    }
    run.write_csv(
        "sweep.csv",
        &format!("{},accuracy,queries", sweep.axis),
        rows.iter()
            .map(|r| format!("{},{},{}", r.value, r.accuracy, r.queries_total)),
    )?;
    Ok(())
}
