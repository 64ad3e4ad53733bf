//! Student training against a transfer set, plain classifier training, and
//! evaluation.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::{kd_loss, KdLossConfig, SoftLossKind};
use super::optim::{Optimizer, OptimizerSpec};
use super::{Element, Network};
use crate::error::{Error, Result};
use crate::labels::TransferSet;
use crate::oracle::{argmax_lowest, ClassLabel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    /// Softmax temperature applied to the student side; the teacher side of a
    /// transfer set is stored already softened.
    pub temperature: f64,
    /// Weight of the soft term relative to the hard cross-entropy.
    pub lambda: f64,
    pub optimizer: OptimizerSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub soft_loss: SoftLossKind,
    pub tau_squared: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            temperature: 0.3,
            lambda: 1.0,
            optimizer: OptimizerSpec::adam(5e-3),
            epochs: 50,
            batch_size: 128,
            seed: 0,
            soft_loss: SoftLossKind::Kl,
            tau_squared: true,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperature <= 0.0 {
            return Err(Error::InvalidConfig("temperature must be positive".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::InvalidConfig("lambda must be non-negative".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "epochs and batch_size must be at least 1".into(),
            ));
        }
        self.optimizer.validate()
    }

    fn loss_config(&self) -> KdLossConfig {
        KdLossConfig {
            temperature: self.temperature,
            lambda: self.lambda,
            kind: self.soft_loss,
            tau_squared: self.tau_squared,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Train `network` on a transfer set with the KD objective; hard label is
/// each entry's top-1 class.
pub fn train_student(
    network: &mut Network<f32>,
    transfer: &TransferSet,
    config: &DistillConfig,
) -> Result<Vec<EpochMetrics>> {
    config.validate()?;
    if transfer.entries.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if transfer.shape != network.spec().input_shape {
        return Err(Error::ShapeMismatch {
            got: transfer.shape.len(),
            expected: network.spec().input_shape.len(),
            shape: network.spec().input_shape,
        });
    }
    if transfer.class_count != network.spec().class_count {
        return Err(Error::CountMismatch {
            left: "transfer classes",
            left_count: transfer.class_count,
            right: "network classes",
            right_count: network.spec().class_count,
        });
    }
    let d = transfer.shape.len();
    let l = transfer.class_count;
    let n = transfer.entries.len();
    let mut images = Vec::with_capacity(n * d);
    let mut teacher = Vec::with_capacity(n * l);
    let mut hard = Vec::with_capacity(n);
    for entry in &transfer.entries {
        images.extend_from_slice(&entry.pixels);
        teacher.extend_from_slice(&entry.label.probabilities);
        hard.push(entry.label.top1);
    }
    let teacher = Array2::from_shape_vec((n, l), teacher).expect("length checked");
    train_loop(network, &images, &hard, Some(&teacher), config)
}

/// Plain cross-entropy training on hard labels (teacher pre-training and the
/// student-CE baseline).
pub fn train_classifier(
    network: &mut Network<f32>,
    images: &[f32],
    labels: &[ClassLabel],
    config: &DistillConfig,
) -> Result<Vec<EpochMetrics>> {
    config.validate()?;
    train_loop(network, images, labels, None, config)
}

fn train_loop(
    network: &mut Network<f32>,
    images: &[f32],
    hard: &[ClassLabel],
    teacher: Option<&Array2<f32>>,
    config: &DistillConfig,
) -> Result<Vec<EpochMetrics>> {
    let d = network.spec().input_shape.len();
    let l = network.spec().class_count;
    let n = hard.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if images.len() != n * d {
        return Err(Error::ShapeMismatch {
            got: images.len(),
            expected: n * d,
            shape: network.spec().input_shape,
        });
    }
    let loss_cfg = config.loss_config();
    let mut optimizer = Optimizer::<f32>::new(config.optimizer, network.parameter_count())?;
    let mut rng = crate::seed::rng(config.seed, &[0x7368_7566_666c_65]);
    let mut order: Vec<usize> = (0..n).collect();
    let mut metrics = Vec::with_capacity(config.epochs);

    let mut batch_images = Vec::with_capacity(config.batch_size * d);
    let mut batch_teacher = Vec::with_capacity(config.batch_size * l);
    let mut batch_hard = Vec::with_capacity(config.batch_size);

    for epoch in 0..config.epochs {
        // Fisher-Yates, driven by the seeded stream only.
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for chunk in order.chunks(config.batch_size) {
            batch_images.clear();
            batch_teacher.clear();
            batch_hard.clear();
            for &idx in chunk {
                batch_images.extend_from_slice(&images[idx * d..(idx + 1) * d]);
                batch_hard.push(hard[idx]);
                if let Some(t) = teacher {
                    batch_teacher.extend(t.row(idx).iter().copied());
                }
            }
            let b = chunk.len();
            let teacher_batch = teacher.map(|_| {
                Array2::from_shape_vec((b, l), batch_teacher.clone()).expect("length matches")
            });
            network.zero_grads();
            let acts = network.forward_train(&batch_images, b)?;
            for (row, &y) in acts.rows().into_iter().zip(&batch_hard) {
                let scores: Vec<f64> = row.iter().map(|&v| v as f64).collect();
                if argmax_lowest(&scores) == y.0 {
                    correct += 1;
                }
            }
            let (loss, grad) = kd_loss(&acts, teacher_batch.as_ref(), &batch_hard, &loss_cfg)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            loss_sum += loss * b as f64;
            network.backward(grad)?;
            let mut params = network.params_flat();
            let grads = network.grads_flat();
            optimizer.step(&mut params, &grads);
            network.set_params_flat(&params)?;
        }
        metrics.push(EpochMetrics {
            epoch,
            loss: loss_sum / n as f64,
            accuracy: correct as f64 / n as f64,
        });
    }
    Ok(metrics)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Per true class; NaN for classes absent from the dataset.
    pub per_class_accuracy: Vec<f64>,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<u64>>,
    pub count: usize,
}

/// Top-1 accuracy, per-class accuracy and confusion matrix.
pub fn evaluate<F: Element>(
    network: &Network<F>,
    images: &[F],
    labels: &[ClassLabel],
) -> Result<Evaluation> {
    let d = network.spec().input_shape.len();
    let l = network.spec().class_count;
    let n = labels.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if images.len() != n * d {
        return Err(Error::ShapeMismatch {
            got: images.len(),
            expected: n * d,
            shape: network.spec().input_shape,
        });
    }
    let mut confusion = vec![vec![0u64; l]; l];
    let chunk_size = 256usize;
    for (chunk_idx, label_chunk) in labels.chunks(chunk_size).enumerate() {
        let start = chunk_idx * chunk_size;
        let b = label_chunk.len();
        let acts = network.forward_eval(&images[start * d..(start + b) * d], b)?;
        for (row, &y) in acts.rows().into_iter().zip(label_chunk) {
            if y.0 >= l {
                return Err(Error::ClassOutOfRange {
                    class: y.0,
                    count: l,
                });
            }
            let scores: Vec<f64> = row.iter().map(|&v| v.to_f64()).collect();
            confusion[y.0][argmax_lowest(&scores)] += 1;
        }
    }
    let mut correct = 0u64;
    let mut per_class = Vec::with_capacity(l);
    for (t, row) in confusion.iter().enumerate() {
        let total: u64 = row.iter().sum();
        correct += row[t];
        per_class.push(if total == 0 {
            f64::NAN
        } else {
            row[t] as f64 / total as f64
        });
    }
    Ok(Evaluation {
        accuracy: correct as f64 / n as f64,
        per_class_accuracy: per_class,
        confusion,
        count: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NetworkSpec;
    use crate::shape::Shape;

    fn separable_task() -> (Vec<f32>, Vec<ClassLabel>) {
        // Two clusters along the first coordinate.
        let mut images = Vec::new();
        let mut labels = Vec::new();
        let mut rng = crate::seed::rng(3, &[99]);
        for i in 0..120 {
            let class = i % 2;
            let base = if class == 0 { 0.2f32 } else { 0.8 };
            images.push(base + 0.05 * (rng.random::<f32>() - 0.5));
            images.push(rng.random::<f32>());
            labels.push(ClassLabel(class));
        }
        (images, labels)
    }

    fn mlp(seed: u64) -> Network<f32> {
        let spec = NetworkSpec::preset("mlp-tiny", Shape::new(1, 2, 1), 2).unwrap();
        Network::init(spec, seed).unwrap()
    }

    #[test]
    fn linearly_separable_reaches_full_train_accuracy() {
        let (images, labels) = separable_task();
        let mut net = mlp(7);
        let cfg = DistillConfig {
            epochs: 50,
            batch_size: 16,
            optimizer: OptimizerSpec::adam(0.01),
            ..DistillConfig::default()
        };
        let metrics = train_classifier(&mut net, &images, &labels, &cfg).unwrap();
        let last = metrics.last().unwrap();
        assert_eq!(last.accuracy, 1.0, "metrics: {last:?}");
    }

    #[test]
    fn lambda_zero_ignores_temperature() {
        let (images, labels) = separable_task();
        let base = DistillConfig {
            epochs: 3,
            batch_size: 16,
            lambda: 0.0,
            temperature: 0.3,
            ..DistillConfig::default()
        };
        let mut a = mlp(1);
        let ma = train_classifier(&mut a, &images, &labels, &base).unwrap();
        let mut b = mlp(1);
        let cfg_b = DistillConfig {
            temperature: 123.0,
            ..base
        };
        let mb = train_classifier(&mut b, &images, &labels, &cfg_b).unwrap();
        assert_eq!(a.params_flat(), b.params_flat());
        assert_eq!(ma.last().unwrap().loss, mb.last().unwrap().loss);
    }

    #[test]
    fn same_seed_bit_identical_parameters() {
        let (images, labels) = separable_task();
        let cfg = DistillConfig {
            epochs: 4,
            batch_size: 32,
            ..DistillConfig::default()
        };
        let mut a = mlp(5);
        train_classifier(&mut a, &images, &labels, &cfg).unwrap();
        let mut b = mlp(5);
        train_classifier(&mut b, &images, &labels, &cfg).unwrap();
        assert_eq!(a.params_flat(), b.params_flat());
    }

    #[test]
    fn evaluate_empty_dataset_is_an_error() {
        let net = mlp(1);
        assert!(matches!(evaluate(&net, &[], &[]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn evaluate_counts_and_confusion_are_consistent() {
        let (images, labels) = separable_task();
        let mut net = mlp(11);
        let cfg = DistillConfig {
            epochs: 30,
            batch_size: 16,
            optimizer: OptimizerSpec::adam(0.01),
            ..DistillConfig::default()
        };
        train_classifier(&mut net, &images, &labels, &cfg).unwrap();
        let eval = evaluate(&net, &images, &labels).unwrap();
        let total: u64 = eval.confusion.iter().flatten().sum();
        assert_eq!(total as usize, labels.len());
        assert!(eval.accuracy > 0.95);
    }
}
