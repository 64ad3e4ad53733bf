//! Minimal network engine for desk-scale teachers and students.
//!
//! Dense and convolutional layers over `ndarray`, hand-written backprop,
//! Adam/SGD, the KD objective, and checkpoint persistence. Generic over the
//! element type so gradient audits can run the same code in 64-bit.

mod checkpoint;
mod layers;
mod loss;
mod optim;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use loss::{kd_loss, softmax_rows, KdLossConfig, SoftLossKind};
pub use optim::{Optimizer, OptimizerSpec};
pub use train::{
    evaluate, train_classifier, train_student, DistillConfig, EpochMetrics, Evaluation,
};

use ndarray::{Array2, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::shape::Shape;
use layers::{Batch, LayerNode};

/// Element type of network parameters and activations.
pub trait Element: ndarray::NdFloat {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Element for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// One layer in a network description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Maxpool {
        kernel: usize,
        stride: usize,
    },
    Dense {
        width: usize,
    },
    Relu,
    Flatten,
}

/// Intermediate tensor extent while validating a spec.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorDims {
    Spatial { c: usize, h: usize, w: usize },
    Flat(usize),
}

/// Declarative network description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub input_shape: Shape,
    pub class_count: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Propagate shapes through the layer stack; the resulting per-layer
    /// output dims, or an error if anything is inconsistent.
    pub fn validate(&self) -> Result<Vec<TensorDims>> {
        if self.class_count < 2 {
            return Err(Error::InvalidConfig(
                "class_count must be at least 2".into(),
            ));
        }
        let mut dims = TensorDims::Spatial {
            c: self.input_shape.channels,
            h: self.input_shape.height,
            w: self.input_shape.width,
        };
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            dims = match (layer, dims) {
                (
                    LayerSpec::Conv {
                        out_channels,
                        kernel,
                        stride,
                        padding,
                    },
                    TensorDims::Spatial { h, w, .. },
                ) => {
                    let (oh, ow) =
                        conv_output(h, w, *kernel, *stride, *padding).ok_or_else(|| {
                            Error::InvalidConfig(format!(
                                "layer {i}: conv kernel {kernel} does not fit {h}x{w} input"
                            ))
                        })?;
                    if *out_channels == 0 {
                        return Err(Error::InvalidConfig(format!(
                            "layer {i}: conv needs out_channels >= 1"
                        )));
                    }
                    TensorDims::Spatial {
                        c: *out_channels,
                        h: oh,
                        w: ow,
                    }
                }
                (LayerSpec::Maxpool { kernel, stride }, TensorDims::Spatial { c, h, w }) => {
                    let (oh, ow) = conv_output(h, w, *kernel, *stride, 0).ok_or_else(|| {
                        Error::InvalidConfig(format!(
                            "layer {i}: maxpool kernel {kernel} does not fit {h}x{w} input"
                        ))
                    })?;
                    TensorDims::Spatial { c, h: oh, w: ow }
                }
                (LayerSpec::Relu, d) => d,
                (LayerSpec::Flatten, TensorDims::Spatial { c, h, w }) => {
                    TensorDims::Flat(c * h * w)
                }
                (LayerSpec::Dense { width }, TensorDims::Flat(input)) => {
                    if *width == 0 {
                        return Err(Error::InvalidConfig(format!(
                            "layer {i}: dense needs width >= 1"
                        )));
                    }
                    let _ = input;
                    TensorDims::Flat(*width)
                }
                (spec, d) => {
                    return Err(Error::InvalidConfig(format!(
                        "layer {i}: {spec:?} cannot follow {d:?}"
                    )))
                }
            };
            out.push(dims);
        }
        match out.last() {
            Some(TensorDims::Flat(n)) if *n == self.class_count => Ok(out),
            other => Err(Error::InvalidConfig(format!(
                "network must end in a flat layer of width {}, got {other:?}",
                self.class_count
            ))),
        }
    }

    /// Closed-form parameter count: `out*in*k^2 + out` per conv,
    /// `in*out + out` per dense.
    pub fn parameter_count(&self) -> Result<usize> {
        let dims = self.validate()?;
        let mut count = 0usize;
        let mut prev = TensorDims::Spatial {
            c: self.input_shape.channels,
            h: self.input_shape.height,
            w: self.input_shape.width,
        };
        for (layer, next) in self.layers.iter().zip(&dims) {
            match (layer, prev) {
                (
                    LayerSpec::Conv {
                        out_channels,
                        kernel,
                        ..
                    },
                    TensorDims::Spatial { c, .. },
                ) => count += out_channels * c * kernel * kernel + out_channels,
                (LayerSpec::Dense { width }, TensorDims::Flat(input)) => {
                    count += input * width + width
                }
                _ => {}
            }
            prev = *next;
        }
        Ok(count)
    }

    /// Named desk-scale architectures.
    ///
    /// - `lenet-tiny`: 8/16-filter conv pair, 64-wide hidden dense.
    /// - `lenet-tiny-half`: every width halved.
    /// - `mlp-tiny`: one 32-wide hidden dense layer, for low-dimensional tasks.
    /// - `mlp-tiny-half`: 16-wide hidden dense layer.
    pub fn preset(name: &str, input_shape: Shape, class_count: usize) -> Result<NetworkSpec> {
        let conv_pair = |c1: usize, c2: usize, dense: usize| -> Vec<LayerSpec> {
            vec![
                LayerSpec::Conv {
                    out_channels: c1,
                    kernel: 5,
                    stride: 1,
                    padding: 0,
                },
                LayerSpec::Relu,
                LayerSpec::Maxpool {
                    kernel: 2,
                    stride: 2,
                },
                LayerSpec::Conv {
                    out_channels: c2,
                    kernel: 5,
                    stride: 1,
                    padding: 0,
                },
                LayerSpec::Relu,
                LayerSpec::Maxpool {
                    kernel: 2,
                    stride: 2,
                },
                LayerSpec::Flatten,
                LayerSpec::Dense { width: dense },
                LayerSpec::Relu,
                LayerSpec::Dense { width: class_count },
            ]
        };
        let mlp = |hidden: usize| -> Vec<LayerSpec> {
            vec![
                LayerSpec::Flatten,
                LayerSpec::Dense { width: hidden },
                LayerSpec::Relu,
                LayerSpec::Dense { width: class_count },
            ]
        };
        let layers = match name {
            "lenet-tiny" => conv_pair(8, 16, 64),
            "lenet-tiny-half" => conv_pair(4, 8, 32),
            "mlp-tiny" => mlp(32),
            "mlp-tiny-half" => mlp(16),
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown preset {other:?}; known: lenet-tiny, lenet-tiny-half, mlp-tiny, mlp-tiny-half"
                )))
            }
        };
        let spec = NetworkSpec {
            input_shape,
            class_count,
            layers,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn conv_output(h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Option<(usize, usize)> {
    if k == 0 || stride == 0 || h + 2 * pad < k || w + 2 * pad < k {
        return None;
    }
    Some((
        (h + 2 * pad - k) / stride + 1,
        (w + 2 * pad - k) / stride + 1,
    ))
}

/// A network with its trained parameter state.
pub struct Network<F: Element> {
    spec: NetworkSpec,
    layers: Vec<LayerNode<F>>,
    seed: u64,
}

impl<F: Element> Network<F> {
    /// Build a network with He-uniform weights and zero biases, drawn
    /// deterministically from `seed`.
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = crate::seed::rng(seed, &[0x6e65_7477_6f72_6b]);
        let mut dims = TensorDims::Spatial {
            c: spec.input_shape.channels,
            h: spec.input_shape.height,
            w: spec.input_shape.width,
        };
        let mut layers = Vec::with_capacity(spec.layers.len());
        for layer in &spec.layers {
            let (node, next) = LayerNode::build(layer, dims, &mut rng)?;
            layers.push(node);
            dims = next;
        }
        Ok(Network { spec, layers, seed })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Seed the parameters were initialized from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn input_batch(&self, samples: &[F], n: usize) -> Result<Batch<F>> {
        let d = self.spec.input_shape.len();
        if samples.len() != n * d {
            return Err(Error::ShapeMismatch {
                got: samples.len(),
                expected: n * d,
                shape: self.spec.input_shape,
            });
        }
        let s = self.spec.input_shape;
        let arr = Array4::from_shape_vec((n, s.channels, s.height, s.width), samples.to_vec())
            .expect("length checked above");
        Ok(Batch::Spatial(arr))
    }

    /// Pre-softmax activations, shape `(n, class_count)`. Pure function of
    /// (parameters, input); caches nothing.
    pub fn forward_eval(&self, samples: &[F], n: usize) -> Result<Array2<F>> {
        let mut batch = self.input_batch(samples, n)?;
        for layer in &self.layers {
            batch = layer.forward(&batch)?;
        }
        batch.into_flat()
    }

    /// Forward pass that caches per-layer state for a following
    /// [`Network::backward`].
    pub fn forward_train(&mut self, samples: &[F], n: usize) -> Result<Array2<F>> {
        let mut batch = self.input_batch(samples, n)?;
        for layer in &mut self.layers {
            batch = layer.forward_train(batch)?;
        }
        batch.into_flat()
    }

    /// Backpropagate `grad` (d loss / d activations) through the cached
    /// forward pass, accumulating parameter gradients.
    pub fn backward(&mut self, grad: Array2<F>) -> Result<()> {
        let mut g = Batch::Flat(grad);
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(g)?;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for layer in &mut self.layers {
            layer.zero_grads();
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_len()).sum()
    }

    /// All parameters concatenated in layer order.
    pub fn params_flat(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for layer in &self.layers {
            layer.write_params(&mut out);
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[F]) -> Result<()> {
        if params.len() != self.parameter_count() {
            return Err(Error::CountMismatch {
                left: "provided parameters",
                left_count: params.len(),
                right: "network parameters",
                right_count: self.parameter_count(),
            });
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            offset += layer.read_params(&params[offset..]);
        }
        Ok(())
    }

    /// All accumulated gradients concatenated in layer order.
    pub fn grads_flat(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for layer in &self.layers {
            layer.write_grads(&mut out);
        }
        out
    }

    /// Copy of this network with parameters converted element-wise.
    pub fn convert<T: Element>(&self) -> Network<T> {
        let mut net = Network::<T>::init(self.spec.clone(), self.seed)
            .expect("spec was validated at construction");
        let params: Vec<T> = self
            .params_flat()
            .iter()
            .map(|&v| T::from_f64(v.to_f64()))
            .collect();
        net.set_params_flat(&params).expect("same spec, same count");
        net
    }
}

impl<F: Element> Clone for Network<F> {
    fn clone(&self) -> Self {
        self.convert::<F>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lenet_tiny_shapes_and_param_count() {
        let spec = NetworkSpec::preset("lenet-tiny", Shape::new(1, 28, 28), 10).unwrap();
        // conv1 8x1x25+8, conv2 16x8x25+16, dense 256x64+64, dense 64x10+10
        let expected = (8 * 25 + 8) + (16 * 8 * 25 + 16) + (256 * 64 + 64) + (64 * 10 + 10);
        assert_eq!(spec.parameter_count().unwrap(), expected);
        let net = Network::<f32>::init(spec, 1).unwrap();
        assert_eq!(net.parameter_count(), expected);
        assert_eq!(net.params_flat().len(), expected);
    }

    #[test]
    fn rejects_dense_before_flatten() {
        let spec = NetworkSpec {
            input_shape: Shape::new(1, 4, 4),
            class_count: 2,
            layers: vec![LayerSpec::Dense { width: 2 }],
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn rejects_wrong_final_width() {
        let spec = NetworkSpec {
            input_shape: Shape::new(1, 4, 4),
            class_count: 3,
            layers: vec![LayerSpec::Flatten, LayerSpec::Dense { width: 2 }],
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn init_is_deterministic() {
        let spec = NetworkSpec::preset("mlp-tiny", Shape::new(1, 2, 1), 3).unwrap();
        let a = Network::<f32>::init(spec.clone(), 42).unwrap();
        let b = Network::<f32>::init(spec, 42).unwrap();
        assert_eq!(a.params_flat(), b.params_flat());
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = NetworkSpec::preset("lenet-tiny-half", Shape::new(1, 28, 28), 10).unwrap();
        let json = serde_json::to_string(&spec).unwrap();
        let back: NetworkSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }
}
