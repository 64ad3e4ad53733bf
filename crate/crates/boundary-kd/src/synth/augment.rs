//! Transfer-set augmentation: padded crops, flips, rotations, and top-1
//! label recovery for variants the teacher reassigns.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{binary_search_boundary, SearchMode};
use crate::oracle::{ClassLabel, DecisionOracle};
use crate::shape::Shape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentStrategy {
    PadCrop,
    HFlip,
    VFlip,
    Rotate,
    PadCropFlip,
    PadCropRotate,
}

const ALLOWED_DEGREES: [f64; 6] = [-15.0, -10.0, -5.0, 5.0, 10.0, 15.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationPolicy {
    pub strategies: Vec<AugmentStrategy>,
    /// Zero padding on each side before cropping back to the original size.
    pub pad: usize,
    pub rotation_degrees: Vec<f64>,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        AugmentationPolicy {
            strategies: vec![
                AugmentStrategy::PadCrop,
                AugmentStrategy::HFlip,
                AugmentStrategy::VFlip,
            ],
            pad: 2,
            rotation_degrees: ALLOWED_DEGREES.to_vec(),
        }
    }
}

impl AugmentationPolicy {
    pub fn validate(&self, shape: Shape) -> Result<()> {
        if self.pad == 0 {
            return Err(Error::InvalidConfig("pad must be >= 1".into()));
        }
        for d in &self.rotation_degrees {
            if !ALLOWED_DEGREES.contains(d) {
                return Err(Error::InvalidConfig(format!(
                    "rotation angle {d} not in {ALLOWED_DEGREES:?}"
                )));
            }
        }
        let crops = self.strategies.iter().any(|s| {
            matches!(
                s,
                AugmentStrategy::PadCrop
                    | AugmentStrategy::PadCropFlip
                    | AugmentStrategy::PadCropRotate
            )
        });
        if crops && (shape.width < 3 || shape.height < 3) {
            return Err(Error::ShapeTooSmall {
                width: shape.width,
                height: shape.height,
            });
        }
        Ok(())
    }

    /// Exact number of variants emitted per input sample.
    pub fn variant_count(&self, _shape: Shape) -> usize {
        let crops = (2 * self.pad + 1) * (2 * self.pad + 1);
        let rotations = self.rotation_degrees.len();
        self.strategies
            .iter()
            .map(|s| match s {
                AugmentStrategy::PadCrop => crops,
                AugmentStrategy::HFlip | AugmentStrategy::VFlip => 1,
                AugmentStrategy::Rotate => rotations,
                AugmentStrategy::PadCropFlip => 2 * crops,
                AugmentStrategy::PadCropRotate => rotations * crops,
            })
            .sum()
    }
}

/// Provenance of one augmented variant. Crop offsets are relative to the
/// original position (0, 0 is the identity crop).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Transform {
    PadCrop { dy: isize, dx: isize },
    HFlip,
    VFlip,
    Rotate { degrees: f64 },
    PadCropHFlip { dy: isize, dx: isize },
    PadCropVFlip { dy: isize, dx: isize },
    PadCropRotate { dy: isize, dx: isize, degrees: f64 },
}

#[derive(Debug, Clone)]
pub struct AugmentedSample {
    pub tensor: Vec<f32>,
    pub parent_index: usize,
    pub transform: Transform,
}

fn crop_shifted(src: &[f32], shape: Shape, dy: isize, dx: isize) -> Vec<f32> {
    let (c, h, w) = (shape.channels, shape.height, shape.width);
    let mut out = vec![0.0f32; src.len()];
    for ci in 0..c {
        for y in 0..h {
            let sy = y as isize + dy;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for x in 0..w {
                let sx = x as isize + dx;
                if sx < 0 || sx >= w as isize {
                    continue;
                }
                out[(ci * h + y) * w + x] = src[(ci * h + sy as usize) * w + sx as usize];
            }
        }
    }
    out
}

fn hflip(src: &[f32], shape: Shape) -> Vec<f32> {
    let (c, h, w) = (shape.channels, shape.height, shape.width);
    let mut out = vec![0.0f32; src.len()];
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[(ci * h + y) * w + x] = src[(ci * h + y) * w + (w - 1 - x)];
            }
        }
    }
    out
}

fn vflip(src: &[f32], shape: Shape) -> Vec<f32> {
    let (c, h, w) = (shape.channels, shape.height, shape.width);
    let mut out = vec![0.0f32; src.len()];
    for ci in 0..c {
        for y in 0..h {
            out[(ci * h + y) * w..(ci * h + y + 1) * w]
                .copy_from_slice(&src[(ci * h + (h - 1 - y)) * w..(ci * h + (h - y)) * w]);
        }
    }
    out
}

/// Rotate around the image center with bilinear interpolation, zero fill.
pub fn rotate_image(src: &[f32], shape: Shape, degrees: f64) -> Vec<f32> {
    let (c, h, w) = (shape.channels, shape.height, shape.width);
    let theta = degrees.to_radians();
    let (sin, cos) = theta.sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let mut out = vec![0.0f32; src.len()];
    for ci in 0..c {
        let plane = ci * h * w;
        for y in 0..h {
            for x in 0..w {
                // Inverse mapping: rotate the destination back by -theta.
                let ry = y as f64 - cy;
                let rx = x as f64 - cx;
                let sy = cos * ry + sin * rx + cy;
                let sx = -sin * ry + cos * rx + cx;
                if sy < 0.0 || sx < 0.0 {
                    continue;
                }
                let y0 = sy.floor() as usize;
                let x0 = sx.floor() as usize;
                if y0 + 1 >= h || x0 + 1 >= w {
                    // Clamp the last valid cell; outside stays zero.
                    if y0 < h && x0 < w && sy <= (h - 1) as f64 && sx <= (w - 1) as f64 {
                        out[plane + y * w + x] = src[plane + y0 * w + x0];
                    }
                    continue;
                }
                let fy = sy - y0 as f64;
                let fx = sx - x0 as f64;
                let v00 = src[plane + y0 * w + x0] as f64;
                let v01 = src[plane + y0 * w + x0 + 1] as f64;
                let v10 = src[plane + (y0 + 1) * w + x0] as f64;
                let v11 = src[plane + (y0 + 1) * w + x0 + 1] as f64;
                let v = v00 * (1.0 - fy) * (1.0 - fx)
                    + v01 * (1.0 - fy) * fx
                    + v10 * fy * (1.0 - fx)
                    + v11 * fy * fx;
                out[plane + y * w + x] = v as f32;
            }
        }
    }
    out
}

fn crop_offsets(pad: usize) -> Vec<(isize, isize)> {
    let p = pad as isize;
    let mut out = Vec::with_capacity((2 * pad + 1) * (2 * pad + 1));
    for dy in -p..=p {
        for dx in -p..=p {
            out.push((dy, dx));
        }
    }
    out
}

/// All augmentation variants of every sample, tagged with provenance.
pub fn augment(
    samples: &[Vec<f32>],
    shape: Shape,
    policy: &AugmentationPolicy,
) -> Result<Vec<AugmentedSample>> {
    policy.validate(shape)?;
    let mut out = Vec::with_capacity(samples.len() * policy.variant_count(shape));
    for (parent_index, sample) in samples.iter().enumerate() {
        if sample.len() != shape.len() {
            return Err(Error::ShapeMismatch {
                got: sample.len(),
                expected: shape.len(),
                shape,
            });
        }
        for strategy in &policy.strategies {
            match strategy {
                AugmentStrategy::PadCrop => {
                    for (dy, dx) in crop_offsets(policy.pad) {
                        out.push(AugmentedSample {
                            tensor: crop_shifted(sample, shape, dy, dx),
                            parent_index,
                            transform: Transform::PadCrop { dy, dx },
                        });
                    }
                }
                AugmentStrategy::HFlip => out.push(AugmentedSample {
                    tensor: hflip(sample, shape),
                    parent_index,
                    transform: Transform::HFlip,
                }),
                AugmentStrategy::VFlip => out.push(AugmentedSample {
                    tensor: vflip(sample, shape),
                    parent_index,
                    transform: Transform::VFlip,
                }),
                AugmentStrategy::Rotate => {
                    for &degrees in &policy.rotation_degrees {
                        out.push(AugmentedSample {
                            tensor: rotate_image(sample, shape, degrees),
                            parent_index,
                            transform: Transform::Rotate { degrees },
                        });
                    }
                }
                AugmentStrategy::PadCropFlip => {
                    for (dy, dx) in crop_offsets(policy.pad) {
                        let cropped = crop_shifted(sample, shape, dy, dx);
                        out.push(AugmentedSample {
                            tensor: hflip(&cropped, shape),
                            parent_index,
                            transform: Transform::PadCropHFlip { dy, dx },
                        });
                        out.push(AugmentedSample {
                            tensor: vflip(&cropped, shape),
                            parent_index,
                            transform: Transform::PadCropVFlip { dy, dx },
                        });
                    }
                }
                AugmentStrategy::PadCropRotate => {
                    for (dy, dx) in crop_offsets(policy.pad) {
                        let cropped = crop_shifted(sample, shape, dy, dx);
                        for &degrees in &policy.rotation_degrees {
                            out.push(AugmentedSample {
                                tensor: rotate_image(&cropped, shape, degrees),
                                parent_index,
                                transform: Transform::PadCropRotate { dy, dx, degrees },
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Restore an augmented sample's top-1 class to its parent's.
///
/// Unchanged if the teacher already agrees; otherwise the boundary point
/// toward the parent is located and the just-across side returned. `None`
/// when the parent itself no longer classifies as `parent_class` (the
/// variant is dropped).
pub fn recover_label(
    oracle: &dyn DecisionOracle,
    augmented: &[f32],
    parent: &[f32],
    parent_class: ClassLabel,
    epsilon: f64,
) -> Result<Option<Vec<f32>>> {
    if oracle.classify(augmented)? == parent_class {
        return Ok(Some(augmented.to_vec()));
    }
    if oracle.classify(parent)? != parent_class {
        return Ok(None);
    }
    let point = binary_search_boundary(
        oracle,
        augmented,
        parent,
        SearchMode::Targeted(parent_class),
        epsilon,
    )?;
    Ok(Some(point.point))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::LinearTeacher;

    fn shape28() -> Shape {
        Shape::new(1, 28, 28)
    }

    fn gradient_image(shape: Shape) -> Vec<f32> {
        (0..shape.len()).map(|i| (i % 97) as f32 / 96.0).collect()
    }

    #[test]
    fn pad_crop_emits_25_variants_on_28x28() {
        let policy = AugmentationPolicy {
            strategies: vec![AugmentStrategy::PadCrop],
            ..AugmentationPolicy::default()
        };
        let out = augment(&[gradient_image(shape28())], shape28(), &policy).unwrap();
        assert_eq!(out.len(), 25);
        assert_eq!(policy.variant_count(shape28()), 25);
        // The centered crop is the identity.
        let identity = out
            .iter()
            .find(|a| a.transform == Transform::PadCrop { dy: 0, dx: 0 })
            .unwrap();
        assert_eq!(identity.tensor, gradient_image(shape28()));
    }

    #[test]
    fn hflip_twice_is_identity() {
        let img = gradient_image(shape28());
        let once = hflip(&img, shape28());
        let twice = hflip(&once, shape28());
        assert_eq!(twice, img);
        assert_ne!(once, img);
    }

    #[test]
    fn rotation_set_emits_exactly_six() {
        let policy = AugmentationPolicy {
            strategies: vec![AugmentStrategy::Rotate],
            ..AugmentationPolicy::default()
        };
        let out = augment(&[gradient_image(shape28())], shape28(), &policy).unwrap();
        assert_eq!(out.len(), 6);
    }

    #[test]
    fn combined_counts_are_closed_form() {
        let policy = AugmentationPolicy {
            strategies: vec![
                AugmentStrategy::PadCrop,
                AugmentStrategy::HFlip,
                AugmentStrategy::VFlip,
                AugmentStrategy::Rotate,
                AugmentStrategy::PadCropFlip,
                AugmentStrategy::PadCropRotate,
            ],
            ..AugmentationPolicy::default()
        };
        let expected = 25 + 1 + 1 + 6 + 50 + 150;
        assert_eq!(policy.variant_count(shape28()), expected);
        let samples = vec![gradient_image(shape28()); 3];
        let out = augment(&samples, shape28(), &policy).unwrap();
        assert_eq!(out.len(), 3 * expected);
    }

    #[test]
    fn tiny_images_are_rejected_for_crops() {
        let shape = Shape::new(1, 2, 2);
        let policy = AugmentationPolicy::default();
        assert!(matches!(
            policy.validate(shape),
            Err(Error::ShapeTooSmall { .. })
        ));
    }

    #[test]
    fn off_menu_rotation_angles_are_rejected() {
        let policy = AugmentationPolicy {
            rotation_degrees: vec![7.5],
            ..AugmentationPolicy::default()
        };
        assert!(policy.validate(shape28()).is_err());
    }

    #[test]
    fn rotation_preserves_total_mass_roughly() {
        let img = gradient_image(shape28());
        let rotated = rotate_image(&img, shape28(), 15.0);
        let sum: f32 = img.iter().sum();
        let rsum: f32 = rotated.iter().sum();
        assert!((sum - rsum).abs() / sum < 0.15, "{sum} vs {rsum}");
    }

    fn shape2() -> Shape {
        Shape::new(1, 2, 1)
    }

    fn boundary_at_half() -> LinearTeacher {
        LinearTeacher::new(shape2(), vec![1.0, 0.0, 3.0, 0.0], vec![0.0, -1.0]).unwrap()
    }

    #[test]
    fn recover_keeps_agreeing_samples() {
        let teacher = boundary_at_half();
        let parent = [0.8f32, 0.5];
        let augmented = [0.9f32, 0.2];
        let out = recover_label(&teacher, &augmented, &parent, ClassLabel(1), 1e-5)
            .unwrap()
            .unwrap();
        assert_eq!(out, augmented.to_vec());
    }

    #[test]
    fn recover_walks_back_across_the_boundary() {
        let teacher = boundary_at_half();
        let parent = [0.9f32, 0.5]; // class 1
        let augmented = [0.1f32, 0.5]; // class 0 after augmentation
        let out = recover_label(&teacher, &augmented, &parent, ClassLabel(1), 1e-5)
            .unwrap()
            .unwrap();
        assert_eq!(teacher.decide(&out).unwrap(), ClassLabel(1));
        // Just across the boundary at x = 0.5.
        assert!((out[0] - 0.5).abs() < 1e-3, "x = {}", out[0]);
    }

    #[test]
    fn recover_drops_when_the_parent_moved() {
        let teacher = boundary_at_half();
        let parent = [0.1f32, 0.5]; // actually class 0
        let augmented = [0.2f32, 0.5];
        let out = recover_label(&teacher, &augmented, &parent, ClassLabel(1), 1e-5).unwrap();
        assert!(out.is_none());
    }
}
