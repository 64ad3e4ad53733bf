//! Synthetic datasets paired with the analytic oracle that generated them,
//! the verification substrate for boundary-distance estimators.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{AnalyticTeacher, CentroidTeacher, ClassLabel, DecisionOracle, LinearTeacher};
use crate::seed;
use crate::shape::Shape;

use super::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    GaussianBlobs,
    LinearRegions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub dimensions: Shape,
    pub class_count: usize,
    pub per_class: usize,
    pub dispersion: f64,
    pub seed: u64,
    /// First per-class slot index. The anchors (and hence the teacher) depend
    /// only on `seed`, so a disjoint slot range yields a fresh split of the
    /// same task.
    #[serde(default)]
    pub slot_offset: usize,
}

pub struct SyntheticTask {
    pub dataset: Dataset,
    pub teacher: AnalyticTeacher,
}

/// Class anchors inside the unit cube, pairwise separated when the dimension
/// allows it.
fn place_anchors(spec: &SyntheticSpec) -> Result<Vec<Vec<f64>>> {
    let d = spec.dimensions.len();
    let mut rng = seed::rng(spec.seed, &[0x616e_6368_6f72]);
    let margin = 0.15;
    let mut separation = (4.0 * spec.dispersion).max(0.2);
    let mut anchors: Vec<Vec<f64>> = Vec::with_capacity(spec.class_count);
    while anchors.len() < spec.class_count {
        let mut placed = false;
        for _ in 0..200 {
            let candidate: Vec<f64> = (0..d)
                .map(|_| margin + (1.0 - 2.0 * margin) * rng.random::<f64>())
                .collect();
            let ok = anchors.iter().all(|a| {
                let dist: f64 = a
                    .iter()
                    .zip(&candidate)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                dist >= separation
            });
            if ok {
                anchors.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            // Crowded configuration; relax and keep going.
            separation *= 0.8;
            if separation < 1e-3 {
                return Err(Error::InvalidConfig(format!(
                    "cannot place {} separated anchors in {d} dimensions",
                    spec.class_count
                )));
            }
        }
    }
    Ok(anchors)
}

fn validate(spec: &SyntheticSpec) -> Result<()> {
    if spec.class_count < 2 {
        return Err(Error::InvalidConfig(
            "synthetic tasks need at least 2 classes (no boundary otherwise)".into(),
        ));
    }
    if spec.per_class == 0 {
        return Err(Error::InvalidConfig("per_class must be >= 1".into()));
    }
    if spec.dispersion <= 0.0 {
        return Err(Error::InvalidConfig("dispersion must be positive".into()));
    }
    Ok(())
}

/// Gaussian blobs around class anchors with a [`CentroidTeacher`] whose
/// centroids are exactly those anchors, or near-Voronoi linear regions with a
/// perturbed [`LinearTeacher`] and rejection-sampled members.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticTask> {
    validate(spec)?;
    let d = spec.dimensions.len();
    let anchors = place_anchors(spec)?;
    match spec.kind {
        SyntheticKind::GaussianBlobs => {
            let teacher =
                CentroidTeacher::new(spec.dimensions, anchors.iter().flatten().copied().collect())?;
            let normal = StandardNormal;
            let mut images = Vec::with_capacity(spec.class_count * spec.per_class * d);
            let mut labels = Vec::with_capacity(spec.class_count * spec.per_class);
            for slot in 0..spec.per_class {
                let slot = spec.slot_offset + slot;
                for (class, anchor) in anchors.iter().enumerate() {
                    let mut rng = seed::rng(spec.seed, &[1, class as u64, slot as u64]);
                    for &a in anchor {
                        let n: f64 = normal.sample(&mut rng);
                        images.push((a + spec.dispersion * n).clamp(0.0, 1.0) as f32);
                    }
                    labels.push(ClassLabel(class));
                }
            }
            let dataset = Dataset::new(
                spec.dimensions,
                spec.class_count,
                images,
                labels,
                "synthetic-blobs",
            )?;
            Ok(SyntheticTask {
                dataset,
                teacher: AnalyticTeacher::Centroid(teacher),
            })
        }
        SyntheticKind::LinearRegions => {
            // Linear form anchored at the class anchors (centroid-equivalent)
            // with a mild random perturbation. The perturbation must stay
            // well below the anchor margin or small cells vanish outright.
            let mut rng = seed::rng(spec.seed, &[2]);
            let normal = StandardNormal;
            let mut weights = Vec::with_capacity(spec.class_count * d);
            let mut biases = Vec::with_capacity(spec.class_count);
            for anchor in &anchors {
                let mut norm_sq = 0.0;
                for &a in anchor {
                    let n: f64 = normal.sample(&mut rng);
                    weights.push(2.0 * a + 0.02 * n);
                    norm_sq += a * a;
                }
                let n: f64 = normal.sample(&mut rng);
                biases.push(-norm_sq + 0.004 * n);
            }
            let teacher = LinearTeacher::new(spec.dimensions, weights, biases)?;
            let normal = StandardNormal;
            let mut images = Vec::with_capacity(spec.class_count * spec.per_class * d);
            let mut labels = Vec::with_capacity(spec.class_count * spec.per_class);
            for slot in 0..spec.per_class {
                let slot = spec.slot_offset + slot;
                for (class, anchor) in anchors.iter().enumerate() {
                    let mut rng = seed::rng(spec.seed, &[3, class as u64, slot as u64]);
                    let attempts = 2000;
                    let mut accepted = None;
                    for attempt in 0..attempts {
                        // Near the anchor first, widening with failed attempts.
                        let spread = spec.dispersion * (1.0 + attempt as f64 / 100.0);
                        let candidate: Vec<f32> = anchor
                            .iter()
                            .map(|&a| {
                                let n: f64 = normal.sample(&mut rng);
                                (a + spread * n).clamp(0.0, 1.0) as f32
                            })
                            .collect();
                        if teacher.decide(&candidate)? == ClassLabel(class) {
                            accepted = Some(candidate);
                            break;
                        }
                    }
                    match accepted {
                        Some(c) => {
                            images.extend_from_slice(&c);
                            labels.push(ClassLabel(class));
                        }
                        None => return Err(Error::ClassUnreachable { class, attempts }),
                    }
                }
            }
            let dataset = Dataset::new(
                spec.dimensions,
                spec.class_count,
                images,
                labels,
                "synthetic-linear",
            )?;
            Ok(SyntheticTask {
                dataset,
                teacher: AnalyticTeacher::Linear(teacher),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::DecisionOracle;

    #[test]
    fn tight_blobs_are_classified_perfectly_by_their_teacher() {
        let spec = SyntheticSpec {
            kind: SyntheticKind::GaussianBlobs,
            dimensions: Shape::new(1, 2, 1),
            class_count: 2,
            per_class: 50,
            dispersion: 0.02,
            seed: 5,
            slot_offset: 0,
        };
        let task = generate_synthetic(&spec).unwrap();
        let mut correct = 0;
        for i in 0..task.dataset.len() {
            if task.teacher.decide(task.dataset.image(i)).unwrap() == task.dataset.label(i) {
                correct += 1;
            }
        }
        assert_eq!(correct, task.dataset.len());
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SyntheticSpec {
            kind: SyntheticKind::LinearRegions,
            dimensions: Shape::new(1, 3, 1),
            class_count: 3,
            per_class: 10,
            dispersion: 0.05,
            seed: 9,
            slot_offset: 0,
        };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a.dataset, b.dataset);
    }

    #[test]
    fn single_class_is_rejected() {
        let spec = SyntheticSpec {
            kind: SyntheticKind::GaussianBlobs,
            dimensions: Shape::new(1, 2, 1),
            class_count: 1,
            per_class: 5,
            dispersion: 0.05,
            seed: 1,
            slot_offset: 0,
        };
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn linear_regions_agree_with_their_teacher() {
        let spec = SyntheticSpec {
            kind: SyntheticKind::LinearRegions,
            dimensions: Shape::new(1, 10, 1),
            class_count: 4,
            per_class: 20,
            dispersion: 0.05,
            seed: 13,
            slot_offset: 0,
        };
        let task = generate_synthetic(&spec).unwrap();
        for i in 0..task.dataset.len() {
            assert_eq!(
                task.teacher.decide(task.dataset.image(i)).unwrap(),
                task.dataset.label(i)
            );
        }
        assert_eq!(task.dataset.class_histogram(), vec![20; 4]);
    }
}
