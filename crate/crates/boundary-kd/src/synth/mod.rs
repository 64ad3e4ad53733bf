//! Zero-shot pseudo-sample generation: random noise is pushed away from the
//! teacher's decision boundaries until it sits deep inside a class region,
//! simulating the robustness profile of real training data.

mod augment;

pub use augment::{
    augment, recover_label, rotate_image, AugmentStrategy, AugmentationPolicy, AugmentedSample,
    Transform,
};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{RobustnessConfig, SearchMode};
use crate::oracle::{ClassLabel, DecisionOracle};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationConfig {
    /// Probe noises per ascent step (T).
    pub probes_per_step: usize,
    /// Ascent step size away from the boundary; 0 is the degenerate null step.
    pub ascent_step: f64,
    pub outer_iterations: usize,
    /// Per-probe query cap for the inner boundary-distance minimization.
    pub mbd_query_limit: u64,
    pub per_class_quota: usize,
    pub clip_min: f32,
    pub clip_max: f32,
    pub seed: u64,
    /// Inner search parameters (bisection epsilon, gradient samples, probe
    /// radius, descent step, improvement tolerance). The per-direction limit
    /// inside is superseded by `mbd_query_limit`.
    pub robustness: RobustnessConfig,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            probes_per_step: 2,
            ascent_step: 0.5,
            outer_iterations: 40,
            mbd_query_limit: 5000,
            per_class_quota: 100,
            clip_min: 0.0,
            clip_max: 1.0,
            seed: 0,
            robustness: RobustnessConfig::default(),
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.probes_per_step == 0 {
            return Err(Error::InvalidConfig("probes_per_step must be >= 1".into()));
        }
        if self.ascent_step < 0.0 {
            return Err(Error::InvalidConfig(
                "ascent_step must be non-negative".into(),
            ));
        }
        if self.outer_iterations == 0 || self.per_class_quota == 0 {
            return Err(Error::InvalidConfig(
                "outer_iterations and per_class_quota must be >= 1".into(),
            ));
        }
        if !(self.clip_min < self.clip_max) {
            return Err(Error::InvalidConfig("clip range must be non-empty".into()));
        }
        if self.mbd_query_limit == 0 {
            return Err(Error::InvalidConfig("mbd_query_limit must be >= 1".into()));
        }
        self.robustness.validate()
    }

    fn inner_robustness(&self) -> RobustnessConfig {
        RobustnessConfig {
            query_limit_per_direction: self.mbd_query_limit,
            ..self.robustness
        }
    }
}

/// A synthesized training sample and its optimization footprint.
#[derive(Debug, Clone)]
pub struct PseudoSample {
    pub tensor: Vec<f32>,
    /// The teacher's class for the tensor at every accepted step.
    pub teacher_class: ClassLabel,
    /// Minimal boundary distance measured at the start of each outer
    /// iteration.
    pub boundary_distance_trace: Vec<f64>,
    pub queries_spent: u64,
    /// True when a query budget ran out mid-optimization.
    pub partial: bool,
}

fn draw_noise(d: usize, lo: f32, hi: f32, rng: &mut ChaCha8Rng) -> Vec<f32> {
    (0..d)
        .map(|_| lo + (hi - lo) * rng.random::<f32>())
        .collect()
}

/// Draw uniform noise until the teacher assigns `class`, up to 1000 draws.
/// On failure the last noise is kept with the class the teacher actually
/// assigned; quota bookkeeping is the caller's job.
pub fn init_noise(
    oracle: &dyn DecisionOracle,
    class: ClassLabel,
    config: &GenerationConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PseudoSample> {
    config.validate()?;
    if class.0 >= oracle.class_count() {
        return Err(Error::ClassOutOfRange {
            class: class.0,
            count: oracle.class_count(),
        });
    }
    let d = oracle.input_shape().len();
    let mut queries = 0u64;
    let mut last: Option<(Vec<f32>, ClassLabel)> = None;
    for _ in 0..1000 {
        let noise = draw_noise(d, config.clip_min, config.clip_max, rng);
        let label = oracle.classify(&noise)?;
        queries += 1;
        if label == class {
            return Ok(PseudoSample {
                tensor: noise,
                teacher_class: class,
                boundary_distance_trace: Vec::new(),
                queries_spent: queries,
                partial: false,
            });
        }
        last = Some((noise, label));
    }
    let (tensor, teacher_class) = last.expect("at least one draw");
    Ok(PseudoSample {
        tensor,
        teacher_class,
        boundary_distance_trace: Vec::new(),
        queries_spent: queries,
        partial: false,
    })
}

/// One outer ascent: probe noises of other classes, their boundary points
/// toward the sample, the closest minimized boundary point, then a step away
/// from the boundary along the estimated normal, clipped to the pixel range
/// and accepted only if the teacher still assigns the sample's class.
pub fn maximize_boundary_distance(
    oracle: &dyn DecisionOracle,
    sample: PseudoSample,
    config: &GenerationConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PseudoSample> {
    config.validate()?;
    let m = sample.teacher_class;
    let mode = SearchMode::Untargeted(m);
    let inner = config.inner_robustness();
    let d = oracle.input_shape().len();
    let mut tensor = sample.tensor;
    let mut trace = sample.boundary_distance_trace;
    let mut queries = sample.queries_spent;

    macro_rules! partial_return {
        () => {
            return Ok(PseudoSample {
                tensor,
                teacher_class: m,
                boundary_distance_trace: trace,
                queries_spent: queries,
                partial: true,
            })
        };
    }

    match oracle.classify(&tensor) {
        Ok(label) if label == m => queries += 1,
        Ok(label) => {
            return Err(Error::InvalidConfig(format!(
                "pseudo sample classifies as {label}, expected {m}"
            )))
        }
        Err(e) if e.is_budget() => partial_return!(),
        Err(e) => return Err(e),
    }

    for _iteration in 0..config.outer_iterations {
        // Fresh probe noises of any other class.
        let mut probes: Vec<Vec<f32>> = Vec::with_capacity(config.probes_per_step);
        let mut attempts = 0usize;
        while probes.len() < config.probes_per_step {
            if attempts >= 200 * config.probes_per_step {
                // The teacher assigns m almost everywhere; nothing to push
                // against any more.
                partial_return!();
            }
            attempts += 1;
            let noise = draw_noise(d, config.clip_min, config.clip_max, rng);
            match oracle.classify(&noise) {
                Ok(label) => {
                    queries += 1;
                    if label != m {
                        probes.push(noise);
                    }
                }
                Err(e) if e.is_budget() => partial_return!(),
                Err(e) => return Err(e),
            }
        }

        // Boundary point of each probe direction, minimized under the query
        // cap; keep the closest.
        let mut best: Option<crate::geometry::BoundaryPoint> = None;
        for probe in &probes {
            match crate::geometry::boundary_descent_for_synth(
                oracle, &tensor, probe, &inner, mode, rng,
            ) {
                Ok(crate::geometry::SynthDescent::Done { point, spent }) => {
                    queries += spent;
                    if best
                        .as_ref()
                        .map_or(true, |b| point.distance_to_origin < b.distance_to_origin)
                    {
                        best = Some(point);
                    }
                }
                Ok(crate::geometry::SynthDescent::OracleBudget { spent }) => {
                    queries += spent;
                    partial_return!();
                }
                Err(e) if e.is_budget() => partial_return!(),
                Err(e) => return Err(e),
            }
        }
        let best = best.expect("probes_per_step >= 1");
        trace.push(best.distance_to_origin);

        // Estimated boundary normal at the closest boundary point; step the
        // sample to the opposite side (deeper into class m).
        let gradient = match crate::geometry::estimate_boundary_gradient(
            oracle,
            &best,
            inner.gradient_samples,
            inner.gradient_probe_radius,
            mode,
            rng,
        ) {
            Ok(g) => {
                queries += inner.gradient_samples as u64;
                g
            }
            Err(e) if e.is_budget() => partial_return!(),
            Err(e) => return Err(e),
        };

        let mut step = config.ascent_step;
        for _ in 0..6 {
            let candidate: Vec<f32> = tensor
                .iter()
                .zip(&gradient)
                .map(|(&v, &g)| {
                    ((v as f64 - step * g) as f32).clamp(config.clip_min, config.clip_max)
                })
                .collect();
            match oracle.classify(&candidate) {
                Ok(label) => {
                    queries += 1;
                    if label == m {
                        tensor = candidate;
                        break;
                    }
                    step *= 0.5;
                }
                Err(e) if e.is_budget() => partial_return!(),
                Err(e) => return Err(e),
            }
        }
        // If every halving landed outside class m the iteration still counts;
        // the tensor simply stays put.
    }

    Ok(PseudoSample {
        tensor,
        teacher_class: m,
        boundary_distance_trace: trace,
        queries_spent: queries,
        partial: false,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationReport {
    /// Emitted samples per teacher class.
    pub per_class_counts: Vec<usize>,
    /// Mean recorded boundary distance per outer iteration.
    pub mean_trace: Vec<f64>,
    pub queries_total: u64,
    /// Jobs abandoned without a usable sample.
    pub dropped: usize,
}

/// Generate `per_class_quota` pseudo samples per class, in parallel, with
/// per-(class, slot) deterministic seeds. Noise that never hits its requested
/// class keeps the teacher's class and fills that class's bookkeeping instead.
pub fn generate_pseudo_set(
    oracle: &dyn DecisionOracle,
    config: &GenerationConfig,
) -> Result<(Vec<PseudoSample>, GenerationReport)> {
    config.validate()?;
    let l = oracle.class_count();
    let jobs: Vec<(usize, usize)> = (0..l)
        .flat_map(|class| (0..config.per_class_quota).map(move |slot| (class, slot)))
        .collect();
    let results: Vec<Result<PseudoSample>> = jobs
        .par_iter()
        .map(|&(class, slot)| {
            let mut rng = seed::rng(config.seed, &[class as u64, slot as u64]);
            let initial = init_noise(oracle, ClassLabel(class), config, &mut rng)?;
            maximize_boundary_distance(oracle, initial, config, &mut rng)
        })
        .collect();

    let mut samples = Vec::with_capacity(jobs.len());
    let mut dropped = 0usize;
    for r in results {
        match r {
            Ok(s) => samples.push(s),
            Err(e) if e.is_budget() => dropped += 1,
            Err(e) => return Err(e),
        }
    }
    let mut per_class_counts = vec![0usize; l];
    let mut queries_total = 0u64;
    let mut trace_sums: Vec<(f64, usize)> = Vec::new();
    for s in &samples {
        per_class_counts[s.teacher_class.0] += 1;
        queries_total += s.queries_spent;
        for (i, &v) in s.boundary_distance_trace.iter().enumerate() {
            if trace_sums.len() <= i {
                trace_sums.push((0.0, 0));
            }
            trace_sums[i].0 += v;
            trace_sums[i].1 += 1;
        }
    }
    let mean_trace = trace_sums
        .iter()
        .map(|&(sum, count)| sum / count.max(1) as f64)
        .collect();
    Ok((
        samples,
        GenerationReport {
            per_class_counts,
            mean_trace,
            queries_total,
            dropped,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::LinearTeacher;
    use crate::shape::Shape;

    /// Boundary at x = 0.5: class 0 on the left, class 1 on the right.
    fn half_square() -> LinearTeacher {
        LinearTeacher::new(
            Shape::new(1, 2, 1),
            vec![1.0, 0.0, 3.0, 0.0],
            vec![0.0, -1.0],
        )
        .unwrap()
    }

    fn quick_config() -> GenerationConfig {
        GenerationConfig {
            probes_per_step: 2,
            ascent_step: 0.02,
            outer_iterations: 10,
            mbd_query_limit: 1500,
            per_class_quota: 2,
            robustness: RobustnessConfig {
                gradient_samples: 30,
                ..RobustnessConfig::default()
            },
            ..GenerationConfig::default()
        }
    }

    #[test]
    fn init_noise_hits_a_half_space_quickly() {
        let teacher = half_square();
        let config = quick_config();
        let mut draws = Vec::new();
        for trial in 0..11 {
            let mut rng = seed::rng(trial, &[1]);
            let s = init_noise(&teacher, ClassLabel(0), &config, &mut rng).unwrap();
            assert_eq!(s.teacher_class, ClassLabel(0));
            draws.push(s.queries_spent);
        }
        draws.sort_unstable();
        assert!(draws[5] <= 2, "median draws {} > 2", draws[5]);
    }

    #[test]
    fn init_noise_falls_back_to_the_actual_class() {
        // Class 1 wins everywhere on [0, 1]^2: x + 10 > 2 - x always.
        let teacher = LinearTeacher::new(
            Shape::new(1, 2, 1),
            vec![-1.0, 0.0, 1.0, 0.0],
            vec![2.0, 10.0],
        )
        .unwrap();
        let config = quick_config();
        let mut rng = seed::rng(0, &[2]);
        let s = init_noise(&teacher, ClassLabel(0), &config, &mut rng).unwrap();
        assert_eq!(s.teacher_class, ClassLabel(1));
        assert_eq!(s.queries_spent, 1000);
    }

    #[test]
    fn init_noise_is_deterministic() {
        let teacher = half_square();
        let config = quick_config();
        let mut a = seed::rng(9, &[3]);
        let mut b = seed::rng(9, &[3]);
        let sa = init_noise(&teacher, ClassLabel(1), &config, &mut a).unwrap();
        let sb = init_noise(&teacher, ClassLabel(1), &config, &mut b).unwrap();
        assert_eq!(sa.tensor, sb.tensor);
    }

    #[test]
    fn ascent_tracks_the_analytic_increment() {
        let teacher = half_square();
        let config = quick_config();
        let mut rng = seed::rng(4, &[5]);
        let start = PseudoSample {
            tensor: vec![0.75, 0.5],
            teacher_class: ClassLabel(1),
            boundary_distance_trace: Vec::new(),
            queries_spent: 0,
            partial: false,
        };
        let before = teacher
            .exact_boundary_distance(&start.tensor, ClassLabel(0))
            .unwrap();
        let out = maximize_boundary_distance(&teacher, start, &config, &mut rng).unwrap();
        let after = teacher
            .exact_boundary_distance(&out.tensor, ClassLabel(0))
            .unwrap();
        let increment = 10.0 * config.ascent_step;
        assert!(
            (after - before - increment).abs() < 0.2 * increment,
            "before {before}, after {after}, expected increment {increment}"
        );
        assert_eq!(out.boundary_distance_trace.len(), 10);
        assert!(!out.partial);
    }

    #[test]
    fn zero_step_leaves_the_tensor_unchanged() {
        let teacher = half_square();
        let config = GenerationConfig {
            ascent_step: 0.0,
            outer_iterations: 4,
            ..quick_config()
        };
        let mut rng = seed::rng(6, &[6]);
        let start = PseudoSample {
            tensor: vec![0.8, 0.4],
            teacher_class: ClassLabel(1),
            boundary_distance_trace: Vec::new(),
            queries_spent: 0,
            partial: false,
        };
        let out = maximize_boundary_distance(&teacher, start.clone(), &config, &mut rng).unwrap();
        assert_eq!(out.tensor, start.tensor);
        let t0 = out.boundary_distance_trace[0];
        for v in &out.boundary_distance_trace {
            assert!(
                (v - t0).abs() < 1e-3,
                "trace moved: {:?}",
                out.boundary_distance_trace
            );
        }
    }

    #[test]
    fn clip_saturation_plateaus_without_violations() {
        let teacher = half_square();
        let config = GenerationConfig {
            ascent_step: 0.5,
            outer_iterations: 8,
            ..quick_config()
        };
        let mut rng = seed::rng(7, &[7]);
        let start = PseudoSample {
            tensor: vec![0.95, 0.5],
            teacher_class: ClassLabel(1),
            boundary_distance_trace: Vec::new(),
            queries_spent: 0,
            partial: false,
        };
        let out = maximize_boundary_distance(&teacher, start, &config, &mut rng).unwrap();
        assert_eq!(teacher.decide(&out.tensor).unwrap(), ClassLabel(1));
        for &v in &out.tensor {
            assert!((0.0..=1.0).contains(&v));
        }
        // The last trace entries flatten out once the tensor saturates.
        let n = out.boundary_distance_trace.len();
        let tail = &out.boundary_distance_trace[n - 3..];
        assert!((tail[2] - tail[0]).abs() < 0.05, "tail: {tail:?}");
    }

    #[test]
    fn accepted_steps_never_shrink_the_trace_much() {
        let teacher = half_square();
        let config = GenerationConfig {
            ascent_step: 0.05,
            outer_iterations: 8,
            ..quick_config()
        };
        let mut rng = seed::rng(8, &[8]);
        let start = PseudoSample {
            tensor: vec![0.7, 0.3],
            teacher_class: ClassLabel(1),
            boundary_distance_trace: Vec::new(),
            queries_spent: 0,
            partial: false,
        };
        let out = maximize_boundary_distance(&teacher, start, &config, &mut rng).unwrap();
        let trace = &out.boundary_distance_trace;
        for w in trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-3, "trace decreased: {trace:?}");
        }
    }

    #[test]
    fn generation_report_counts_add_up() {
        let teacher = half_square();
        let config = GenerationConfig {
            outer_iterations: 3,
            per_class_quota: 3,
            ..quick_config()
        };
        let (samples, report) = generate_pseudo_set(&teacher, &config).unwrap();
        assert_eq!(samples.len(), 6);
        assert_eq!(report.per_class_counts.iter().sum::<usize>(), 6);
        assert_eq!(report.dropped, 0);
        assert!(report.queries_total > 0);
        assert_eq!(report.mean_trace.len(), 3);
        for s in &samples {
            assert_eq!(teacher.decide(&s.tensor).unwrap(), s.teacher_class);
        }
    }
}
