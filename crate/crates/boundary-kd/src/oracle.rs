//! Decision-based black-box teacher interface.
//!
//! A [`DecisionOracle`] answers one question only: the top-1 class of a
//! sample. Scores, activations and parameters are structurally unreachable
//! through this interface. Every classify call is metered; an optional budget
//! turns further queries into errors instead of silent answers.
//!
//! [`LinearTeacher`] and [`CentroidTeacher`] are analytic oracles whose exact
//! boundary distances are available in closed form, used to verify the
//! query-based estimators against ground truth.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Network;
use crate::shape::Shape;

/// Class index in `[0, L)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassLabel(pub usize);

impl std::fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

const UNLIMITED: u64 = u64::MAX;

/// Atomic query counter with an optional hard budget.
///
/// The counter is monotone: it only ever increases, and `set_budget` never
/// touches it. A charge that would exceed the budget fails without
/// incrementing anything, so exactly `budget` queries can succeed.
#[derive(Debug)]
pub struct QueryMeter {
    count: AtomicU64,
    budget: AtomicU64,
}

impl QueryMeter {
    pub fn new(budget: Option<u64>) -> Self {
        QueryMeter {
            count: AtomicU64::new(0),
            budget: AtomicU64::new(budget.unwrap_or(UNLIMITED)),
        }
    }

    pub fn unlimited() -> Self {
        Self::new(None)
    }

    /// Reserve `n` queries, all or nothing.
    pub fn charge(&self, n: u64) -> Result<()> {
        let budget = self.budget.load(Ordering::Acquire);
        let result = self
            .count
            .fetch_update(Ordering::AcqRel, Ordering::Acquire, |c| {
                if budget != UNLIMITED && c.saturating_add(n) > budget {
                    None
                } else {
                    Some(c + n)
                }
            });
        match result {
            Ok(_) => Ok(()),
            Err(spent) => Err(Error::BudgetExhausted { budget, spent }),
        }
    }

    pub fn count(&self) -> u64 {
        self.count.load(Ordering::Acquire)
    }

    pub fn budget(&self) -> Option<u64> {
        match self.budget.load(Ordering::Acquire) {
            UNLIMITED => None,
            b => Some(b),
        }
    }

    pub fn set_budget(&self, budget: Option<u64>) {
        self.budget
            .store(budget.unwrap_or(UNLIMITED), Ordering::Release);
    }
}

/// Hard-label classifier: the only channel to the teacher.
pub trait DecisionOracle: Send + Sync {
    fn class_count(&self) -> usize;

    fn input_shape(&self) -> Shape;

    fn meter(&self) -> &QueryMeter;

    /// Decision rule without query accounting. Implementation detail of
    /// oracles and evaluation plumbing; estimation code must go through
    /// [`DecisionOracle::classify`].
    fn decide(&self, sample: &[f32]) -> Result<ClassLabel>;

    /// Batched decision rule, `samples` holding `n` concatenated samples.
    fn decide_batch(&self, samples: &[f32], n: usize) -> Result<Vec<ClassLabel>> {
        let d = self.input_shape().len();
        expect_batch_len(samples, n, d, self.input_shape())?;
        samples.chunks(d).map(|s| self.decide(s)).collect()
    }

    /// Top-1 class of `sample`; spends exactly one query.
    fn classify(&self, sample: &[f32]) -> Result<ClassLabel> {
        expect_len(sample, self.input_shape())?;
        self.meter().charge(1)?;
        self.decide(sample)
    }

    /// Classify `n` concatenated samples; spends exactly `n` queries,
    /// all or nothing.
    fn classify_batch(&self, samples: &[f32], n: usize) -> Result<Vec<ClassLabel>> {
        let d = self.input_shape().len();
        expect_batch_len(samples, n, d, self.input_shape())?;
        self.meter().charge(n as u64)?;
        self.decide_batch(samples, n)
    }

    fn query_count(&self) -> u64 {
        self.meter().count()
    }

    /// Reconfigure the budget. The query counter is never reset.
    fn reset_budget(&self, budget: Option<u64>) {
        self.meter().set_budget(budget);
    }
}

fn expect_len(sample: &[f32], shape: Shape) -> Result<()> {
    if sample.len() != shape.len() {
        return Err(Error::ShapeMismatch {
            got: sample.len(),
            expected: shape.len(),
            shape,
        });
    }
    Ok(())
}

fn expect_batch_len(samples: &[f32], n: usize, d: usize, shape: Shape) -> Result<()> {
    if samples.len() != n * d {
        return Err(Error::ShapeMismatch {
            got: samples.len(),
            expected: n * d,
            shape,
        });
    }
    Ok(())
}

/// Argmax with ties broken by the lowest class index.
pub fn argmax_lowest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = k;
        }
    }
    best
}

fn dot_f32(w: &[f64], x: &[f32]) -> f64 {
    w.iter().zip(x).map(|(&wi, &xi)| wi * xi as f64).sum()
}

/// Shared linear-decision machinery: `classify(x) = argmax_k w_k . x + b_k`.
#[derive(Debug)]
struct LinearForm {
    shape: Shape,
    class_count: usize,
    /// L x D, row-major.
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl LinearForm {
    fn dim(&self) -> usize {
        self.shape.len()
    }

    fn scores_f32(&self, x: &[f32]) -> Vec<f64> {
        let d = self.dim();
        (0..self.class_count)
            .map(|k| dot_f32(&self.weights[k * d..(k + 1) * d], x) + self.biases[k])
            .collect()
    }

    fn scores_f64(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..self.class_count)
            .map(|k| {
                self.weights[k * d..(k + 1) * d]
                    .iter()
                    .zip(x)
                    .map(|(&w, &v)| w * v)
                    .sum::<f64>()
                    + self.biases[k]
            })
            .collect()
    }

    fn decide(&self, x: &[f32]) -> ClassLabel {
        ClassLabel(argmax_lowest(&self.scores_f32(x)))
    }

    /// Exact minimal L2 distance from `x` to the region classified as
    /// `target`, via the smallest feasible pairwise hyperplane projection.
    fn exact_boundary_distance(&self, x: &[f32], target: ClassLabel) -> Result<f64> {
        let d = self.dim();
        let n = target.0;
        if n >= self.class_count {
            return Err(Error::ClassOutOfRange {
                class: n,
                count: self.class_count,
            });
        }
        if self.decide(x) == target {
            return Err(Error::TargetIsOwnClass(target));
        }
        let xd: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let wn = &self.weights[n * d..(n + 1) * d];
        let mut best: Option<f64> = None;
        let mut grad = vec![0.0f64; d];
        let mut proj = vec![0.0f64; d];
        for k in 0..self.class_count {
            if k == n {
                continue;
            }
            let wk = &self.weights[k * d..(k + 1) * d];
            let mut norm_sq = 0.0;
            for i in 0..d {
                grad[i] = wn[i] - wk[i];
                norm_sq += grad[i] * grad[i];
            }
            if norm_sq == 0.0 {
                continue;
            }
            let h: f64 = grad.iter().zip(&xd).map(|(&g, &v)| g * v).sum::<f64>()
                + (self.biases[n] - self.biases[k]);
            let dist = h.abs() / norm_sq.sqrt();
            if let Some(b) = best {
                if dist >= b {
                    continue;
                }
            }
            let step = -h / norm_sq;
            for i in 0..d {
                proj[i] = xd[i] + step * grad[i];
            }
            let scores = self.scores_f64(&proj);
            let scale = scores.iter().fold(1.0f64, |m, s| m.max(s.abs()));
            let tol = 1e-9 * scale;
            let feasible = scores.iter().all(|&s| scores[n] >= s - tol);
            if feasible {
                best = Some(dist);
            }
        }
        best.ok_or(Error::NoFeasibleProjection)
    }
}

/// Analytic teacher: `classify(x) = argmax_k w_k . x + b_k`.
///
/// The exact distance from any point to any class region is available in
/// closed form, which makes it the ground-truth oracle for boundary-distance
/// estimators.
#[derive(Debug)]
pub struct LinearTeacher {
    form: LinearForm,
    meter: QueryMeter,
}

impl LinearTeacher {
    /// `weights` is L x D row-major with `D = shape.len()`.
    pub fn new(shape: Shape, weights: Vec<f64>, biases: Vec<f64>) -> Result<Self> {
        let class_count = biases.len();
        if class_count < 2 {
            return Err(Error::InvalidConfig(
                "a teacher needs at least 2 classes".into(),
            ));
        }
        if weights.len() != class_count * shape.len() {
            return Err(Error::CountMismatch {
                left: "weight values",
                left_count: weights.len(),
                right: "classes x dims",
                right_count: class_count * shape.len(),
            });
        }
        Ok(LinearTeacher {
            form: LinearForm {
                shape,
                class_count,
                weights,
                biases,
            },
            meter: QueryMeter::unlimited(),
        })
    }

    /// Exact minimal L2 distance from `sample` to the `target` region.
    /// Does not consume queries: this is the verification side, not the
    /// black-box channel.
    pub fn exact_boundary_distance(&self, sample: &[f32], target: ClassLabel) -> Result<f64> {
        expect_len(sample, self.form.shape)?;
        self.form.exact_boundary_distance(sample, target)
    }

    pub fn weights(&self) -> &[f64] {
        &self.form.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.form.biases
    }
}

impl DecisionOracle for LinearTeacher {
    fn class_count(&self) -> usize {
        self.form.class_count
    }
    fn input_shape(&self) -> Shape {
        self.form.shape
    }
    fn meter(&self) -> &QueryMeter {
        &self.meter
    }
    fn decide(&self, sample: &[f32]) -> Result<ClassLabel> {
        expect_len(sample, self.form.shape)?;
        Ok(self.form.decide(sample))
    }
}

/// Analytic teacher: `classify(x) = argmin_k ||x - c_k||`.
///
/// Internally kept in the equivalent linear form `argmax 2 c_k . x - ||c_k||^2`
/// so decisions and exact distances share one consistent geometry.
#[derive(Debug)]
pub struct CentroidTeacher {
    centroids: Vec<f64>,
    form: LinearForm,
    meter: QueryMeter,
}

impl CentroidTeacher {
    /// `centroids` is L x D row-major.
    pub fn new(shape: Shape, centroids: Vec<f64>) -> Result<Self> {
        let d = shape.len();
        if centroids.is_empty() || centroids.len() % d != 0 {
            return Err(Error::CountMismatch {
                left: "centroid values",
                left_count: centroids.len(),
                right: "multiple of dims",
                right_count: d,
            });
        }
        let class_count = centroids.len() / d;
        if class_count < 2 {
            return Err(Error::InvalidConfig(
                "a teacher needs at least 2 classes".into(),
            ));
        }
        let mut weights = Vec::with_capacity(centroids.len());
        let mut biases = Vec::with_capacity(class_count);
        for k in 0..class_count {
            let c = &centroids[k * d..(k + 1) * d];
            weights.extend(c.iter().map(|&v| 2.0 * v));
            biases.push(-c.iter().map(|&v| v * v).sum::<f64>());
        }
        Ok(CentroidTeacher {
            centroids,
            form: LinearForm {
                shape,
                class_count,
                weights,
                biases,
            },
            meter: QueryMeter::unlimited(),
        })
    }

    /// Exact minimal L2 distance from `sample` to the `target` cell
    /// (perpendicular-bisector geometry). Does not consume queries.
    pub fn exact_boundary_distance(&self, sample: &[f32], target: ClassLabel) -> Result<f64> {
        expect_len(sample, self.form.shape)?;
        self.form.exact_boundary_distance(sample, target)
    }

    pub fn centroids(&self) -> &[f64] {
        &self.centroids
    }
}

impl DecisionOracle for CentroidTeacher {
    fn class_count(&self) -> usize {
        self.form.class_count
    }
    fn input_shape(&self) -> Shape {
        self.form.shape
    }
    fn meter(&self) -> &QueryMeter {
        &self.meter
    }
    fn decide(&self, sample: &[f32]) -> Result<ClassLabel> {
        expect_len(sample, self.form.shape)?;
        Ok(self.form.decide(sample))
    }
}

/// Serialized form of an analytic teacher.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum AnalyticTeacherSpec {
    Linear {
        shape: Shape,
        weights: Vec<f64>,
        biases: Vec<f64>,
    },
    Centroid {
        shape: Shape,
        weights: Vec<f64>,
    },
}

/// Either analytic teacher behind one concrete type.
#[derive(Debug)]
pub enum AnalyticTeacher {
    Linear(LinearTeacher),
    Centroid(CentroidTeacher),
}

impl AnalyticTeacher {
    pub fn from_spec(spec: AnalyticTeacherSpec) -> Result<Self> {
        match spec {
            AnalyticTeacherSpec::Linear {
                shape,
                weights,
                biases,
            } => Ok(AnalyticTeacher::Linear(LinearTeacher::new(
                shape, weights, biases,
            )?)),
            AnalyticTeacherSpec::Centroid { shape, weights } => Ok(AnalyticTeacher::Centroid(
                CentroidTeacher::new(shape, weights)?,
            )),
        }
    }

    pub fn to_spec(&self) -> AnalyticTeacherSpec {
        match self {
            AnalyticTeacher::Linear(t) => AnalyticTeacherSpec::Linear {
                shape: t.form.shape,
                weights: t.form.weights.clone(),
                biases: t.form.biases.clone(),
            },
            AnalyticTeacher::Centroid(t) => AnalyticTeacherSpec::Centroid {
                shape: t.form.shape,
                weights: t.centroids.clone(),
            },
        }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(file, &self.to_spec())?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let spec: AnalyticTeacherSpec = serde_json::from_reader(file)?;
        Self::from_spec(spec)
    }

    /// Exact distance from `sample` to the `target` region.
    pub fn exact_boundary_distance(&self, sample: &[f32], target: ClassLabel) -> Result<f64> {
        match self {
            AnalyticTeacher::Linear(t) => t.exact_boundary_distance(sample, target),
            AnalyticTeacher::Centroid(t) => t.exact_boundary_distance(sample, target),
        }
    }

    fn inner(&self) -> &dyn DecisionOracle {
        match self {
            AnalyticTeacher::Linear(t) => t,
            AnalyticTeacher::Centroid(t) => t,
        }
    }
}

impl DecisionOracle for AnalyticTeacher {
    fn class_count(&self) -> usize {
        self.inner().class_count()
    }
    fn input_shape(&self) -> Shape {
        self.inner().input_shape()
    }
    fn meter(&self) -> &QueryMeter {
        self.inner().meter()
    }
    fn decide(&self, sample: &[f32]) -> Result<ClassLabel> {
        self.inner().decide(sample)
    }
    fn decide_batch(&self, samples: &[f32], n: usize) -> Result<Vec<ClassLabel>> {
        self.inner().decide_batch(samples, n)
    }
}

/// A trained network reduced to its hard-label decisions.
///
/// `classify(x) = argmax` of the pre-softmax activations, ties to the lowest
/// index. The activations themselves never cross this interface.
pub struct NetworkOracle {
    network: Network<f32>,
    meter: QueryMeter,
}

impl NetworkOracle {
    pub fn new(network: Network<f32>) -> Self {
        NetworkOracle {
            network,
            meter: QueryMeter::unlimited(),
        }
    }

    pub fn with_budget(network: Network<f32>, budget: Option<u64>) -> Self {
        NetworkOracle {
            network,
            meter: QueryMeter::new(budget),
        }
    }
}

impl DecisionOracle for NetworkOracle {
    fn class_count(&self) -> usize {
        self.network.spec().class_count
    }

    fn input_shape(&self) -> Shape {
        self.network.spec().input_shape
    }

    fn meter(&self) -> &QueryMeter {
        &self.meter
    }

    fn decide(&self, sample: &[f32]) -> Result<ClassLabel> {
        let acts = self.network.forward_eval(sample, 1)?;
        let row: Vec<f64> = acts.row(0).iter().map(|&v| v as f64).collect();
        Ok(ClassLabel(argmax_lowest(&row)))
    }

    fn decide_batch(&self, samples: &[f32], n: usize) -> Result<Vec<ClassLabel>> {
        expect_batch_len(samples, n, self.input_shape().len(), self.input_shape())?;
        if n == 0 {
            return Ok(Vec::new());
        }
        let acts = self.network.forward_eval(samples, n)?;
        Ok(acts
            .rows()
            .into_iter()
            .map(|row| {
                let scores: Vec<f64> = row.iter().map(|&v| v as f64).collect();
                ClassLabel(argmax_lowest(&scores))
            })
            .collect())
    }
}
