//! Python bindings: teachers, robustness estimation, soft-label
//! construction, pseudo-sample generation and small-scale distillation.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use boundary_kd::data::{
    generate_synthetic, load_idx, rendered_digits, SyntheticKind, SyntheticSpec,
};
use boundary_kd::geometry::{
    binary_search_boundary, robustness_vector, ReferenceSet, RobustnessConfig, RobustnessStrategy,
    SearchMode,
};
use std::path::Path;

use boundary_kd::labels::{construct_activations, soften};
use boundary_kd::nn::{
    evaluate, load_checkpoint, save_checkpoint, train_student, DistillConfig, Network, NetworkSpec,
    OptimizerSpec,
};
use boundary_kd::oracle::{
    AnalyticTeacher, CentroidTeacher, ClassLabel, DecisionOracle, LinearTeacher, NetworkOracle,
};
use boundary_kd::synth::{init_noise, maximize_boundary_distance, GenerationConfig};
use boundary_kd::{seed, Shape};

fn py_err(e: boundary_kd::Error) -> PyErr {
    if e.is_budget() {
        PyRuntimeError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn shape_from(t: (usize, usize, usize)) -> Shape {
    Shape::new(t.0, t.1, t.2)
}

enum TeacherImpl {
    Analytic(AnalyticTeacher),
    Network(Box<NetworkOracle>),
}

impl TeacherImpl {
    fn oracle(&self) -> &dyn DecisionOracle {
        match self {
            TeacherImpl::Analytic(t) => t,
            TeacherImpl::Network(t) => t.as_ref(),
        }
    }
}

/// A hard-label teacher: analytic (linear/centroid) or a trained network.
#[pyclass]
pub struct Teacher {
    inner: TeacherImpl,
}

#[pymethods]
impl Teacher {
    /// Linear teacher: `classify(x) = argmax_k w_k . x + b_k`.
    #[staticmethod]
    fn linear(shape: (usize, usize, usize), weights: Vec<f64>, biases: Vec<f64>) -> PyResult<Self> {
        let t = LinearTeacher::new(shape_from(shape), weights, biases).map_err(py_err)?;
        Ok(Teacher {
            inner: TeacherImpl::Analytic(AnalyticTeacher::Linear(t)),
        })
    }

    /// Centroid teacher: `classify(x) = argmin_k ||x - c_k||`.
    #[staticmethod]
    fn centroid(shape: (usize, usize, usize), centroids: Vec<f64>) -> PyResult<Self> {
        let t = CentroidTeacher::new(shape_from(shape), centroids).map_err(py_err)?;
        Ok(Teacher {
            inner: TeacherImpl::Analytic(AnalyticTeacher::Centroid(t)),
        })
    }

    /// Analytic teacher from its JSON document.
    #[staticmethod]
    fn from_json(path: &str) -> PyResult<Self> {
        let t = AnalyticTeacher::load_json(Path::new(path)).map_err(py_err)?;
        Ok(Teacher {
            inner: TeacherImpl::Analytic(t),
        })
    }

    /// Network checkpoint (`<base>.json` + `<base>.bin`) as a hard-label
    /// oracle.
    #[staticmethod]
    fn from_checkpoint(base: &str) -> PyResult<Self> {
        let (network, _) = load_checkpoint(Path::new(base)).map_err(py_err)?;
        Ok(Teacher {
            inner: TeacherImpl::Network(Box::new(NetworkOracle::new(network))),
        })
    }

    fn classify(&self, sample: Vec<f32>) -> PyResult<usize> {
        Ok(self.inner.oracle().classify(&sample).map_err(py_err)?.0)
    }

    fn class_count(&self) -> usize {
        self.inner.oracle().class_count()
    }

    fn input_shape(&self) -> (usize, usize, usize) {
        let s = self.inner.oracle().input_shape();
        (s.channels, s.width, s.height)
    }

    fn query_count(&self) -> u64 {
        self.inner.oracle().query_count()
    }

    #[pyo3(signature = (budget=None))]
    fn reset_budget(&self, budget: Option<u64>) {
        self.inner.oracle().reset_budget(budget);
    }

    /// Exact minimal distance to the target region (analytic teachers only).
    fn exact_boundary_distance(&self, sample: Vec<f32>, target: usize) -> PyResult<f64> {
        match &self.inner {
            TeacherImpl::Analytic(t) => t
                .exact_boundary_distance(&sample, ClassLabel(target))
                .map_err(py_err),
            TeacherImpl::Network(_) => Err(PyValueError::new_err(
                "exact distances exist only for analytic teachers",
            )),
        }
    }

    fn save_json(&self, path: &str) -> PyResult<()> {
        match &self.inner {
            TeacherImpl::Analytic(t) => t.save_json(Path::new(path)).map_err(py_err),
            TeacherImpl::Network(_) => Err(PyValueError::new_err(
                "only analytic teachers serialize to JSON",
            )),
        }
    }
}

fn strategy_from(name: &str) -> PyResult<RobustnessStrategy> {
    match name {
        "sd" => Ok(RobustnessStrategy::SampleDistance),
        "bd" => Ok(RobustnessStrategy::BoundaryDistance),
        "mbd" => Ok(RobustnessStrategy::MinimalBoundaryDistance),
        other => Err(PyValueError::new_err(format!(
            "unknown strategy {other:?}; use \"sd\", \"bd\" or \"mbd\""
        ))),
    }
}

/// Per-class boundary distances of one sample.
///
/// `references` is one list of samples per class. Returns a dict with
/// `own_class`, `distances` (None at the own class) and `queries`.
#[pyfunction]
#[pyo3(signature = (teacher, sample, label, references, strategy="mbd", seed=0,
                     query_limit=5000, gradient_samples=64, descent_step=0.2,
                     epsilon=1e-5, reference_per_class=100))]
#[allow(clippy::too_many_arguments)]
fn robustness<'py>(
    py: Python<'py>,
    teacher: &Teacher,
    sample: Vec<f32>,
    label: usize,
    references: Vec<Vec<Vec<f32>>>,
    strategy: &str,
    seed: u64,
    query_limit: u64,
    gradient_samples: usize,
    descent_step: f64,
    epsilon: f64,
    reference_per_class: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let oracle = teacher.inner.oracle();
    let mut refs = ReferenceSet::new(oracle.input_shape(), oracle.class_count());
    for (class, batch) in references.into_iter().enumerate() {
        for r in batch {
            refs.add(ClassLabel(class), r).map_err(py_err)?;
        }
    }
    let config = RobustnessConfig {
        strategy: strategy_from(strategy)?,
        reference_per_class,
        binary_search_epsilon: epsilon,
        gradient_samples,
        descent_step,
        query_limit_per_direction: query_limit,
        ..RobustnessConfig::default()
    };
    let record = robustness_vector(oracle, &sample, ClassLabel(label), &refs, &config, seed, 0)
        .map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("own_class", record.own_class.0)?;
    out.set_item("distances", record.distances.clone())?;
    out.set_item("queries", record.queries_spent)?;
    Ok(out)
}

/// Boundary point between `x0` and a probe already classified as `target`.
#[pyfunction]
#[pyo3(signature = (teacher, x0, probe, target, epsilon=1e-5))]
fn boundary_point(
    teacher: &Teacher,
    x0: Vec<f32>,
    probe: Vec<f32>,
    target: usize,
    epsilon: f64,
) -> PyResult<(Vec<f32>, usize, f64)> {
    let point = binary_search_boundary(
        teacher.inner.oracle(),
        &x0,
        &probe,
        SearchMode::Targeted(ClassLabel(target)),
        epsilon,
    )
    .map_err(py_err)?;
    Ok((point.point, point.inside_class.0, point.distance_to_origin))
}

/// Pre-softmax activations from per-class distances (None at the own class).
#[pyfunction]
fn activations_from_distances(own_class: usize, distances: Vec<Option<f64>>) -> PyResult<Vec<f64>> {
    let record = boundary_kd::geometry::RobustnessRecord {
        sample_index: 0,
        own_class: ClassLabel(own_class),
        distances,
        queries_spent: 0,
    };
    construct_activations(&record).map_err(py_err)
}

/// Temperature softmax of activations: `(probabilities, top1)`.
#[pyfunction]
fn soft_label(activations: Vec<f64>, temperature: f64) -> PyResult<(Vec<f32>, usize)> {
    let label = soften(&activations, temperature).map_err(py_err)?;
    Ok((label.probabilities, label.top1.0))
}

/// One zero-shot pseudo sample pushed away from the teacher's boundary.
/// Returns `(tensor, teacher_class, trace, queries)`.
#[pyfunction]
#[pyo3(signature = (teacher, class, iterations=40, step=0.5, probes=2,
                     mbd_query_limit=2000, gradient_samples=24, seed=0))]
#[allow(clippy::too_many_arguments)]
fn generate_pseudo_sample(
    teacher: &Teacher,
    class: usize,
    iterations: usize,
    step: f64,
    probes: usize,
    mbd_query_limit: u64,
    gradient_samples: usize,
    seed: u64,
) -> PyResult<(Vec<f32>, usize, Vec<f64>, u64)> {
    let config = GenerationConfig {
        probes_per_step: probes,
        ascent_step: step,
        outer_iterations: iterations,
        mbd_query_limit,
        robustness: RobustnessConfig {
            gradient_samples,
            ..RobustnessConfig::default()
        },
        seed,
        ..GenerationConfig::default()
    };
    let mut rng = seed::rng(seed, &[class as u64]);
    let oracle = teacher.inner.oracle();
    let initial = init_noise(oracle, ClassLabel(class), &config, &mut rng).map_err(py_err)?;
    let sample = maximize_boundary_distance(oracle, initial, &config, &mut rng).map_err(py_err)?;
    Ok((
        sample.tensor,
        sample.teacher_class.0,
        sample.boundary_distance_trace,
        sample.queries_spent,
    ))
}

/// Gaussian-blob task: `(samples, labels, teacher)`.
#[pyfunction]
#[pyo3(signature = (dimensions, class_count, per_class, dispersion=0.05, seed=0, slot_offset=0))]
fn blobs_task(
    dimensions: (usize, usize, usize),
    class_count: usize,
    per_class: usize,
    dispersion: f64,
    seed: u64,
    slot_offset: usize,
) -> PyResult<(Vec<Vec<f32>>, Vec<usize>, Teacher)> {
    let spec = SyntheticSpec {
        kind: SyntheticKind::GaussianBlobs,
        dimensions: shape_from(dimensions),
        class_count,
        per_class,
        dispersion,
        seed,
        slot_offset,
    };
    let task = generate_synthetic(&spec).map_err(py_err)?;
    let samples = (0..task.dataset.len())
        .map(|i| task.dataset.image(i).to_vec())
        .collect();
    let labels = task.dataset.labels().iter().map(|l| l.0).collect();
    Ok((
        samples,
        labels,
        Teacher {
            inner: TeacherImpl::Analytic(task.teacher),
        },
    ))
}

/// Rendered-digit dataset: `(images, labels, shape)`.
#[pyfunction]
fn digits_dataset(
    per_class: usize,
    seed: u64,
) -> PyResult<(Vec<Vec<f32>>, Vec<usize>, (usize, usize, usize))> {
    let ds = rendered_digits(per_class, seed, "py");
    let images = (0..ds.len()).map(|i| ds.image(i).to_vec()).collect();
    let labels = ds.labels().iter().map(|l| l.0).collect();
    Ok((
        images,
        labels,
        (ds.shape.channels, ds.shape.width, ds.shape.height),
    ))
}

/// IDX image/label pair (gzip sniffed): `(images, labels, shape)`.
#[pyfunction]
fn load_idx_pair(
    images_path: &str,
    labels_path: &str,
) -> PyResult<(Vec<Vec<f32>>, Vec<usize>, (usize, usize, usize))> {
    let ds = load_idx(Path::new(images_path), Path::new(labels_path)).map_err(py_err)?;
    let images = (0..ds.len()).map(|i| ds.image(i).to_vec()).collect();
    let labels = ds.labels().iter().map(|l| l.0).collect();
    Ok((
        images,
        labels,
        (ds.shape.channels, ds.shape.width, ds.shape.height),
    ))
}

/// A trained student network.
#[pyclass]
pub struct Student {
    network: Network<f32>,
}

#[pymethods]
impl Student {
    fn predict(&self, samples: Vec<Vec<f32>>) -> PyResult<Vec<usize>> {
        let mut out = Vec::with_capacity(samples.len());
        for s in &samples {
            let acts = self.network.forward_eval(s, 1).map_err(py_err)?;
            let row: Vec<f64> = acts.row(0).iter().map(|&v| v as f64).collect();
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            out.push(best);
        }
        Ok(out)
    }

    fn accuracy(&self, samples: Vec<Vec<f32>>, labels: Vec<usize>) -> PyResult<f64> {
        let flat: Vec<f32> = samples.iter().flatten().copied().collect();
        let class_labels: Vec<ClassLabel> = labels.into_iter().map(ClassLabel).collect();
        Ok(evaluate(&self.network, &flat, &class_labels)
            .map_err(py_err)?
            .accuracy)
    }

    fn save(&self, base: &str) -> PyResult<()> {
        save_checkpoint(&self.network, 0, Path::new(base)).map_err(py_err)
    }
}

/// Distill a student on (sample, soft label) pairs; hard labels are the
/// soft labels' argmax.
#[pyfunction]
#[pyo3(signature = (samples, probabilities, shape, class_count, preset="mlp-tiny",
                     temperature=0.3, lambda_=1.0, lr=5e-3, epochs=30,
                     batch_size=64, seed=0))]
#[allow(clippy::too_many_arguments)]
fn distill(
    samples: Vec<Vec<f32>>,
    probabilities: Vec<Vec<f32>>,
    shape: (usize, usize, usize),
    class_count: usize,
    preset: &str,
    temperature: f64,
    lambda_: f64,
    lr: f64,
    epochs: usize,
    batch_size: usize,
    seed: u64,
) -> PyResult<Student> {
    use boundary_kd::labels::{
        SoftLabel, TransferEntry, TransferMetadata, TransferSet, TransferSource,
    };
    if samples.len() != probabilities.len() {
        return Err(PyValueError::new_err(
            "samples and probabilities differ in length",
        ));
    }
    let entries = samples
        .into_iter()
        .zip(probabilities)
        .map(|(pixels, probs)| TransferEntry {
            pixels,
            label: SoftLabel::from_probabilities(probs),
        })
        .collect();
    let set = TransferSet {
        shape: shape_from(shape),
        class_count,
        entries,
        metadata: TransferMetadata {
            source: TransferSource::Real,
            strategy: None,
            temperature,
            seed,
            oracle: "python".into(),
            params: serde_json::Map::new(),
        },
    };
    set.validate().map_err(py_err)?;
    let spec = NetworkSpec::preset(preset, shape_from(shape), class_count).map_err(py_err)?;
    let mut network = Network::<f32>::init(spec, seed).map_err(py_err)?;
    let config = DistillConfig {
        temperature,
        lambda: lambda_,
        optimizer: OptimizerSpec::adam(lr),
        epochs,
        batch_size,
        seed,
        ..DistillConfig::default()
    };
    train_student(&mut network, &set, &config).map_err(py_err)?;
    Ok(Student { network })
}

#[pymodule]
fn boundary_kd_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Teacher>()?;
    m.add_class::<Student>()?;
    m.add_function(wrap_pyfunction!(robustness, m)?)?;
    m.add_function(wrap_pyfunction!(boundary_point, m)?)?;
    m.add_function(wrap_pyfunction!(activations_from_distances, m)?)?;
    m.add_function(wrap_pyfunction!(soft_label, m)?)?;
    m.add_function(wrap_pyfunction!(generate_pseudo_sample, m)?)?;
    m.add_function(wrap_pyfunction!(blobs_task, m)?)?;
    m.add_function(wrap_pyfunction!(digits_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(load_idx_pair, m)?)?;
    m.add_function(wrap_pyfunction!(distill, m)?)?;
    Ok(())
}
