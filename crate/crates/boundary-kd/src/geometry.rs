//! Sample robustness: distances from a sample to the teacher's decision
//! boundaries.
//!
//! Three strategies, each refining the previous one:
//! - SD: minimal distance to reference samples of the other class; no queries.
//! - BD: bisect along each reference direction to the decision boundary.
//! - MBD: walk the boundary point toward the sample with zeroth-order
//!   gradient steps until the distance stops improving or the per-direction
//!   query limit runs out.

use std::cell::Cell;
use std::io::{BufRead, Write};

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{ClassLabel, DecisionOracle};
use crate::seed;
use crate::shape::Shape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RobustnessStrategy {
    #[serde(rename = "sd")]
    SampleDistance,
    #[serde(rename = "bd")]
    BoundaryDistance,
    #[serde(rename = "mbd")]
    MinimalBoundaryDistance,
}

impl std::fmt::Display for RobustnessStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RobustnessStrategy::SampleDistance => "sd",
            RobustnessStrategy::BoundaryDistance => "bd",
            RobustnessStrategy::MinimalBoundaryDistance => "mbd",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobustnessConfig {
    pub strategy: RobustnessStrategy,
    /// References used per off-class (the batch size S).
    pub reference_per_class: usize,
    /// Bracket width at which bisection stops.
    pub binary_search_epsilon: f64,
    /// Gaussian probes per gradient estimate (Q).
    pub gradient_samples: usize,
    /// Probe radius for gradient estimation; must exceed the bisection
    /// bracket so probes straddle the boundary.
    pub gradient_probe_radius: f64,
    /// Step size along the estimated boundary normal.
    pub descent_step: f64,
    /// Hard cap on queries spent per (class, reference) direction.
    pub query_limit_per_direction: u64,
    /// The descent stops once the best distance has failed to improve by
    /// this much for three iterations in a row.
    pub improvement_tolerance: f64,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        RobustnessConfig {
            strategy: RobustnessStrategy::MinimalBoundaryDistance,
            reference_per_class: 100,
            binary_search_epsilon: 1e-5,
            gradient_samples: 200,
            gradient_probe_radius: 1e-2,
            descent_step: 0.2,
            query_limit_per_direction: 5000,
            improvement_tolerance: 1e-4,
        }
    }
}

impl RobustnessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.binary_search_epsilon <= 0.0 {
            return Err(Error::InvalidConfig(
                "binary_search_epsilon must be positive".into(),
            ));
        }
        if self.gradient_samples == 0 {
            return Err(Error::InvalidConfig("gradient_samples must be >= 1".into()));
        }
        if self.gradient_probe_radius <= 0.0 || self.descent_step <= 0.0 {
            return Err(Error::InvalidConfig(
                "gradient_probe_radius and descent_step must be positive".into(),
            ));
        }
        if self.query_limit_per_direction == 0 {
            return Err(Error::InvalidConfig(
                "query_limit_per_direction must be >= 1".into(),
            ));
        }
        if self.improvement_tolerance <= 0.0 {
            return Err(Error::InvalidConfig(
                "improvement_tolerance must be positive".into(),
            ));
        }
        if self.reference_per_class == 0 {
            return Err(Error::InvalidConfig(
                "reference_per_class must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Per-sample vector of boundary distances; the own-class entry is absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRecord {
    pub sample_index: usize,
    pub own_class: ClassLabel,
    pub distances: Vec<Option<f64>>,
    pub queries_spent: u64,
}

impl RobustnessRecord {
    pub fn class_count(&self) -> usize {
        self.distances.len()
    }

    pub fn distance(&self, class: ClassLabel) -> Option<f64> {
        self.distances.get(class.0).copied().flatten()
    }

    /// Off-class distances clamped below at `floor`, keeping the record
    /// otherwise intact. Label construction requires strictly positive
    /// distances.
    pub fn clamped(&self, floor: f64) -> RobustnessRecord {
        let mut out = self.clone();
        for d in out.distances.iter_mut().flatten() {
            if *d < floor {
                *d = floor;
            }
        }
        out
    }
}

/// A point located on the decision boundary by bisection.
#[derive(Debug, Clone)]
pub struct BoundaryPoint {
    /// The far end of the final bracket; its queried label satisfies the
    /// search condition.
    pub point: Vec<f32>,
    /// Label observed infinitesimally beyond the boundary along the search
    /// direction.
    pub inside_class: ClassLabel,
    /// Distance from the origin sample, along the search direction.
    pub distance_to_origin: f64,
}

/// Which side of the boundary counts as "across".
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchMode {
    /// Condition: label equals the target class.
    Targeted(ClassLabel),
    /// Condition: label differs from the own class.
    Untargeted(ClassLabel),
}

impl SearchMode {
    pub fn satisfied(&self, label: ClassLabel) -> bool {
        match *self {
            SearchMode::Targeted(n) => label == n,
            SearchMode::Untargeted(m) => label != m,
        }
    }
}

/// Reference samples bucketed by class.
#[derive(Debug, Clone)]
pub struct ReferenceSet {
    pub shape: Shape,
    classes: Vec<Vec<Vec<f32>>>,
}

impl ReferenceSet {
    pub fn new(shape: Shape, class_count: usize) -> Self {
        ReferenceSet {
            shape,
            classes: vec![Vec::new(); class_count],
        }
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn add(&mut self, label: ClassLabel, sample: Vec<f32>) -> Result<()> {
        if sample.len() != self.shape.len() {
            return Err(Error::ShapeMismatch {
                got: sample.len(),
                expected: self.shape.len(),
                shape: self.shape,
            });
        }
        let count = self.classes.len();
        self.classes
            .get_mut(label.0)
            .ok_or(Error::ClassOutOfRange {
                class: label.0,
                count,
            })?
            .push(sample);
        Ok(())
    }

    pub fn class(&self, label: ClassLabel) -> &[Vec<f32>] {
        &self.classes[label.0]
    }

    /// Bucket samples by the oracle's own decisions (one charged query per
    /// sample), so targeted searches never disagree with the reference label.
    pub fn from_oracle_labels<'a>(
        oracle: &dyn DecisionOracle,
        samples: impl Iterator<Item = &'a [f32]>,
    ) -> Result<Self> {
        let mut set = ReferenceSet::new(oracle.input_shape(), oracle.class_count());
        for s in samples {
            let label = oracle.classify(s)?;
            set.add(label, s.to_vec())?;
        }
        Ok(set)
    }
}

fn l2_f32(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

// ---------------------------------------------------------------------------
// Query sessions: local per-direction accounting on top of a shared oracle.
// ---------------------------------------------------------------------------

enum Stop {
    /// The per-direction limit was reached; graceful.
    DirectionBudget,
    /// The oracle's own global budget ran out.
    OracleBudget {
        budget: u64,
        spent: u64,
    },
    Fatal(Error),
}

impl Stop {
    fn into_error(self) -> Error {
        match self {
            Stop::DirectionBudget => Error::InvalidConfig(
                "internal: direction budget escaped an unlimited session".into(),
            ),
            Stop::OracleBudget { budget, spent } => Error::BudgetExhausted { budget, spent },
            Stop::Fatal(e) => e,
        }
    }
}

struct Session<'a> {
    oracle: &'a dyn DecisionOracle,
    limit: u64,
    spent: Cell<u64>,
}

impl<'a> Session<'a> {
    fn new(oracle: &'a dyn DecisionOracle, limit: u64) -> Self {
        Session {
            oracle,
            limit,
            spent: Cell::new(0),
        }
    }

    fn unlimited(oracle: &'a dyn DecisionOracle) -> Self {
        Self::new(oracle, u64::MAX)
    }

    fn spent(&self) -> u64 {
        self.spent.get()
    }

    fn reserve(&self, n: u64) -> std::result::Result<(), Stop> {
        if self.spent.get().saturating_add(n) > self.limit {
            return Err(Stop::DirectionBudget);
        }
        Ok(())
    }

    fn classify(&self, x: &[f32]) -> std::result::Result<ClassLabel, Stop> {
        self.reserve(1)?;
        match self.oracle.classify(x) {
            Ok(l) => {
                self.spent.set(self.spent.get() + 1);
                Ok(l)
            }
            Err(Error::BudgetExhausted { budget, spent }) => {
                Err(Stop::OracleBudget { budget, spent })
            }
            Err(e) => Err(Stop::Fatal(e)),
        }
    }

    fn classify_batch(&self, xs: &[f32], n: usize) -> std::result::Result<Vec<ClassLabel>, Stop> {
        self.reserve(n as u64)?;
        match self.oracle.classify_batch(xs, n) {
            Ok(ls) => {
                self.spent.set(self.spent.get() + n as u64);
                Ok(ls)
            }
            Err(Error::BudgetExhausted { budget, spent }) => {
                Err(Stop::OracleBudget { budget, spent })
            }
            Err(e) => Err(Stop::Fatal(e)),
        }
    }
}

fn point_at(x0: &[f64], dir: &[f64], t: f64) -> Vec<f32> {
    x0.iter()
        .zip(dir)
        .map(|(&o, &d)| (o + t * d) as f32)
        .collect()
}

fn to_f64(x: &[f32]) -> Vec<f64> {
    x.iter().map(|&v| v as f64).collect()
}

/// Bisection over an already-verified bracket: the condition fails at the
/// near end and held at (`hi`, `hi_point`, `hi_label`).
fn bisect_verified(
    session: &Session,
    x0d: &[f64],
    dir: &[f64],
    mut lo: f64,
    mut hi: f64,
    mut hi_point: Vec<f32>,
    mut hi_label: ClassLabel,
    mode: SearchMode,
    epsilon: f64,
) -> std::result::Result<BoundaryPoint, Stop> {
    while hi - lo > epsilon {
        let mid = 0.5 * (lo + hi);
        let p = point_at(x0d, dir, mid);
        let label = session.classify(&p)?;
        if mode.satisfied(label) {
            hi = mid;
            hi_point = p;
            hi_label = label;
        } else {
            lo = mid;
        }
    }
    Ok(BoundaryPoint {
        point: hi_point,
        inside_class: hi_label,
        distance_to_origin: hi,
    })
}

fn search_in_session(
    session: &Session,
    x0: &[f32],
    probe: &[f32],
    mode: SearchMode,
    epsilon: f64,
    verify_origin: bool,
) -> std::result::Result<BoundaryPoint, Stop> {
    if verify_origin {
        let origin_label = session.classify(x0)?;
        if mode.satisfied(origin_label) {
            return Err(Stop::Fatal(Error::OriginAcrossBoundary { origin_label }));
        }
    }
    let probe_label = session.classify(probe)?;
    if !mode.satisfied(probe_label) {
        return Err(Stop::Fatal(Error::ProbeNotAcrossBoundary { probe_label }));
    }
    let x0d = to_f64(x0);
    let dist = l2_f32(probe, x0);
    if dist == 0.0 {
        return Err(Stop::Fatal(Error::InvalidConfig(
            "probe coincides with the origin sample".into(),
        )));
    }
    let probed = to_f64(probe);
    let dir: Vec<f64> = probed
        .iter()
        .zip(&x0d)
        .map(|(&p, &o)| (p - o) / dist)
        .collect();
    bisect_verified(
        session,
        &x0d,
        &dir,
        0.0,
        dist,
        probe.to_vec(),
        probe_label,
        mode,
        epsilon,
    )
}

/// Locate the decision boundary on the segment from `x0` to `probe`.
///
/// The probe must satisfy the mode condition and `x0` must not; both are
/// verified (two queries), then bisection spends one query per halving, so
/// the total cost is at most `ceil(log2(|probe - x0| / epsilon)) + 2`.
pub fn binary_search_boundary(
    oracle: &dyn DecisionOracle,
    x0: &[f32],
    probe: &[f32],
    mode: SearchMode,
    epsilon: f64,
) -> Result<BoundaryPoint> {
    if epsilon <= 0.0 {
        return Err(Error::InvalidConfig("epsilon must be positive".into()));
    }
    let session = Session::unlimited(oracle);
    search_in_session(&session, x0, probe, mode, epsilon, true).map_err(Stop::into_error)
}

fn estimate_gradient_in(
    session: &Session,
    point: &[f32],
    q: usize,
    radius: f64,
    mode: SearchMode,
    rng: &mut ChaCha8Rng,
) -> std::result::Result<Vec<f64>, Stop> {
    let d = point.len();
    let normal = StandardNormal;
    for _attempt in 0..2 {
        let mut draws = Vec::with_capacity(q * d);
        let mut probes = Vec::with_capacity(q * d);
        for _ in 0..q {
            for &p in point {
                let u: f64 = normal.sample(rng);
                draws.push(u);
                probes.push((p as f64 + radius * u) as f32);
            }
        }
        let labels = session.classify_batch(&probes, q)?;
        let mut acc = vec![0.0f64; d];
        for (i, label) in labels.iter().enumerate() {
            let sign = if mode.satisfied(*label) { 1.0 } else { -1.0 };
            let u = &draws[i * d..(i + 1) * d];
            for (a, &v) in acc.iter_mut().zip(u) {
                *a += sign * v;
            }
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for a in acc.iter_mut() {
                *a /= norm;
            }
            return Ok(acc);
        }
    }
    Err(Stop::Fatal(Error::GradientEstimationFailed))
}

/// Monte-Carlo estimate of the boundary normal at `boundary_point`: the
/// normalized signed average of `q` Gaussian probes at radius `radius`,
/// signs by whether the mode condition holds. Spends exactly `q` queries
/// (once more on the rare all-cancelling retry).
pub fn estimate_boundary_gradient(
    oracle: &dyn DecisionOracle,
    boundary_point: &BoundaryPoint,
    q: usize,
    radius: f64,
    mode: SearchMode,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if q == 0 || radius <= 0.0 {
        return Err(Error::InvalidConfig(
            "gradient estimation needs q >= 1 and a positive radius".into(),
        ));
    }
    let session = Session::unlimited(oracle);
    estimate_gradient_in(&session, &boundary_point.point, q, radius, mode, rng)
        .map_err(Stop::into_error)
}

enum DescentStop {
    Converged,
    DirectionBudget,
    OracleBudget { budget: u64, spent: u64 },
}

struct DescentOutcome {
    best: BoundaryPoint,
    stop: DescentStop,
}

fn minimize_in_session(
    session: &Session,
    x0d: &[f64],
    initial: &BoundaryPoint,
    config: &RobustnessConfig,
    mode: SearchMode,
    rng: &mut ChaCha8Rng,
) -> Result<DescentOutcome> {
    // The distance fluctuates under Monte-Carlo gradients, so a single flat
    // iteration is not convergence; the walk stops once the best distance has
    // failed to improve by the tolerance for STALL_LIMIT iterations in a row
    // (failed steps included).
    const STALL_LIMIT: u32 = 3;
    let mut best = initial.clone();
    let mut cur = initial.clone();
    let mut stall = 0u32;
    macro_rules! stop_or_fatal {
        ($stop:expr, $best:expr) => {
            match $stop {
                Stop::DirectionBudget => {
                    return Ok(DescentOutcome {
                        best: $best,
                        stop: DescentStop::DirectionBudget,
                    })
                }
                Stop::OracleBudget { budget, spent } => {
                    return Ok(DescentOutcome {
                        best: $best,
                        stop: DescentStop::OracleBudget { budget, spent },
                    })
                }
                Stop::Fatal(e) => return Err(e),
            }
        };
    }
    loop {
        let before_best = best.distance_to_origin;
        let gradient = match estimate_gradient_in(
            session,
            &cur.point,
            config.gradient_samples,
            config.gradient_probe_radius,
            mode,
            rng,
        ) {
            Ok(g) => g,
            Err(stop) => stop_or_fatal!(stop, best),
        };
        // Step across the boundary; halve on a wrong-side landing, up to 5
        // times, after which the iteration counts as failed.
        let curd = to_f64(&cur.point);
        let mut step = config.descent_step;
        let mut accepted: Option<(Vec<f32>, ClassLabel)> = None;
        for _ in 0..6 {
            let candidate: Vec<f32> = curd
                .iter()
                .zip(&gradient)
                .map(|(&p, &g)| (p + step * g) as f32)
                .collect();
            match session.classify(&candidate) {
                Ok(label) if mode.satisfied(label) => {
                    accepted = Some((candidate, label));
                    break;
                }
                Ok(_) => step *= 0.5,
                Err(stop) => stop_or_fatal!(stop, best),
            }
        }
        if let Some((stepped, stepped_label)) = accepted {
            let dist = l2_f32(&stepped, &x0_as_f32(x0d));
            if dist > 0.0 {
                let steppedd = to_f64(&stepped);
                let dir: Vec<f64> = steppedd
                    .iter()
                    .zip(x0d)
                    .map(|(&p, &o)| (p - o) / dist)
                    .collect();
                let rebracketed = match bisect_verified(
                    session,
                    x0d,
                    &dir,
                    0.0,
                    dist,
                    stepped,
                    stepped_label,
                    mode,
                    config.binary_search_epsilon,
                ) {
                    Ok(p) => p,
                    Err(stop) => stop_or_fatal!(stop, best),
                };
                cur = rebracketed;
                if cur.distance_to_origin < best.distance_to_origin {
                    best = cur.clone();
                }
            }
        }
        if before_best - best.distance_to_origin >= config.improvement_tolerance {
            stall = 0;
        } else {
            stall += 1;
            if stall >= STALL_LIMIT {
                return Ok(DescentOutcome {
                    best,
                    stop: DescentStop::Converged,
                });
            }
        }
    }
}

fn x0_as_f32(x0d: &[f64]) -> Vec<f32> {
    x0d.iter().map(|&v| v as f32).collect()
}

/// Walk `initial` along the boundary toward `x0` until an accepted step
/// improves the distance by less than the tolerance or the per-direction
/// query limit runs out. The returned distance is the best seen, never worse
/// than `initial`.
pub fn minimize_boundary_distance(
    oracle: &dyn DecisionOracle,
    x0: &[f32],
    initial: &BoundaryPoint,
    config: &RobustnessConfig,
    mode: SearchMode,
    rng: &mut ChaCha8Rng,
) -> Result<BoundaryPoint> {
    config.validate()?;
    let session = Session::new(oracle, config.query_limit_per_direction);
    let outcome = minimize_in_session(&session, &to_f64(x0), initial, config, mode, rng)?;
    match outcome.stop {
        DescentStop::OracleBudget { budget, spent } => {
            Err(Error::BudgetExhausted { budget, spent })
        }
        _ => Ok(outcome.best),
    }
}

pub(crate) enum SynthDescent {
    Done { point: BoundaryPoint, spent: u64 },
    OracleBudget { spent: u64 },
}

/// Bisect toward `probe` and minimize the resulting boundary point, all under
/// one per-probe budget session. Zero-shot generation calls this once per
/// probe noise.
pub(crate) fn boundary_descent_for_synth(
    oracle: &dyn DecisionOracle,
    origin: &[f32],
    probe: &[f32],
    config: &RobustnessConfig,
    mode: SearchMode,
    rng: &mut ChaCha8Rng,
) -> Result<SynthDescent> {
    let session = Session::new(oracle, config.query_limit_per_direction);
    let initial = match search_in_session(
        &session,
        origin,
        probe,
        mode,
        config.binary_search_epsilon,
        false,
    ) {
        Ok(p) => p,
        Err(Stop::OracleBudget { .. }) => {
            return Ok(SynthDescent::OracleBudget {
                spent: session.spent(),
            })
        }
        Err(Stop::DirectionBudget) => {
            return Err(Error::InvalidConfig(
                "mbd_query_limit too small for the initial boundary search".into(),
            ))
        }
        Err(Stop::Fatal(e)) => return Err(e),
    };
    let outcome = minimize_in_session(&session, &to_f64(origin), &initial, config, mode, rng)?;
    match outcome.stop {
        DescentStop::OracleBudget { .. } => Ok(SynthDescent::OracleBudget {
            spent: session.spent(),
        }),
        _ => Ok(SynthDescent::Done {
            point: outcome.best,
            spent: session.spent(),
        }),
    }
}

/// SD robustness: per off-class minimum distance to the reference samples.
/// Spends no queries.
pub fn sample_distance(
    x0: &[f32],
    own_class: ClassLabel,
    references: &ReferenceSet,
    reference_per_class: usize,
    sample_index: usize,
) -> Result<RobustnessRecord> {
    let l = references.class_count();
    if own_class.0 >= l {
        return Err(Error::ClassOutOfRange {
            class: own_class.0,
            count: l,
        });
    }
    let mut distances = vec![None; l];
    for n in 0..l {
        if n == own_class.0 {
            continue;
        }
        let refs = references.class(ClassLabel(n));
        if refs.is_empty() {
            return Err(Error::EmptyReferenceClass(ClassLabel(n)));
        }
        let take = reference_per_class.min(refs.len());
        let min = refs[..take]
            .iter()
            .map(|r| l2_f32(r, x0))
            .fold(f64::INFINITY, f64::min);
        distances[n] = Some(min);
    }
    Ok(RobustnessRecord {
        sample_index,
        own_class,
        distances,
        queries_spent: 0,
    })
}

/// Full per-sample robustness under the configured strategy.
///
/// For BD/MBD the sample's own class is the oracle's decision (one query);
/// references whose oracle label disagrees with their bucket are skipped.
/// All randomness derives from `sample_seed` and the (class, reference)
/// indices, so budgets only truncate trajectories and never reshuffle them.
pub fn robustness_vector(
    oracle: &dyn DecisionOracle,
    x0: &[f32],
    dataset_label: ClassLabel,
    references: &ReferenceSet,
    config: &RobustnessConfig,
    sample_seed: u64,
    sample_index: usize,
) -> Result<RobustnessRecord> {
    config.validate()?;
    if config.strategy == RobustnessStrategy::SampleDistance {
        return sample_distance(
            x0,
            dataset_label,
            references,
            config.reference_per_class,
            sample_index,
        );
    }
    let l = oracle.class_count();
    let own = oracle.classify(x0)?;
    let mut queries: u64 = 1;
    let x0d = to_f64(x0);
    let mut distances = vec![None; l];
    for n in 0..l {
        if n == own.0 {
            continue;
        }
        let class = ClassLabel(n);
        let refs = references.class(class);
        if refs.is_empty() {
            return Err(Error::EmptyReferenceClass(class));
        }
        let take = config.reference_per_class.min(refs.len());
        let mut min_dist: Option<f64> = None;
        let mut rejected = 0usize;
        for (i, reference) in refs[..take].iter().enumerate() {
            let session = Session::new(oracle, config.query_limit_per_direction);
            let mut rng = seed::rng(sample_seed, &[n as u64, i as u64]);
            let mode = SearchMode::Targeted(class);
            let searched = search_in_session(
                &session,
                x0,
                reference,
                mode,
                config.binary_search_epsilon,
                false,
            );
            let dist = match searched {
                Ok(bd_point) => match config.strategy {
                    RobustnessStrategy::BoundaryDistance => bd_point.distance_to_origin,
                    RobustnessStrategy::MinimalBoundaryDistance => {
                        let outcome =
                            minimize_in_session(&session, &x0d, &bd_point, config, mode, &mut rng)?;
                        if let DescentStop::OracleBudget { budget, spent } = outcome.stop {
                            return Err(Error::BudgetExhausted { budget, spent });
                        }
                        outcome.best.distance_to_origin
                    }
                    RobustnessStrategy::SampleDistance => unreachable!("dispatched above"),
                },
                Err(Stop::Fatal(Error::ProbeNotAcrossBoundary { .. })) => {
                    rejected += 1;
                    queries += session.spent();
                    continue;
                }
                Err(stop) => return Err(stop.into_error()),
            };
            queries += session.spent();
            min_dist = Some(min_dist.map_or(dist, |m: f64| m.min(dist)));
        }
        match min_dist {
            Some(d) => distances[n] = Some(d),
            None => return Err(Error::NoUsableReference { class, rejected }),
        }
    }
    Ok(RobustnessRecord {
        sample_index,
        own_class: own,
        distances,
        queries_spent: queries,
    })
}

/// Robustness records for a whole batch, computed in parallel with
/// per-sample seeds derived from `global_seed`; output order matches input.
pub fn robustness_records(
    oracle: &dyn DecisionOracle,
    images: &[f32],
    labels: &[ClassLabel],
    references: &ReferenceSet,
    config: &RobustnessConfig,
    global_seed: u64,
) -> Vec<Result<RobustnessRecord>> {
    let d = references.shape.len();
    labels
        .par_iter()
        .enumerate()
        .map(|(i, &label)| {
            let x0 = &images[i * d..(i + 1) * d];
            let sample_seed = seed::derive(global_seed, &[i as u64]);
            robustness_vector(oracle, x0, label, references, config, sample_seed, i)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Artifacts: record CSV and the per-class mean distance matrix.
// ---------------------------------------------------------------------------

/// `matrix[m][n]` = mean distance from class-m samples to class n; NaN where
/// no data (including the diagonal).
pub fn mean_distance_matrix(records: &[RobustnessRecord], class_count: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0f64; class_count]; class_count];
    let mut counts = vec![vec![0u64; class_count]; class_count];
    for r in records {
        for (n, d) in r.distances.iter().enumerate() {
            if let Some(d) = d {
                sums[r.own_class.0][n] += d;
                counts[r.own_class.0][n] += 1;
            }
        }
    }
    sums.iter()
        .zip(&counts)
        .map(|(row, crow)| {
            row.iter()
                .zip(crow)
                .map(|(&s, &c)| if c == 0 { f64::NAN } else { s / c as f64 })
                .collect()
        })
        .collect()
}

/// Scale all finite entries into [0, 1] by the global maximum.
pub fn normalize_matrix(matrix: &mut [Vec<f64>]) {
    let max = matrix
        .iter()
        .flatten()
        .filter(|v| v.is_finite())
        .fold(0.0f64, |m, &v| m.max(v));
    if max > 0.0 {
        for row in matrix.iter_mut() {
            for v in row.iter_mut() {
                *v /= max;
            }
        }
    }
}

/// CSV with header `sample_index,own_class,queries,dist_0,...`; the own-class
/// entry is an empty field.
pub fn write_records_csv<W: Write>(
    mut w: W,
    records: &[RobustnessRecord],
    class_count: usize,
) -> Result<()> {
    write!(w, "sample_index,own_class,queries")?;
    for n in 0..class_count {
        write!(w, ",dist_{n}")?;
    }
    writeln!(w)?;
    for r in records {
        write!(w, "{},{},{}", r.sample_index, r.own_class, r.queries_spent)?;
        for n in 0..class_count {
            match r.distances.get(n).copied().flatten() {
                Some(d) => write!(w, ",{d}")?,
                None => write!(w, ",")?,
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Parse records written by [`write_records_csv`]; `#` lines are skipped.
pub fn read_records_csv<R: BufRead>(r: R) -> Result<Vec<RobustnessRecord>> {
    let mut lines = r.lines();
    let header = loop {
        match lines.next() {
            Some(line) => {
                let line = line?;
                if line.starts_with('#') || line.trim().is_empty() {
                    continue;
                }
                break line;
            }
            None => {
                return Err(Error::InvalidConfig(
                    "records CSV has no header line".into(),
                ))
            }
        }
    };
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.len() < 4 || cols[0] != "sample_index" || cols[1] != "own_class" || cols[2] != "queries"
    {
        return Err(Error::InvalidConfig(format!(
            "unexpected records CSV header: {header}"
        )));
    }
    let class_count = cols.len() - 3;
    let mut records = Vec::new();
    for line in lines {
        let line = line?;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != class_count + 3 {
            return Err(Error::InvalidConfig(format!(
                "records CSV row has {} fields, expected {}",
                fields.len(),
                class_count + 3
            )));
        }
        let parse_err = |what: &str| Error::InvalidConfig(format!("bad {what} in records CSV"));
        let sample_index: usize = fields[0].parse().map_err(|_| parse_err("sample_index"))?;
        let own_class: usize = fields[1].parse().map_err(|_| parse_err("own_class"))?;
        let queries_spent: u64 = fields[2].parse().map_err(|_| parse_err("queries"))?;
        let mut distances = Vec::with_capacity(class_count);
        for f in &fields[3..] {
            if f.is_empty() {
                distances.push(None);
            } else {
                distances.push(Some(f.parse::<f64>().map_err(|_| parse_err("distance"))?));
            }
        }
        records.push(RobustnessRecord {
            sample_index,
            own_class: ClassLabel(own_class),
            distances,
            queries_spent,
        });
    }
    Ok(records)
}
