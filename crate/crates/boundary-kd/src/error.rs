//! Crate-wide error type.

use crate::oracle::ClassLabel;
use crate::shape::Shape;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("sample has {got} values, expected {expected} for shape {shape}")]
    ShapeMismatch {
        got: usize,
        expected: usize,
        shape: Shape,
    },

    #[error("query budget exhausted: {budget} queries allowed, {spent} already spent")]
    BudgetExhausted { budget: u64, spent: u64 },

    #[error("class {class} out of range for {count} classes")]
    ClassOutOfRange { class: usize, count: usize },

    #[error("target class {0} equals the sample's own class")]
    TargetIsOwnClass(ClassLabel),

    #[error("no pairwise hyperplane projection lands in the target region; nearest point is on a lower-dimensional face")]
    NoFeasibleProjection,

    #[error("probe is not across the boundary: label {probe_label} does not satisfy the search condition")]
    ProbeNotAcrossBoundary { probe_label: ClassLabel },

    #[error("origin already satisfies the search condition (label {origin_label})")]
    OriginAcrossBoundary { origin_label: ClassLabel },

    #[error("boundary gradient estimate vanished twice in a row")]
    GradientEstimationFailed,

    #[error("no reference samples for class {0}")]
    EmptyReferenceClass(ClassLabel),

    #[error("no usable reference for class {class}: all {rejected} probes were labeled differently by the oracle")]
    NoUsableReference { class: ClassLabel, rejected: usize },

    #[error("off-class distance for class {class} is not positive ({value}); clamp distances before label construction")]
    NonPositiveDistance { class: usize, value: f64 },

    #[error("count mismatch: {left} {left_count} vs {right} {right_count}")]
    CountMismatch {
        left: &'static str,
        left_count: usize,
        right: &'static str,
        right_count: usize,
    },

    #[error("bad IDX magic: got {got:#010x}, expected {expected:#010x}")]
    BadMagic { got: u32, expected: u32 },

    #[error("truncated file: wanted {wanted} more bytes for {context}")]
    Truncated {
        wanted: usize,
        context: &'static str,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("class {class} has {have} samples, need {want}")]
    InsufficientSamples {
        class: usize,
        have: usize,
        want: usize,
    },

    #[error("class {class} unreachable after {attempts} rejection attempts")]
    ClassUnreachable { class: usize, attempts: usize },

    #[error("image {width}x{height} too small for the augmentation policy")]
    ShapeTooSmall { width: usize, height: usize },

    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by an exhausted query budget.
    pub fn is_budget(&self) -> bool {
        matches!(self, Error::BudgetExhausted { .. })
    }
}
