//! Knowledge distillation from a decision-based (hard-label) black-box teacher.
//!
//! The teacher exposes nothing but top-1 class decisions. A sample's distance
//! to the teacher's decision boundaries is estimated with query-efficient
//! boundary search and zeroth-order descent, converted into soft labels, and a
//! compact student is trained on the resulting transfer set. A zero-shot mode
//! synthesizes pseudo training samples by pushing random noise away from the
//! boundaries when no real data is available.
//!
//! Module map:
//! - [`oracle`]: the hard-label teacher interface, query accounting, analytic
//!   teachers with closed-form boundary distances, and network-backed oracles.
//! - [`geometry`]: sample robustness via sample distance (SD), boundary
//!   distance (BD) and minimal boundary distance (MBD).
//! - [`labels`]: robustness records -> activations -> temperature-softened
//!   soft labels -> transfer sets.
//! - [`synth`]: zero-shot pseudo-sample generation and augmentation.
//! - [`nn`]: a minimal dense/conv network engine with KD losses.
//! - [`data`]: IDX ingestion, synthetic datasets, binary persistence.

pub mod data;
pub mod error;
pub mod geometry;
pub mod labels;
pub mod nn;
pub mod oracle;
pub mod seed;
pub mod shape;
pub mod synth;

pub use error::{Error, Result};
pub use oracle::{ClassLabel, DecisionOracle};
pub use shape::Shape;
