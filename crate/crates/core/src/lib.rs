//! Semi-supervised audio-visual source localization on a synthetic world.
//!
//! The crate trains dual teacher-student localization networks on generated
//! audio-visual scenes: teachers are warmed up on a small labeled split,
//! then filter unlabeled samples by cross-teacher consensus, pseudo-label
//! the survivors with the intersection of their foreground masks, and track
//! their students through exponential moving averages while the students
//! learn from the mixed labeled/pseudo-labeled pool plus a contrastive
//! audio-visual objective.

pub mod dmt;
pub mod error;
pub mod maps;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod tensor;
pub mod world;

pub use error::{DmtError, Result};
pub use maps::{BinaryMap, ConfidenceMap};
pub use tensor::{AdamState, Graph, NodeId, Tensor};
