//! Learning-with-noisy-labels laboratory.
//!
//! The crate is organised bottom-up:
//!
//! * [`data`] holds datasets with paired clean/noisy labels, JSONL ingestion,
//!   splitting, hashed n-gram featurisation and synthetic fixtures.
//! * [`noise`] builds and audits transition matrices and corrupts labels,
//!   either by sampling a matrix or by keyword rules.
//! * [`model`] is a small softmax classifier (linear or one hidden layer) over
//!   sparse features with closed-form gradients.
//! * [`strategies`] contains the noise-handling objectives: forward
//!   correction, a learned noise matrix, co-teaching selection and label
//!   smoothing.
//! * [`trainer`] runs SGD with early stopping on a (noisy) validation set and
//!   records the trajectory.
//! * [`diagnostics`] measures how well per-sample losses separate wrong labels
//!   from correct ones.

pub mod data;
pub mod diagnostics;
mod error;
pub mod model;
pub mod noise;
pub mod rng;
pub mod strategies;
pub mod trainer;

pub use data::{Dataset, Example, Label, LabelSet, SparseVec, SplitSpec};
pub use diagnostics::{LossSnapshot, RocCurve, SeparabilityRow};
pub use error::{Error, Result};
pub use model::{Arch, Checkpoint, Params};
pub use noise::{RuleSet, TransitionMatrix};
pub use strategies::{LearnedMatrix, Strategy};
pub use trainer::{RunRecord, TrainConfig, ValPolicy};
