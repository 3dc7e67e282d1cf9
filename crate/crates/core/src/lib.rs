//! Training engine and experiment harness for transfer-learning classifier
//! heads over precomputed CNN features.
//!
//! The engine compares two heads on top of a frozen backbone whose
//! activations were exported ahead of time:
//!
//! * the **proposed** head keeps the pretrained 1000-way classification layer
//!   and appends a ReLU-activated layer with one unit per target class;
//! * the **baseline** head replaces the classification layer with a fresh
//!   target-width layer and fine-tunes the wide FC layer before it.
//!
//! [`experiments`] runs both over A-type (single species) and B-type (mixed
//! species) class selections and reports test accuracy, training time and
//! the gains between them.

pub mod data;
pub mod error;
pub mod experiments;
pub mod heads;
pub mod layers;
pub mod optim;
pub mod similarity;

pub use data::{FeatureSet, FeatureStore, Manifest, Split, SplitSpec};
pub use error::{Error, ParseErrorKind, Result};
pub use heads::{
    build_baseline_head, build_proposed_head, evaluate, train_head, Head, HeadKind, HeadSpec, TrainConfig,
    TrainResult,
};
pub use layers::{AffineParams, DenseMatrix, Rng};
