//! Domain adversarial active learning (DAAL) for domain-generalization
//! classification.
//!
//! The crate is organised around the active-learning round:
//!
//! - [`data`]: multi-domain datasets, leave-one-domain-out splits and the
//!   labeled/unlabeled pool.
//! - [`nn`]: a small MLP feature extractor + linear classifier with exact
//!   gradients for cross-entropy and the masked weak-feature loss.
//! - [`forest`]: CART random forest with Gini importances.
//! - [`weak`]: per-domain weakly discriminative feature subsets and
//!   per-sample loss weights.
//! - [`selection`]: centroid-based adversarial selection and uncertainty
//!   baselines.
//! - [`experiment`]: the round loop, evaluation and result aggregation.
//! - [`cli`]: the `daal` command-line tool.

pub mod cli;
pub mod data;
pub mod error;
pub mod experiment;
pub mod forest;
pub mod nn;
pub mod seed;
pub mod selection;
pub mod weak;

pub use error::{DaalError, Result};
