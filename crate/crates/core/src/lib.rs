//! Pool-based active learning with inconsistency-driven sample selection.
//!
//! One learning cycle trains a small dense classifier with MixUp-style label
//! propagation over labeled, unlabeled and augmented samples, then scores every
//! unlabeled sample by how much its prediction moves under coarse
//! augmentations and under a virtual adversarial perturbation. The most
//! inconsistent samples form a candidate set that is re-ranked by
//! density-weighted entropy before the top `budget` are sent to the oracle.
//!
//! Module map:
//!
//! - [`nn`]: dense classifier, softmax, KL divergence and input gradients.
//! - [`augment`]: coarse transforms and virtual adversarial perturbations.
//! - [`propagator`]: guessed labels, MixUp and training batch assembly.
//! - [`selector`]: inconsistency scores, percentiles and two-stage selection.
//! - [`engine`]: pool bookkeeping, oracle, baselines and the cycle driver.
//! - [`config`], [`dataset`], [`report`]: file formats used by the CLI.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod config;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod nn;
pub mod propagator;
pub mod report;
pub mod rng;
pub mod selector;

pub use config::{LoopConfig, Strategy};
pub use dataset::{Dataset, SampleId};
pub use engine::{CycleReport, Engine, Oracle, Pool};
pub use error::{Error, Result};
pub use nn::{Classifier, PredictionDist};
pub use selector::ScoreRecord;
