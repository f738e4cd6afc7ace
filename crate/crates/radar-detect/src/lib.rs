//! Radar point-cloud object detection: moving-target filtering, Doppler-aware
//! density clustering, cluster feature extraction and selection, a recurrent
//! classifier ensemble, evaluation metrics, model-based hyperparameter search
//! and a synthetic scene generator for benchmarking.

pub mod classifier;
pub mod clustering;
pub mod data;
pub mod dataset;
pub mod error;
pub mod featsel;
pub mod features;
pub mod hyperopt;
pub mod metrics;
pub mod pipeline;
pub mod simgen;
pub mod split;

pub use error::{Error, Result};
