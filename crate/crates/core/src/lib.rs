//! Delayed-feedback conversion-rate modeling with label-corrected training.
//!
//! The crate covers the whole offline loop:
//!
//! - [`logsim`] generates click logs with known conversion ground truth;
//! - [`snapshot`] materializes what is observable at a collection time and
//!   builds label-correction data with a counterfactual deadline;
//! - [`nnet`] is a small embedding + MLP engine with Adam;
//! - [`losses`] holds the oracle, vanilla and label-corrected objectives;
//! - [`trainer`] runs early-stopped training and alternative training;
//! - [`metrics`] evaluates AUC, PRAUC, log loss, relative improvement and
//!   delay-stratified breakdowns;
//! - [`experiment`] wires everything into reproducible experiment reports.

pub mod checkpoint;
pub mod config;
pub mod domain;
pub mod error;
pub mod experiment;
pub mod io;
pub mod logsim;
pub mod losses;
pub mod metrics;
pub mod nnet;
pub mod snapshot;
pub mod trainer;

pub use domain::{
    validate_dataset, ClickEvent, Duration, FeatureSchema, LcSample, ObservedSample, OracleLabel, SampleId,
    Timestamp, ValidationReport, DAY, HOUR,
};
pub use error::{Error, Result};
pub use metrics::{Metrics, MetricsReport};
pub use nnet::{LossKind, ModelParams, ModelShape};
