//! Benchmarking toolkit for ordinal regression in the age-estimation style.
//!
//! The crate covers the whole evaluation loop:
//!
//! - [`data`]: datasets, manifest IO and identity-correlated synthetic data
//! - [`split`]: subject-exclusive stratified splits, random splits and leakage audits
//! - [`methods`]: the compared loss families with analytic gradients
//! - [`predict`]: decision layers, including the MAE-optimal posterior median
//! - [`train`]: a small MLP trained with Adam and validation-MAE model selection
//! - [`stats`]: average ranks, Friedman / Iman-Davenport test, Nemenyi critical difference
//! - [`align`]: 2-D similarity transforms used for face alignment
//! - [`harness`]: experiment configs, the method x dataset x split grid and reports
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and plain iterators otherwise.

pub mod align;
pub mod data;
pub mod harness;
pub mod methods;
pub mod par;
pub mod predict;
pub mod split;
pub mod stats;
pub mod train;

pub use data::{DatasetTable, LabelSet, Sample, SynthSpec};
pub use methods::{Family, LossEval, MethodConfig, Posterior};
pub use par::Parallelism;
pub use predict::Prediction;
pub use split::{AuditReport, SplitMode, SplitSpec};
pub use stats::{RankSummary, ResultMatrix};
pub use train::{MlpModel, TrainConfig, TrainedRun};
