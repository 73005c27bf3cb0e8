//! Explainable grid-cell anomaly detection for full-disk solar observations.
//!
//! An image is partitioned into an `n × n` grid of cells. For every cell a
//! normal intensity band `[L, U]` is learned from labeled training images by
//! searching percentile pairs of the normal class and keeping the pair whose
//! deviation statistic best separates the two classes under a one-way ANOVA
//! F-test. At scoring time each cell's deviation is squashed through a
//! sigmoid, cells above a likelihood threshold are flagged, and an image is
//! anomalous once enough cells are flagged.
//!
//! The crate also ships the classic baselines (kernel SVM and one-class SVM,
//! both trained with SMO), evaluation and class-imbalance experiments, a
//! synthetic observation generator, and overlay rendering.

// `!(a < b)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod anomalyzer;
pub mod baselines;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod gridstats;
pub mod render;
pub mod synth;

pub use anomalyzer::{AnomalyzerModel, CellFlag, FitOptions, PercentileSearch, ScoreMap};
pub use dataset::{DatasetSplit, Label, LabeledImage, Pixels};
pub use error::{Error, Result};
pub use eval::{ConfusionCounts, Detector, MetricSet};
pub use gridstats::{CellFeatureGrid, FStat};
