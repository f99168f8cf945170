//! Model-independent half of the dual-student anomaly detector.
//!
//! Everything here works on plain buffers so it can be shared by the
//! training pipeline, the command-line tool and the browser demo:
//!
//! * [`heatmap`]: single-channel maps and bilinear resampling.
//! * [`postprocess`]: multi-scale map fusion and Gaussian denoising.
//! * [`score`]: image-level scoring, calibration and the 0.5 decision rule.
//! * [`metrics`]: image/pixel AUROC and the per-region-overlap (PRO) metric.
//! * [`data`]: image preprocessing, dataset loading and export.
//! * [`synth`]: deterministic synthetic texture datasets with injected defects.
//! * [`report`]: CSV and PNG writers for results.

pub mod data;
pub mod error;
pub mod heatmap;
pub mod metrics;
pub mod postprocess;
pub mod report;
pub mod score;
pub mod synth;

pub use error::{DataError, MetricError, ShapeError};
pub use heatmap::{Heatmap, Mask};
pub use score::{AnomalyResult, ScoreCalibration};
