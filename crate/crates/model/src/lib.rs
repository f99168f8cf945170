//! Networks, distillation losses, training and inference for dual-student
//! feature distillation anomaly detection.

pub mod ablate;
pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod decoder;
pub mod detector;
pub mod dfe;
pub mod distill;
pub mod error;
pub mod eval;
mod layers;
pub mod model;
pub mod params;
pub mod pyramid;
pub mod train;

pub use candle_core::Device;
pub use ablate::{run_ablation, AblationRow, AblationSetup, Arm};
pub use backbone::{ResNetFeatures, Teacher, TeacherSource};
pub use checkpoint::{Checkpoint, Fingerprint};
pub use config::{MapSelection, ModelConfig, TrainConfig, Variant, LEVELS};
pub use distill::{anomaly_map, pixel_cosine_loss, pixel_l2_loss, scalar_loss, AnomalyMapStack};
pub use detector::Detector;
pub use error::{ModelError, Result};
pub use model::{DskdModel, ForwardOutput, Losses};
pub use eval::{evaluate, Evaluation};
pub use pyramid::{FeaturePyramid, Source};
pub use train::{train, EpochRecord, StepRecord, TrainObserver, TrainOptions, TrainOutcome};
