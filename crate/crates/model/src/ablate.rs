//! Variant, embedding and map-fusion comparisons under shared data and seed.

use candle_core::Device;
use dskd_core::data::{PreparedImage, Sample};
use dskd_core::report::MetricsRow;

use crate::backbone::Teacher;
use crate::config::{MapSelection, ModelConfig, TrainConfig, Variant};
use crate::detector::level_maps;
use crate::error::Result;
use crate::eval::metrics_for_selection;
use crate::model::DskdModel;
use crate::train::{train, TrainOptions};

/// One network configuration to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Arm {
    pub variant: Variant,
    pub dfe_enabled: bool,
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} dfe={}", self.variant, if self.dfe_enabled { "on" } else { "off" })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub arm: Arm,
    pub maps: MapSelection,
    pub metrics: MetricsRow,
}

pub const ABLATION_HEADER: &str = "variant,dfe,maps,image_auroc,pixel_auroc,pro";

impl AblationRow {
    pub fn to_csv_line(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "undefined".into());
        format!(
            "{},{},{},{},{},{}",
            self.arm.variant,
            self.arm.dfe_enabled,
            self.maps,
            f(self.metrics.image_auroc),
            f(self.metrics.pixel_auroc),
            f(self.metrics.pro)
        )
    }
}

/// Shared inputs of every arm.
#[derive(Debug, Clone)]
pub struct AblationSetup {
    /// Size and width; variant and embedding flag are set per arm.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sigma: f64,
    pub category: String,
    pub teacher: Teacher,
    pub train_images: Vec<PreparedImage>,
    pub test: Vec<Sample>,
}

/// Trains one arm and evaluates it under every map selection.
pub fn run_arm(setup: &AblationSetup, arm: Arm, selections: &[MapSelection], device: &Device) -> Result<Vec<AblationRow>> {
    let config = ModelConfig {
        variant: arm.variant,
        dfe_enabled: arm.dfe_enabled,
        ..setup.model
    };
    let teacher = arm.variant.uses_teacher().then(|| setup.teacher.clone());
    let model = DskdModel::new(&config, teacher, setup.train.seed, device)?;
    let opts = TrainOptions {
        out_dir: None,
        checkpoint_every: 0,
        sigma: setup.sigma,
        maps: MapSelection::ALL,
    };
    let outcome = train(model, &setup.train_images, &setup.train, &opts, &mut ())?;
    let images: Vec<_> = setup.test.iter().map(|s| &s.image).collect();
    let levels = level_maps(&outcome.model, &images, setup.train.lambda)?;
    selections
        .iter()
        .map(|&maps| {
            let metrics = metrics_for_selection(
                &setup.category,
                &levels,
                &setup.test,
                maps,
                config.input_size,
                setup.sigma,
            )?;
            Ok(AblationRow { arm, maps, metrics })
        })
        .collect()
}

/// Runs every arm, in order, optionally on separate threads.
pub fn run_ablation(
    setup: &AblationSetup,
    arms: &[Arm],
    selections: &[MapSelection],
    parallel: bool,
    device: &Device,
) -> Result<Vec<AblationRow>> {
    let per_arm: Vec<Result<Vec<AblationRow>>> = if parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = arms
                .iter()
                .map(|&arm| scope.spawn(move || run_arm(setup, arm, selections, device)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("ablation worker panicked"))
                .collect()
        })
    } else {
        arms.iter().map(|&arm| run_arm(setup, arm, selections, device)).collect()
    };
    let mut rows = Vec::new();
    for r in per_arm {
        rows.extend(r?);
    }
    Ok(rows)
}
