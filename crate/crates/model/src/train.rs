//! Training loop: seeded shuffling, one Adam step per batch on the sum of
//! the variant's distillation losses, per-epoch telemetry and periodic
//! checkpoints.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::Tensor;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use dskd_core::data::PreparedImage;
use dskd_core::postprocess::DEFAULT_SIGMA;
use dskd_core::score::ScoreCalibration;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::{MapSelection, TrainConfig};
use crate::detector::{calibrate, images_to_tensor};
use crate::error::{ModelError, Result};
use crate::model::DskdModel;

/// ChaCha stream for batch order.
const SHUFFLE_STREAM: u64 = 3;

pub const TELEMETRY_HEADER: &str = "epoch,loss_e,loss_d,wall_seconds";
pub const TELEMETRY_FILE: &str = "losses.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.safetensors";
pub const DEFAULT_CHECKPOINT_EVERY: usize = 50;

/// Losses of one optimizer step, before the update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    /// 1-based across the whole run.
    pub step: usize,
    pub loss_e: Option<f64>,
    pub loss_d: Option<f64>,
}

/// Mean step losses over one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss_e: Option<f64>,
    pub loss_d: Option<f64>,
    /// Seconds since training started.
    pub wall_seconds: f64,
}

impl EpochRecord {
    pub fn to_csv_line(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.8}")).unwrap_or_default();
        format!("{},{},{},{:.3}", self.epoch, f(self.loss_e), f(self.loss_d), self.wall_seconds)
    }
}

pub trait TrainObserver {
    fn on_step(&mut self, _record: &StepRecord) {}
    fn on_epoch(&mut self, _record: &EpochRecord) {}
}

impl TrainObserver for () {}

/// Collects every step record.
#[derive(Debug, Default)]
pub struct StepLog(pub Vec<StepRecord>);

impl TrainObserver for StepLog {
    fn on_step(&mut self, record: &StepRecord) {
        self.0.push(*record);
    }
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    /// Telemetry CSV and checkpoints go here when set.
    pub out_dir: Option<PathBuf>,
    /// Write a checkpoint after every this many epochs (0 disables).
    pub checkpoint_every: usize,
    pub sigma: f64,
    /// Levels fused for the calibration.
    pub maps: MapSelection,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            out_dir: None,
            checkpoint_every: DEFAULT_CHECKPOINT_EVERY,
            sigma: DEFAULT_SIGMA,
            maps: MapSelection::ALL,
        }
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: DskdModel,
    pub calibration: ScoreCalibration,
    pub history: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn checkpoint(&self, cfg: &TrainConfig, opts: &TrainOptions) -> Checkpoint {
        Checkpoint::from_model(&self.model, cfg.lambda, opts.sigma, opts.maps, self.calibration)
    }
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(f64::from(t.to_dtype(candle_core::DType::F32)?.to_scalar::<f32>()?))
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| ModelError::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| ModelError::io(path, e))
}

/// Trains the students of `model` on defect-free `images`.
///
/// The returned calibration is computed in evaluation mode over the same
/// images after the last epoch.
pub fn train(
    model: DskdModel,
    images: &[PreparedImage],
    cfg: &TrainConfig,
    opts: &TrainOptions,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let size = model.config().input_size;
    if let Some(bad) = images.iter().find(|i| i.size() != size) {
        return Err(ModelError::Shape(format!(
            "model expects {size}x{size} inputs, got {0}x{0}",
            bad.size()
        )));
    }
    let device = model.params().device().clone();
    let refs: Vec<&PreparedImage> = images.iter().collect();
    let all = images_to_tensor(&refs, &device)?;

    let mut optimizer = AdamW::new(
        model.trainable_vars(),
        ParamsAdamW {
            lr: cfg.learning_rate,
            beta1: cfg.adam_betas.0,
            beta2: cfg.adam_betas.1,
            eps: 1e-8,
            weight_decay: 0.0,
        },
    )?;

    let telemetry = match &opts.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| ModelError::io(dir, e))?;
            let path = dir.join(TELEMETRY_FILE);
            std::fs::write(&path, format!("{TELEMETRY_HEADER}\n")).map_err(|e| ModelError::io(&path, e))?;
            Some(path)
        }
        None => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut order: Vec<u32> = (0..images.len() as u32).collect();
    let start = Instant::now();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    let mut calibration = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum_e, mut sum_d, mut batches) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            let idx = Tensor::new(chunk, &device)?;
            let x = all.index_select(&idx, 0)?;
            let out = model.forward_t(&x, true)?;
            let losses = model.losses(&out, cfg.lambda)?;
            let loss_e = losses.encoder.as_ref().map(scalar).transpose()?;
            let loss_d = losses.decoder.as_ref().map(scalar).transpose()?;
            if !loss_e.unwrap_or(0.0).is_finite() || !loss_d.unwrap_or(0.0).is_finite() {
                return Err(ModelError::NonFiniteLoss {
                    epoch,
                    step,
                    loss_e: loss_e.unwrap_or(f64::NAN),
                    loss_d: loss_d.unwrap_or(f64::NAN),
                });
            }
            observer.on_step(&StepRecord {
                epoch,
                step,
                loss_e,
                loss_d,
            });
            optimizer.backward_step(&losses.total()?)?;
            sum_e += loss_e.unwrap_or(0.0);
            sum_d += loss_d.unwrap_or(0.0);
            batches += 1;
        }
        let n = batches as f64;
        let variant = model.config().variant;
        let record = EpochRecord {
            epoch,
            loss_e: variant.trains_encoder().then_some(sum_e / n),
            loss_d: variant.has_decoder().then_some(sum_d / n),
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        if let Some(path) = &telemetry {
            append_line(path, &record.to_csv_line())?;
        }
        observer.on_epoch(&record);
        history.push(record);

        let periodic = opts.checkpoint_every > 0 && epoch % opts.checkpoint_every == 0;
        if epoch == cfg.epochs || (periodic && opts.out_dir.is_some()) {
            let calib = calibrate(&model, &refs, cfg.lambda, opts.sigma, opts.maps)?;
            if let Some(dir) = &opts.out_dir {
                Checkpoint::from_model(&model, cfg.lambda, opts.sigma, opts.maps, calib).save(&dir.join(CHECKPOINT_FILE))?;
            }
            calibration = Some(calib);
        }
    }

    Ok(TrainOutcome {
        model,
        calibration: calibration.expect("last epoch always calibrates"),
        history,
    })
}
