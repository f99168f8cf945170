//! Inference: per-level maps, upsampling fusion, smoothing, scoring.

use candle_core::Tensor;
use dskd_core::data::PreparedImage;
use dskd_core::postprocess::{fuse_maps, smooth, DEFAULT_SIGMA};
use dskd_core::score::{score_and_classify, AnomalyResult, ScoreCalibration};
use dskd_core::Heatmap;

use crate::config::{MapSelection, LEVELS};
use crate::distill::AnomalyMapStack;
use crate::error::{ModelError, Result};
use crate::model::DskdModel;

/// Images per forward pass during inference.
pub const INFER_BATCH: usize = 8;

/// Raw per-level maps of one image, shallow to deep.
pub type LevelMaps = [Heatmap; LEVELS];

/// Splits a stack of `[batch, h, w]` tensors into per-image level maps.
pub fn stack_to_heatmaps(stack: &AnomalyMapStack) -> Result<Vec<LevelMaps>> {
    if stack.maps.len() != LEVELS {
        return Err(ModelError::Shape(format!(
            "expected {LEVELS} anomaly maps, got {}",
            stack.maps.len()
        )));
    }
    let mut per_level: Vec<Vec<Heatmap>> = Vec::with_capacity(LEVELS);
    for m in &stack.maps {
        let (b, h, w) = m.dims3()?;
        let values = m.flatten_all()?.to_dtype(candle_core::DType::F32)?.to_vec1::<f32>()?;
        per_level.push(
            values
                .chunks_exact(h * w)
                .take(b)
                .map(|c| Heatmap::new(h, w, c.to_vec()))
                .collect::<std::result::Result<_, _>>()?,
        );
    }
    let batch = per_level[0].len();
    if per_level.iter().any(|l| l.len() != batch) {
        return Err(ModelError::Shape("anomaly map levels disagree on batch size".into()));
    }
    let [l1, l2, l3]: [Vec<Heatmap>; LEVELS] = per_level.try_into().expect("level count checked");
    Ok(l1
        .into_iter()
        .zip(l2)
        .zip(l3)
        .map(|((a, b), c)| [a, b, c])
        .collect())
}

/// Upsamples the selected levels to `size x size`, sums them, and smooths.
pub fn fuse_and_smooth(levels: &LevelMaps, maps: MapSelection, size: usize, sigma: f64) -> Result<Heatmap> {
    let chosen: Vec<Heatmap> = (0..LEVELS)
        .filter(|&k| maps.contains(k))
        .map(|k| levels[k].clone())
        .collect();
    let fused = fuse_maps(&chosen, (size, size))?;
    Ok(smooth(&fused, sigma))
}

/// A trained model plus everything needed to turn an image into a decision.
#[derive(Debug)]
pub struct Detector {
    model: DskdModel,
    calibration: ScoreCalibration,
    lambda: f64,
    sigma: f64,
    maps: MapSelection,
}

impl Detector {
    pub fn new(model: DskdModel, calibration: ScoreCalibration, lambda: f64) -> Self {
        Self {
            model,
            calibration,
            lambda,
            sigma: DEFAULT_SIGMA,
            maps: MapSelection::ALL,
        }
    }

    pub fn with_maps(mut self, maps: MapSelection) -> Self {
        self.maps = maps;
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn model(&self) -> &DskdModel {
        &self.model
    }

    pub fn calibration(&self) -> &ScoreCalibration {
        &self.calibration
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn maps(&self) -> MapSelection {
        self.maps
    }

    pub fn input_size(&self) -> usize {
        self.model.config().input_size
    }

    /// Rejects images prepared at a different resolution.
    pub fn check_image(&self, image: &PreparedImage) -> Result<()> {
        if image.size() != self.input_size() {
            return Err(ModelError::Checkpoint(format!(
                "model expects {0}x{0} inputs, image is {1}x{1}",
                self.input_size(),
                image.size()
            )));
        }
        Ok(())
    }

    /// Raw per-level maps for each image, in input order.
    pub fn level_maps(&self, images: &[&PreparedImage]) -> Result<Vec<LevelMaps>> {
        level_maps(&self.model, images, self.lambda)
    }

    /// Fused and smoothed map for each image.
    pub fn anomaly_maps(&self, images: &[&PreparedImage]) -> Result<Vec<Heatmap>> {
        self.level_maps(images)?
            .iter()
            .map(|l| fuse_and_smooth(l, self.maps, self.input_size(), self.sigma))
            .collect()
    }

    pub fn infer(&self, sample_id: &str, image: &PreparedImage) -> Result<AnomalyResult> {
        let map = self.anomaly_maps(&[image])?.pop().expect("one image in, one map out");
        Ok(score_and_classify(sample_id, map, &self.calibration))
    }

    pub fn infer_batch(&self, items: &[(&str, &PreparedImage)]) -> Result<Vec<AnomalyResult>> {
        let images: Vec<&PreparedImage> = items.iter().map(|(_, i)| *i).collect();
        let maps = self.anomaly_maps(&images)?;
        Ok(items
            .iter()
            .zip(maps)
            .map(|((id, _), map)| score_and_classify(*id, map, &self.calibration))
            .collect())
    }
}

/// Stacks prepared images into one `[n, 3, s, s]` tensor.
pub fn images_to_tensor(images: &[&PreparedImage], device: &candle_core::Device) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| ModelError::Shape("no images to batch".into()))?;
    let s = first.size();
    let mut data = Vec::with_capacity(images.len() * 3 * s * s);
    for img in images {
        if img.size() != s {
            return Err(ModelError::Shape(format!(
                "mixed image sizes in one batch: {s} and {}",
                img.size()
            )));
        }
        data.extend_from_slice(img.data());
    }
    Ok(Tensor::from_vec(data, (images.len(), 3, s, s), device)?)
}

/// Per-level inference maps in evaluation mode, batched.
pub fn level_maps(model: &DskdModel, images: &[&PreparedImage], lambda: f64) -> Result<Vec<LevelMaps>> {
    let device = model.params().device().clone();
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(INFER_BATCH) {
        let x = images_to_tensor(chunk, &device)?;
        let fwd = model.forward_t(&x, false)?;
        out.extend(stack_to_heatmaps(&model.inference_maps(&fwd, lambda)?)?);
    }
    Ok(out)
}

/// Calibration from the largest raw score over defect-free images.
pub fn calibrate(
    model: &DskdModel,
    images: &[&PreparedImage],
    lambda: f64,
    sigma: f64,
    maps: MapSelection,
) -> Result<ScoreCalibration> {
    let size = model.config().input_size;
    let scores = level_maps(model, images, lambda)?
        .iter()
        .map(|l| fuse_and_smooth(l, maps, size, sigma).map(|m| f64::from(m.max())))
        .collect::<Result<Vec<f64>>>()?;
    Ok(ScoreCalibration::from_normal_scores(scores)?)
}
