//! Browser demo over the model-independent pipeline.
//!
//! No network runs in the page. The per-pixel map is a colour-statistics
//! stand-in: squared z-score of each pixel against the channel statistics of
//! the normal training textures. Denoising, scoring and the segmentation
//! metrics are the detector's own.

use dskd_core::metrics::{pixel_auroc, pro, SegmentationPair};
use dskd_core::postprocess::smooth;
use dskd_core::report::{heat_colour, to_u8_levels};
use dskd_core::score::score_and_classify;
use dskd_core::synth::{make_synthetic, SynthConfig};
use dskd_core::{Heatmap, Mask, ScoreCalibration};
use wasm_bindgen::prelude::*;

const TRAIN_IMAGES: usize = 8;
const TEST_IMAGES: usize = 16;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

#[derive(Debug, Clone, Copy)]
struct ColourStats {
    mean: [f32; 3],
    std: [f32; 3],
}

impl ColourStats {
    fn fit<'a>(images: impl Iterator<Item = &'a [u8]>) -> Self {
        let (mut sum, mut sq, mut n) = ([0f64; 3], [0f64; 3], 0f64);
        for raw in images {
            for px in raw.chunks_exact(3) {
                for c in 0..3 {
                    let v = px[c] as f64;
                    sum[c] += v;
                    sq[c] += v * v;
                }
                n += 1.0;
            }
        }
        let mean = sum.map(|s| s / n);
        Self {
            mean: mean.map(|m| m as f32),
            std: std::array::from_fn(|c| ((sq[c] / n - mean[c] * mean[c]).max(1.0)).sqrt() as f32),
        }
    }

    fn map(&self, raw: &[u8], size: usize) -> Heatmap {
        let data = raw
            .chunks_exact(3)
            .map(|px| {
                (0..3)
                    .map(|c| ((px[c] as f32 - self.mean[c]) / self.std[c]).powi(2))
                    .sum::<f32>()
                    / 3.0
            })
            .collect();
        Heatmap::new(size, size, data).expect("one value per pixel")
    }
}

fn rgba_from_rgb(raw: &[u8]) -> Vec<u8> {
    raw.chunks_exact(3).flat_map(|p| [p[0], p[1], p[2], 255]).collect()
}

/// Min-max scaled heat colours.
fn heat_rgba(map: &Heatmap) -> Vec<u8> {
    to_u8_levels(map)
        .into_iter()
        .flat_map(|l| {
            let [r, g, b] = heat_colour(l);
            [r, g, b, 255]
        })
        .collect()
}

#[wasm_bindgen]
pub struct ScoreReport {
    pub raw: f64,
    pub normalized: f64,
    pub anomalous: bool,
}

#[wasm_bindgen]
pub struct SegmentationReport {
    /// NaN when the test set has a single pixel class.
    pub pixel_auroc: f64,
    pub pro: f64,
    pub defective_images: usize,
}

/// One synthetic split: normal training textures plus a mixed test set.
#[wasm_bindgen]
pub struct Scene {
    size: usize,
    stats: ColourStats,
    train_maps: Vec<Heatmap>,
    test: Vec<(Vec<u8>, Option<Mask>, Heatmap)>,
}

#[wasm_bindgen]
impl Scene {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, size: usize, defect_rate: f64) -> Result<Scene, JsError> {
        let ds = make_synthetic(&SynthConfig {
            seed: seed as u64,
            n_train: TRAIN_IMAGES,
            n_test: TEST_IMAGES,
            defect_rate,
            size,
        })
        .map_err(js_err)?;
        let stats = ColourStats::fit(ds.train.iter().map(|s| s.image.as_raw().as_slice()));
        let train_maps = ds.train.iter().map(|s| stats.map(s.image.as_raw(), size)).collect();
        let test = ds
            .test
            .into_iter()
            .map(|s| {
                let map = stats.map(s.image.as_raw(), size);
                (s.image.into_raw(), s.mask, map)
            })
            .collect();
        Ok(Scene {
            size,
            stats,
            train_maps,
            test,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn len(&self) -> usize {
        self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.test.is_empty()
    }

    pub fn is_defective(&self, index: usize) -> bool {
        self.test.get(index).is_some_and(|t| t.1.is_some())
    }

    pub fn image_rgba(&self, index: usize) -> Result<Vec<u8>, JsError> {
        Ok(rgba_from_rgb(&self.entry(index)?.0))
    }

    /// Ground truth in white on black.
    pub fn mask_rgba(&self, index: usize) -> Result<Vec<u8>, JsError> {
        let n = self.size * self.size;
        Ok(match &self.entry(index)?.1 {
            Some(m) => m.data().iter().flat_map(|&v| if v { [255; 4] } else { [0, 0, 0, 255] }).collect(),
            None => [0, 0, 0, 255].repeat(n),
        })
    }

    pub fn heatmap_rgba(&self, index: usize, sigma: f64) -> Result<Vec<u8>, JsError> {
        Ok(heat_rgba(&self.denoised(&self.entry(index)?.2, sigma)))
    }

    /// Calibrated against the largest training score at the same `sigma`.
    pub fn score(&self, index: usize, sigma: f64) -> Result<ScoreReport, JsError> {
        let calib = self.calibration(sigma)?;
        let r = score_and_classify("demo", self.denoised(&self.entry(index)?.2, sigma), &calib);
        Ok(ScoreReport {
            raw: r.raw_score,
            normalized: r.normalized_score,
            anomalous: r.is_anomalous,
        })
    }

    /// Pixel AUROC and PRO over the whole test set.
    pub fn segmentation(&self, sigma: f64, fpr_limit: f64) -> Result<SegmentationReport, JsError> {
        let pairs: Vec<SegmentationPair> = self
            .test
            .iter()
            .map(|(_, mask, map)| {
                let mask = mask.clone().unwrap_or_else(|| Mask::empty(self.size, self.size));
                SegmentationPair::new(self.denoised(map, sigma), mask)
            })
            .collect::<Result<_, _>>()
            .map_err(js_err)?;
        Ok(SegmentationReport {
            pixel_auroc: pixel_auroc(&pairs).unwrap_or(f64::NAN),
            pro: pro(&pairs, fpr_limit).unwrap_or(f64::NAN),
            defective_images: self.test.iter().filter(|t| t.1.is_some()).count(),
        })
    }

    /// Channel means of the fitted normal colour model, in 0..=255.
    pub fn normal_colour(&self) -> Vec<f32> {
        self.stats.mean.to_vec()
    }
}

impl Scene {
    fn entry(&self, index: usize) -> Result<&(Vec<u8>, Option<Mask>, Heatmap), JsError> {
        self.test
            .get(index)
            .ok_or_else(|| JsError::new(&format!("no test image {index}")))
    }

    fn denoised(&self, map: &Heatmap, sigma: f64) -> Heatmap {
        if sigma > 0.0 {
            smooth(map, sigma)
        } else {
            map.clone()
        }
    }

    fn calibration(&self, sigma: f64) -> Result<ScoreCalibration, JsError> {
        ScoreCalibration::from_normal_scores(self.train_maps.iter().map(|m| self.denoised(m, sigma).max() as f64))
            .map_err(js_err)
    }
}
