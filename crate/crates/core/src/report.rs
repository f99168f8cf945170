//! Result files: per-sample score CSV, per-category metric CSV and heatmap PNGs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};

use crate::data::Label;
use crate::error::DataError;
use crate::heatmap::Heatmap;
use crate::score::AnomalyResult;

pub const RESULTS_HEADER: &str = "sample_id,raw_score,normalized_score,is_anomalous,label";
pub const METRICS_HEADER: &str = "category,image_auroc,pixel_auroc,pro";

/// Blend weight of the heat colours over the input image.
pub const OVERLAY_ALPHA: f32 = 0.5;

/// Metric values for one category; `None` where a metric is undefined
/// (for example image AUROC on a test split without anomalies).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub category: String,
    pub image_auroc: Option<f64>,
    pub pixel_auroc: Option<f64>,
    pub pro: Option<f64>,
}

fn fmt_metric(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.6}"),
        None => "undefined".to_string(),
    }
}

impl MetricsRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{}",
            self.category,
            fmt_metric(self.image_auroc),
            fmt_metric(self.pixel_auroc),
            fmt_metric(self.pro)
        )
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), DataError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| DataError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| DataError::io(path, e))
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<(), DataError> {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv_line());
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn write_results_csv(path: &Path, rows: &[(AnomalyResult, Label)]) -> Result<(), DataError> {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for (result, label) in rows {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{},{}",
            result.sample_id,
            result.raw_score,
            result.normalized_score,
            u8::from(result.is_anomalous),
            label.as_u8()
        );
    }
    write_text(path, &out)
}

/// Per-image min-max scaling to `0..=255`; a flat map becomes all zeros.
pub fn to_u8_levels(map: &Heatmap) -> Vec<u8> {
    let (lo, hi) = (map.min(), map.max());
    let span = hi - lo;
    map.data()
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })
        .collect()
}

/// Blue-cyan-yellow-red ramp for a level in `0..=255`.
pub fn heat_colour(level: u8) -> [u8; 3] {
    let t = level as f32 / 255.0;
    let r = (1.5 - (4.0 * t - 3.0).abs()).clamp(0.0, 1.0);
    let g = (1.5 - (4.0 * t - 2.0).abs()).clamp(0.0, 1.0);
    let b = (1.5 - (4.0 * t - 1.0).abs()).clamp(0.0, 1.0);
    [(r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8]
}

pub fn heatmap_gray(map: &Heatmap) -> GrayImage {
    let levels = to_u8_levels(map);
    GrayImage::from_fn(map.width() as u32, map.height() as u32, |x, y| {
        Luma([levels[y as usize * map.width() + x as usize]])
    })
}

/// Heat colours blended over `base` with [`OVERLAY_ALPHA`].
pub fn heatmap_overlay(map: &Heatmap, base: &RgbImage) -> Result<RgbImage, DataError> {
    if base.dimensions() != (map.width() as u32, map.height() as u32) {
        return Err(crate::error::ShapeError::Mismatch {
            expected: map.shape(),
            actual: (base.height() as usize, base.width() as usize),
        }
        .into());
    }
    let levels = to_u8_levels(map);
    Ok(RgbImage::from_fn(base.width(), base.height(), |x, y| {
        let heat = heat_colour(levels[y as usize * map.width() + x as usize]);
        let src = base.get_pixel(x, y);
        Rgb(std::array::from_fn(|c| {
            (OVERLAY_ALPHA * heat[c] as f32 + (1.0 - OVERLAY_ALPHA) * src[c] as f32).round() as u8
        }))
    }))
}

/// Writes `<dir>/<sample_id>_amap.png`, grayscale or blended over `overlay`.
pub fn save_heatmap_png(
    dir: &Path,
    sample_id: &str,
    map: &Heatmap,
    overlay: Option<&RgbImage>,
) -> Result<std::path::PathBuf, DataError> {
    fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    let path = dir.join(format!("{sample_id}_amap.png"));
    let result = match overlay {
        None => heatmap_gray(map).save(&path),
        Some(base) => heatmap_overlay(map, base)?.save(&path),
    };
    result.map_err(|source| DataError::Encode {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn levels_span_full_range() {
        let m = Heatmap::new(1, 3, vec![2.0, 3.0, 4.0]).unwrap();
        assert_eq!(to_u8_levels(&m), vec![0, 128, 255]);
        assert_eq!(to_u8_levels(&Heatmap::filled(2, 2, 1.0)), vec![0; 4]);
    }

    #[test]
    fn undefined_metrics_are_spelled_out() {
        let row = MetricsRow {
            category: "bottle".into(),
            image_auroc: None,
            pixel_auroc: Some(0.5),
            pro: Some(0.25),
        };
        assert_eq!(row.to_csv_line(), "bottle,undefined,0.500000,0.250000");
    }

    #[test]
    fn writes_heatmap_files() {
        let dir = tempfile::tempdir().unwrap();
        let map = Heatmap::from_fn(8, 8, |y, x| (y * x) as f32);
        let plain = save_heatmap_png(dir.path(), "s1", &map, None).unwrap();
        assert!(plain.ends_with("s1_amap.png"));
        let decoded = image::open(&plain).unwrap().to_luma8();
        assert_eq!(decoded.get_pixel(7, 7)[0], 255);
        let base = RgbImage::new(8, 8);
        save_heatmap_png(dir.path(), "s2", &map, Some(&base)).unwrap();
        assert!(save_heatmap_png(dir.path(), "s3", &map, Some(&RgbImage::new(4, 4))).is_err());
    }
}
