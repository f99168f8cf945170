//! Test-split evaluation: image AUROC on raw scores, pooled pixel AUROC and
//! PRO on the raw fused maps.

use dskd_core::data::{Label, Sample};
use dskd_core::metrics::{auroc, pixel_auroc, pro_with_sweep, LabeledScores, SegmentationPair, ThresholdSweep};
use dskd_core::metrics::{DEFAULT_FPR_LIMIT, DEFAULT_QUANTILE_THRESHOLDS};
use dskd_core::report::MetricsRow;
use dskd_core::score::{score_and_classify, AnomalyResult};
use dskd_core::{Heatmap, Mask, MetricError};

use crate::config::MapSelection;
use crate::detector::{fuse_and_smooth, Detector, LevelMaps};
use crate::error::Result;

/// Above this many pooled pixels PRO switches from the exact threshold
/// sweep to quantile thresholds.
pub const EXACT_PRO_MAX_PIXELS: usize = 1 << 22;

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub metrics: MetricsRow,
    pub results: Vec<(AnomalyResult, Label)>,
}

fn defined(r: std::result::Result<f64, MetricError>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(MetricError::Undefined(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Metrics for fused maps aligned with `samples`.
pub fn metrics_for(category: &str, maps: &[Heatmap], samples: &[Sample]) -> Result<MetricsRow> {
    let mut scores = LabeledScores::default();
    let mut pairs = Vec::with_capacity(samples.len());
    for (map, sample) in maps.iter().zip(samples) {
        scores.push(f64::from(map.max()), sample.label.is_anomalous());
        let mask = sample
            .mask
            .clone()
            .unwrap_or_else(|| Mask::empty(map.height(), map.width()));
        pairs.push(SegmentationPair::new(map.clone(), mask)?);
    }
    let pixels: usize = maps.iter().map(|m| m.height() * m.width()).sum();
    let sweep = if pixels <= EXACT_PRO_MAX_PIXELS {
        ThresholdSweep::Exact
    } else {
        ThresholdSweep::Quantiles(DEFAULT_QUANTILE_THRESHOLDS)
    };
    Ok(MetricsRow {
        category: category.to_string(),
        image_auroc: defined(auroc(&scores))?,
        pixel_auroc: defined(pixel_auroc(&pairs))?,
        pro: defined(pro_with_sweep(&pairs, DEFAULT_FPR_LIMIT, sweep))?,
    })
}

/// Fuses cached level maps under `maps` and scores them.
pub fn metrics_for_selection(
    category: &str,
    levels: &[LevelMaps],
    samples: &[Sample],
    maps: MapSelection,
    size: usize,
    sigma: f64,
) -> Result<MetricsRow> {
    let fused = levels
        .iter()
        .map(|l| fuse_and_smooth(l, maps, size, sigma))
        .collect::<Result<Vec<_>>>()?;
    metrics_for(category, &fused, samples)
}

/// Runs the detector over every sample and computes the category metrics.
pub fn evaluate(detector: &Detector, category: &str, samples: &[Sample]) -> Result<Evaluation> {
    for s in samples {
        detector.check_image(&s.image)?;
    }
    let images: Vec<_> = samples.iter().map(|s| &s.image).collect();
    let maps = detector.anomaly_maps(&images)?;
    let metrics = metrics_for(category, &maps, samples)?;
    let results = samples
        .iter()
        .zip(maps)
        .map(|(s, map)| (score_and_classify(s.sample_id.clone(), map, detector.calibration()), s.label))
        .collect();
    Ok(Evaluation { metrics, results })
}
