//! Image-level anomaly score and the thresholded decision.

use crate::error::ShapeError;
use crate::heatmap::Heatmap;

/// Decision threshold applied to the normalized score.
pub const DECISION_THRESHOLD: f64 = 0.5;

/// Raw-score range used to map scores into `[0, 1]`.
///
/// Produced at the end of training from anomaly-free images only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreCalibration {
    min_score: f64,
    max_score: f64,
}

impl ScoreCalibration {
    pub fn new(min_score: f64, max_score: f64) -> Result<Self, ShapeError> {
        if !(min_score.is_finite() && max_score.is_finite()) || max_score <= min_score {
            return Err(ShapeError::Invalid(format!(
                "degenerate score calibration: min {min_score}, max {max_score}"
            )));
        }
        Ok(Self {
            min_score,
            max_score,
        })
    }

    /// Calibration with `min = 0` and `max` = the largest raw score in `scores`.
    pub fn from_normal_scores(scores: impl IntoIterator<Item = f64>) -> Result<Self, ShapeError> {
        let max = scores.into_iter().fold(f64::NEG_INFINITY, f64::max);
        Self::new(0.0, max)
    }

    pub fn min_score(&self) -> f64 {
        self.min_score
    }

    pub fn max_score(&self) -> f64 {
        self.max_score
    }

    pub fn normalize(&self, raw: f64) -> f64 {
        ((raw - self.min_score) / (self.max_score - self.min_score)).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyResult {
    pub sample_id: String,
    /// Fused and denoised map at input resolution.
    pub map: Heatmap,
    pub raw_score: f64,
    pub normalized_score: f64,
    pub is_anomalous: bool,
}

pub fn score_and_classify(
    sample_id: impl Into<String>,
    map: Heatmap,
    calibration: &ScoreCalibration,
) -> AnomalyResult {
    let raw_score = map.max() as f64;
    let normalized_score = calibration.normalize(raw_score);
    AnomalyResult {
        sample_id: sample_id.into(),
        map,
        raw_score,
        normalized_score,
        is_anomalous: normalized_score >= DECISION_THRESHOLD,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_peak(v: f32) -> Heatmap {
        let mut m = Heatmap::zeros(4, 4);
        m.set(1, 2, v);
        m
    }

    #[test]
    fn degenerate_calibration_rejected() {
        assert!(ScoreCalibration::new(1.0, 1.0).is_err());
        assert!(ScoreCalibration::new(2.0, 1.0).is_err());
        assert!(ScoreCalibration::new(0.0, f64::NAN).is_err());
        assert!(ScoreCalibration::from_normal_scores([0.0, 0.0]).is_err());
    }

    #[test]
    fn endpoints_and_midpoint() {
        let calib = ScoreCalibration::new(0.5, 2.5).unwrap();
        let lo = score_and_classify("a", with_peak(0.5), &calib);
        assert_eq!(lo.normalized_score, 0.0);
        assert!(!lo.is_anomalous);
        let hi = score_and_classify("b", with_peak(2.5), &calib);
        assert_eq!(hi.normalized_score, 1.0);
        assert!(hi.is_anomalous);
        let mid = score_and_classify("c", with_peak(1.5), &calib);
        assert_eq!(mid.normalized_score, 0.5);
        assert!(mid.is_anomalous);
    }

    #[test]
    fn normalized_score_is_clamped() {
        let calib = ScoreCalibration::new(1.0, 2.0).unwrap();
        assert_eq!(score_and_classify("x", with_peak(7.0), &calib).normalized_score, 1.0);
        let below = score_and_classify("y", Heatmap::filled(2, 2, 0.25), &calib);
        assert_eq!(below.normalized_score, 0.0);
        assert_eq!(below.raw_score, 0.25);
    }
}
