//! Detection and segmentation metrics: image AUROC, pixel AUROC and the
//! normalized area under the per-region-overlap curve (PRO).

use std::cmp::Ordering;
use std::collections::VecDeque;

use crate::error::{MetricError, ShapeError};
use crate::heatmap::{Heatmap, Mask};

/// False-positive-rate cutoff for PRO integration.
pub const DEFAULT_FPR_LIMIT: f64 = 0.3;

/// Number of quantile thresholds used by [`ThresholdSweep::Quantiles`] by default.
pub const DEFAULT_QUANTILE_THRESHOLDS: usize = 200;

/// Scores with binary labels (`false` = normal, `true` = anomalous).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledScores {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl LabeledScores {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self, MetricError> {
        if scores.len() != labels.len() {
            return Err(MetricError::LengthMismatch {
                scores: scores.len(),
                labels: labels.len(),
            });
        }
        Ok(Self { scores, labels })
    }

    pub fn push(&mut self, score: f64, label: bool) {
        self.scores.push(score);
        self.labels.push(label);
    }
}

/// A predicted map with its ground-truth mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationPair {
    pub map: Heatmap,
    pub mask: Mask,
}

impl SegmentationPair {
    pub fn new(map: Heatmap, mask: Mask) -> Result<Self, ShapeError> {
        if map.shape() != mask.shape() {
            return Err(ShapeError::Mismatch {
                expected: mask.shape(),
                actual: map.shape(),
            });
        }
        Ok(Self { map, mask })
    }
}

fn descending(a: f64, b: f64) -> Ordering {
    b.total_cmp(&a)
}

/// Exact AUROC as a rank statistic: the fraction of (positive, negative)
/// pairs ordered correctly, ties counted as one half.
pub fn auroc(data: &LabeledScores) -> Result<f64, MetricError> {
    if data.scores.len() != data.labels.len() {
        return Err(MetricError::LengthMismatch {
            scores: data.scores.len(),
            labels: data.labels.len(),
        });
    }
    if data.scores.iter().any(|s| s.is_nan()) {
        return Err(MetricError::InvalidArgument("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..data.scores.len()).collect();
    order.sort_unstable_by(|&a, &b| descending(data.scores[a], data.scores[b]));

    let positives = data.labels.iter().filter(|&&l| l).count();
    let negatives = data.labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricError::Undefined("AUROC needs both classes"));
    }

    // Sweep tie groups from the highest score down; every negative in a group
    // beats none of the positives above it and ties with the group's positives.
    let mut positives_above = 0u64;
    let mut twice_area = 0u128;
    let mut i = 0;
    while i < order.len() {
        let value = data.scores[order[i]];
        let (mut p, mut n) = (0u64, 0u64);
        while i < order.len() && data.scores[order[i]] == value {
            if data.labels[order[i]] {
                p += 1;
            } else {
                n += 1;
            }
            i += 1;
        }
        twice_area += n as u128 * (2 * positives_above + p) as u128;
        positives_above += p;
    }
    Ok(twice_area as f64 / (2.0 * positives as f64 * negatives as f64))
}

/// AUROC over every pixel of every pair, pooled.
pub fn pixel_auroc(pairs: &[SegmentationPair]) -> Result<f64, MetricError> {
    let total: usize = pairs.iter().map(|p| p.map.data().len()).sum();
    let mut pooled = LabeledScores {
        scores: Vec::with_capacity(total),
        labels: Vec::with_capacity(total),
    };
    for pair in pairs {
        check_pair(pair)?;
        pooled
            .scores
            .extend(pair.map.data().iter().map(|&v| v as f64));
        pooled.labels.extend_from_slice(pair.mask.data());
    }
    auroc(&pooled)
}

fn check_pair(pair: &SegmentationPair) -> Result<(), ShapeError> {
    if pair.map.shape() != pair.mask.shape() {
        return Err(ShapeError::Mismatch {
            expected: pair.mask.shape(),
            actual: pair.map.shape(),
        });
    }
    Ok(())
}

/// 8-connected components of a binary mask, in raster order of their first
/// pixel. Each component lists `(row, col)` coordinates.
pub fn connected_components(mask: &Mask) -> Vec<Vec<(usize, usize)>> {
    let (h, w) = mask.shape();
    let mut seen = vec![false; h * w];
    let mut components = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if !mask.data()[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut component = Vec::new();
        while let Some(idx) = queue.pop_front() {
            let (y, x) = (idx / w, idx % w);
            component.push((y, x));
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                    if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                        continue;
                    }
                    let n = ny as usize * w + nx as usize;
                    if mask.data()[n] && !seen[n] {
                        seen[n] = true;
                        queue.push_back(n);
                    }
                }
            }
        }
        components.push(component);
    }
    components
}

/// How thresholds are chosen for the PRO curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdSweep {
    /// Every distinct map value.
    Exact,
    /// `n` thresholds at uniformly spaced quantiles of the pooled map values.
    Quantiles(usize),
}

/// Achieved `(fpr, mean region overlap)` points in non-decreasing FPR order,
/// starting at `(0, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProCurve {
    pub points: Vec<(f64, f64)>,
}

impl ProCurve {
    /// Trapezoidal area over `[0, fpr_limit]`, linearly interpolated at the
    /// limit and divided by it.
    pub fn normalized_area(&self, fpr_limit: f64) -> Result<f64, MetricError> {
        if !(fpr_limit > 0.0 && fpr_limit <= 1.0) {
            return Err(MetricError::InvalidArgument(format!(
                "fpr limit must lie in (0, 1], got {fpr_limit}"
            )));
        }
        let mut area = 0.0;
        for pair in self.points.windows(2) {
            let ((x0, y0), (x1, y1)) = (pair[0], pair[1]);
            if x0 >= fpr_limit {
                break;
            }
            if x1 <= fpr_limit {
                area += (x1 - x0) * (y0 + y1) / 2.0;
            } else {
                let y_at = y0 + (y1 - y0) * (fpr_limit - x0) / (x1 - x0);
                area += (fpr_limit - x0) * (y0 + y_at) / 2.0;
                break;
            }
        }
        Ok(area / fpr_limit)
    }
}

enum PixelKind {
    Normal,
    Region(usize),
}

/// Builds the per-region-overlap curve over all pairs.
///
/// Regions are the 8-connected components of every mask; each region
/// contributes equally to the mean overlap regardless of its size.
pub fn pro_curve(pairs: &[SegmentationPair], sweep: ThresholdSweep) -> Result<ProCurve, MetricError> {
    let mut region_sizes = Vec::new();
    let mut pixels: Vec<(f32, PixelKind)> = Vec::new();
    for pair in pairs {
        check_pair(pair)?;
        let w = pair.mask.width();
        let mut region_of = vec![usize::MAX; pair.mask.data().len()];
        for component in connected_components(&pair.mask) {
            let id = region_sizes.len();
            region_sizes.push(component.len());
            for (y, x) in component {
                region_of[y * w + x] = id;
            }
        }
        for (idx, &value) in pair.map.data().iter().enumerate() {
            if value.is_nan() {
                return Err(MetricError::InvalidArgument("NaN in anomaly map".into()));
            }
            let kind = match region_of[idx] {
                usize::MAX => PixelKind::Normal,
                id => PixelKind::Region(id),
            };
            pixels.push((value, kind));
        }
    }
    if region_sizes.is_empty() {
        return Err(MetricError::Undefined("PRO needs at least one anomalous region"));
    }
    let normal_total = pixels
        .iter()
        .filter(|(_, k)| matches!(k, PixelKind::Normal))
        .count();
    if normal_total == 0 {
        return Err(MetricError::Undefined("PRO needs at least one normal pixel"));
    }
    pixels.sort_unstable_by(|a, b| b.0.total_cmp(&a.0));

    let cutoffs = match sweep {
        ThresholdSweep::Exact => None,
        ThresholdSweep::Quantiles(n) => {
            if n < 2 {
                return Err(MetricError::InvalidArgument(
                    "quantile sweep needs at least two thresholds".into(),
                ));
            }
            // Quantile levels from high to low, each snapped to an actual map value.
            let last = pixels.len() - 1;
            let mut values: Vec<f32> = (0..n)
                .map(|i| {
                    let q = i as f64 / (n - 1) as f64;
                    pixels[(q * last as f64).round() as usize].0
                })
                .collect();
            values.dedup();
            Some(values)
        }
    };

    let region_count = region_sizes.len() as f64;
    let mut false_positives = 0usize;
    let mut overlap_sum = 0.0f64;
    let mut points = vec![(0.0, 0.0)];
    let mut next_cutoff = 0usize;
    let mut i = 0;
    while i < pixels.len() {
        let value = pixels[i].0;
        while i < pixels.len() && pixels[i].0 == value {
            match pixels[i].1 {
                PixelKind::Normal => false_positives += 1,
                PixelKind::Region(id) => overlap_sum += 1.0 / region_sizes[id] as f64,
            }
            i += 1;
        }
        let emit = match &cutoffs {
            None => true,
            Some(c) => {
                // Thresholds are map values, so they coincide with tie-group ends.
                let mut hit = false;
                while next_cutoff < c.len() && c[next_cutoff] >= value {
                    hit = true;
                    next_cutoff += 1;
                }
                hit
            }
        };
        if emit {
            points.push((
                false_positives as f64 / normal_total as f64,
                overlap_sum / region_count,
            ));
        }
    }
    Ok(ProCurve { points })
}

/// Normalized PRO over `[0, fpr_limit]` using the exact threshold sweep.
pub fn pro(pairs: &[SegmentationPair], fpr_limit: f64) -> Result<f64, MetricError> {
    pro_with_sweep(pairs, fpr_limit, ThresholdSweep::Exact)
}

pub fn pro_with_sweep(
    pairs: &[SegmentationPair],
    fpr_limit: f64,
    sweep: ThresholdSweep,
) -> Result<f64, MetricError> {
    pro_curve(pairs, sweep)?.normalized_area(fpr_limit)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(s: &[f64], l: &[u8]) -> LabeledScores {
        LabeledScores::new(s.to_vec(), l.iter().map(|&v| v == 1).collect()).unwrap()
    }

    #[test]
    fn auroc_basic_cases() {
        assert_eq!(auroc(&scores(&[0.9, 0.8], &[1, 0])).unwrap(), 1.0);
        assert_eq!(auroc(&scores(&[0.8, 0.9], &[1, 0])).unwrap(), 0.0);
        assert_eq!(auroc(&scores(&[0.5, 0.5], &[1, 0])).unwrap(), 0.5);
    }

    #[test]
    fn auroc_single_class_is_undefined() {
        assert!(matches!(
            auroc(&scores(&[0.1, 0.2], &[0, 0])),
            Err(MetricError::Undefined(_))
        ));
        assert!(auroc(&scores(&[], &[])).is_err());
        assert!(LabeledScores::new(vec![0.1], vec![]).is_err());
    }

    fn mask_from(rows: &[&str]) -> Mask {
        let h = rows.len();
        let w = rows[0].len();
        let data = rows.iter().flat_map(|r| r.chars().map(|c| c == '#')).collect();
        Mask::new(h, w, data).unwrap()
    }

    #[test]
    fn components_edge_cases() {
        assert!(connected_components(&Mask::empty(3, 3)).is_empty());
        let full = Mask::new(3, 4, vec![true; 12]).unwrap();
        let cc = connected_components(&full);
        assert_eq!(cc.len(), 1);
        assert_eq!(cc[0].len(), 12);
        let diag = mask_from(&["#.", ".#"]);
        assert_eq!(connected_components(&diag).len(), 1);
    }

    #[test]
    fn components_partition_support() {
        let m = mask_from(&["##..#", "....#", ".#...", "....."]);
        let cc = connected_components(&m);
        assert_eq!(cc.len(), 3);
        let total: usize = cc.iter().map(|c| c.len()).sum();
        assert_eq!(total, m.count());
    }

    #[test]
    fn pixel_auroc_cases() {
        let mask = mask_from(&["##..", "##..", "....", "...#"]);
        let perfect = SegmentationPair::new(mask.to_heatmap(), mask.clone()).unwrap();
        assert_eq!(pixel_auroc(&[perfect]).unwrap(), 1.0);
        let inverted = SegmentationPair::new(mask.to_heatmap().map(|v| 1.0 - v), mask.clone()).unwrap();
        assert_eq!(pixel_auroc(&[inverted]).unwrap(), 0.0);
        let constant = SegmentationPair::new(Heatmap::filled(4, 4, 0.3), mask).unwrap();
        assert_eq!(pixel_auroc(&[constant]).unwrap(), 0.5);
    }

    #[test]
    fn pro_perfect_map_is_one() {
        let mask = mask_from(&["....", ".##.", ".##.", "...."]);
        let pair = SegmentationPair::new(mask.to_heatmap(), mask).unwrap();
        assert!((pro(&[pair], DEFAULT_FPR_LIMIT).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pro_constant_map_interpolates_the_single_tie_jump() {
        // One tie group: the curve jumps from (0, 0) to (1, 1). Linear
        // interpolation at 0.3 gives overlap 0.3, area 0.045, normalized 0.15.
        let mask = mask_from(&["....", ".##.", ".##.", "...."]);
        let pair = SegmentationPair::new(Heatmap::zeros(4, 4), mask).unwrap();
        let value = pro(&[pair], DEFAULT_FPR_LIMIT).unwrap();
        assert!((value - 0.15).abs() < 1e-12, "{value}");
    }

    #[test]
    fn pro_without_regions_is_undefined() {
        let pair = SegmentationPair::new(Heatmap::zeros(3, 3), Mask::empty(3, 3)).unwrap();
        assert!(matches!(pro(&[pair], 0.3), Err(MetricError::Undefined(_))));
    }

    #[test]
    fn pro_rejects_bad_limit() {
        let mask = mask_from(&["#.", ".."]);
        let pair = SegmentationPair::new(mask.to_heatmap(), mask).unwrap();
        assert!(pro(std::slice::from_ref(&pair), 0.0).is_err());
        assert!(pro(&[pair], 1.5).is_err());
    }

    #[test]
    fn quantile_sweep_points_lie_on_exact_curve() {
        let mask = mask_from(&["##....", "##....", "......", "....#.", "......", "......"]);
        let map = Heatmap::from_fn(6, 6, |y, x| ((y * 7 + x * 3) % 11) as f32 / 11.0);
        let pair = SegmentationPair::new(map, mask).unwrap();
        let exact = pro_curve(std::slice::from_ref(&pair), ThresholdSweep::Exact).unwrap();
        let quant = pro_curve(&[pair], ThresholdSweep::Quantiles(5)).unwrap();
        for p in &quant.points {
            assert!(exact.points.contains(p), "{p:?} not on the exact curve");
        }
        assert_eq!(quant.points.last(), Some(&(1.0, 1.0)));
    }
}
