use dskd_core::metrics::{
    auroc, pixel_auroc, pro, pro_with_sweep, LabeledScores, SegmentationPair, ThresholdSweep,
    DEFAULT_FPR_LIMIT,
};
use dskd_core::{Heatmap, Mask};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// O(n^2) pair count with ties as one half.
fn pairwise_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            den += 1.0;
            if si > sj {
                num += 1.0;
            } else if si == sj {
                num += 0.5;
            }
        }
    }
    num / den
}

/// Flood fill over the 8-neighbourhood, independent of the library's labelling.
fn regions(mask: &Mask) -> Vec<Vec<usize>> {
    let (h, w) = mask.shape();
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    for start in 0..h * w {
        if seen[start] || !mask.data()[start] {
            continue;
        }
        let mut stack = vec![start];
        seen[start] = true;
        let mut region = Vec::new();
        while let Some(p) = stack.pop() {
            region.push(p);
            let (y, x) = ((p / w) as i64, (p % w) as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                        continue;
                    }
                    let q = ny as usize * w + nx as usize;
                    if !seen[q] && mask.data()[q] {
                        seen[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
        out.push(region);
    }
    out
}

/// Thresholds every distinct value, binarizes, and integrates the
/// (fpr, mean overlap) curve with a trapezoid clipped at `limit`.
fn brute_force_pro(pairs: &[(Heatmap, Mask)], limit: f64) -> f64 {
    let mut thresholds: Vec<f32> = pairs.iter().flat_map(|(m, _)| m.data().to_vec()).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let all_regions: Vec<(usize, Vec<usize>)> = pairs
        .iter()
        .enumerate()
        .flat_map(|(i, (_, mask))| regions(mask).into_iter().map(move |r| (i, r)))
        .collect();
    let normals: usize = pairs.iter().map(|(_, m)| m.data().len() - m.count()).sum();
    let mut curve = vec![(0.0, 0.0)];
    for t in thresholds {
        let fp: usize = pairs
            .iter()
            .map(|(map, mask)| {
                map.data()
                    .iter()
                    .zip(mask.data())
                    .filter(|(&v, &m)| v >= t && !m)
                    .count()
            })
            .sum();
        let overlap: f64 = all_regions
            .iter()
            .map(|(i, r)| {
                let map = &pairs[*i].0;
                r.iter().filter(|&&p| map.data()[p] >= t).count() as f64 / r.len() as f64
            })
            .sum::<f64>()
            / all_regions.len() as f64;
        curve.push((fp as f64 / normals as f64, overlap));
    }
    let mut area = 0.0;
    for w in curve.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x0 >= limit {
            break;
        }
        if x1 <= limit {
            area += (x1 - x0) * (y0 + y1) / 2.0;
        } else {
            let y = y0 + (y1 - y0) * (limit - x0) / (x1 - x0);
            area += (limit - x0) * (y0 + y) / 2.0;
            break;
        }
    }
    area / limit
}

fn random_pair(rng: &mut ChaCha8Rng, n: usize) -> (Heatmap, Mask) {
    // Coarse levels so ties occur.
    let map = Heatmap::from_fn(n, n, |_, _| rng.random_range(0..12) as f32 / 4.0);
    let mut mask = Mask::empty(n, n);
    for _ in 0..rng.random_range(1..4) {
        let (y0, x0) = (rng.random_range(0..n), rng.random_range(0..n));
        let (h, w) = (rng.random_range(1..6), rng.random_range(1..6));
        for y in y0..(y0 + h).min(n) {
            for x in x0..(x0 + w).min(n) {
                mask.set(y, x, true);
            }
        }
    }
    (map, mask)
}

#[test]
fn auroc_matches_pairwise_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let n = rng.random_range(2..=200);
        let scores: Vec<f64> = (0..n).map(|_| (rng.random_range(0..50) as f64) / 7.0).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        let got = auroc(&LabeledScores::new(scores.clone(), labels.clone()).unwrap()).unwrap();
        assert!((got - pairwise_auroc(&scores, &labels)).abs() < 1e-9);
    }
}

#[test]
fn pro_matches_brute_force_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let (map, mask) = random_pair(&mut rng, 16);
        let expected = brute_force_pro(&[(map.clone(), mask.clone())], DEFAULT_FPR_LIMIT);
        let got = pro(&[SegmentationPair::new(map, mask).unwrap()], DEFAULT_FPR_LIMIT).unwrap();
        assert!((got - expected).abs() < 1e-6, "{got} vs {expected}");
    }
}

#[test]
fn quantile_sweep_approaches_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let pairs: Vec<_> = (0..4)
        .map(|_| {
            let (_, mask) = random_pair(&mut rng, 32);
            let map = Heatmap::from_fn(32, 32, |y, x| {
                rng.random::<f32>() + if mask.get(y, x) { 0.5 } else { 0.0 }
            });
            SegmentationPair::new(map, mask).unwrap()
        })
        .collect();
    let exact = pro(&pairs, 0.3).unwrap();
    let approx = pro_with_sweep(&pairs, 0.3, ThresholdSweep::Quantiles(200)).unwrap();
    assert!((exact - approx).abs() < 0.02, "{exact} vs {approx}");
}

#[test]
fn single_class_auroc_is_undefined() {
    let s = LabeledScores::new(vec![0.1, 0.2], vec![false, false]).unwrap();
    assert!(matches!(auroc(&s), Err(dskd_core::MetricError::Undefined(_))));
}

fn scored_sets() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (3usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(-5.0f64..5.0, n),
            prop::collection::vec(any::<bool>(), n),
        )
    })
    .prop_map(|(s, mut l)| {
        l[0] = true;
        l[1] = false;
        (s, l)
    })
}

fn map_mask(n: usize) -> impl Strategy<Value = (Heatmap, Mask)> {
    (
        prop::collection::vec(0.0f32..4.0, n * n),
        prop::collection::vec(prop::bool::weighted(0.3), n * n),
    )
        .prop_map(move |(v, mut m)| {
            m[0] = true;
            m[1] = false;
            (Heatmap::new(n, n, v).unwrap(), Mask::new(n, n, m).unwrap())
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn auroc_invariant_under_increasing_maps((scores, labels) in scored_sets(), a in 0.1f64..10.0, b in -3.0f64..3.0) {
        let base = auroc(&LabeledScores::new(scores.clone(), labels.clone()).unwrap()).unwrap();
        let exp: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        let affine: Vec<f64> = scores.iter().map(|s| a * s + b).collect();
        for t in [exp, affine] {
            let v = auroc(&LabeledScores::new(t, labels.clone()).unwrap()).unwrap();
            prop_assert!((v - base).abs() < 1e-9);
        }
    }

    #[test]
    fn auroc_complement_sums_to_one((scores, labels) in scored_sets()) {
        let mut distinct = scores.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        prop_assume!(distinct.len() == scores.len());
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        let a = auroc(&LabeledScores::new(scores.clone(), labels).unwrap()).unwrap();
        let b = auroc(&LabeledScores::new(scores, flipped).unwrap()).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pixel_auroc_equals_flattened_auroc(pairs in prop::collection::vec(map_mask(6), 1..4)) {
        let seg: Vec<_> = pairs.iter().map(|(m, k)| SegmentationPair::new(m.clone(), k.clone()).unwrap()).collect();
        let scores: Vec<f64> = pairs.iter().flat_map(|(m, _)| m.data().iter().map(|&v| v as f64)).collect();
        let labels: Vec<bool> = pairs.iter().flat_map(|(_, k)| k.data().to_vec()).collect();
        let flat = auroc(&LabeledScores::new(scores, labels).unwrap()).unwrap();
        prop_assert_eq!(pixel_auroc(&seg).unwrap(), flat);
    }

    #[test]
    fn pro_bounded_and_monotone_in_limit((map, mask) in map_mask(8), a in 0.05f64..1.0, b in 0.05f64..1.0) {
        let pair = [SegmentationPair::new(map, mask).unwrap()];
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let p_lo = pro(&pair, lo).unwrap();
        let p_hi = pro(&pair, hi).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&p_lo));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&p_hi));
        // Normalized area is an average of a non-decreasing curve, so it cannot drop.
        prop_assert!(p_hi + 1e-12 >= p_lo);
    }

    #[test]
    fn metrics_invariant_under_monotone_map_transform((map, mask) in map_mask(8)) {
        let pair = [SegmentationPair::new(map.clone(), mask.clone()).unwrap()];
        let moved = [SegmentationPair::new(map.map(|v| 4.0 * v), mask).unwrap()];
        prop_assert!((pixel_auroc(&pair).unwrap() - pixel_auroc(&moved).unwrap()).abs() < 1e-9);
        prop_assert!((pro(&pair, 0.3).unwrap() - pro(&moved, 0.3).unwrap()).abs() < 1e-9);
    }
}
