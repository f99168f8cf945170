use dskd_core::postprocess::{fuse_maps, kernel_radius, smooth, DEFAULT_SIGMA};
use dskd_core::score::{score_and_classify, ScoreCalibration, DECISION_THRESHOLD};
use dskd_core::Heatmap;
use proptest::prelude::*;

/// Unnormalized Gaussian samples on `[-r, r]` divided by their sum.
fn analytic_kernel(sigma: f64, r: i64) -> Vec<f64> {
    let g: Vec<f64> = (-r..=r)
        .map(|i| (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

#[test]
fn impulse_response_is_the_sigma_4_kernel() {
    assert_eq!(kernel_radius(DEFAULT_SIGMA), 16);
    let n = 64;
    let c = 32;
    let mut map = Heatmap::zeros(n, n);
    map.set(c, c, 1.0);
    let out = smooth(&map, DEFAULT_SIGMA);
    let k = analytic_kernel(4.0, 16);
    for y in 0..n {
        for x in 0..n {
            let (dy, dx) = (y as i64 - c as i64, x as i64 - c as i64);
            let expected = if dy.abs() <= 16 && dx.abs() <= 16 {
                k[(dy + 16) as usize] * k[(dx + 16) as usize]
            } else {
                0.0
            };
            assert!((out.get(y, x) as f64 - expected).abs() < 1e-6, "({y},{x})");
        }
    }
}

#[test]
fn fused_map_matches_input_shape() {
    for size in [128usize, 256] {
        let levels: Vec<Heatmap> = (1..=3)
            .map(|k| Heatmap::filled(size >> (k + 1), size >> (k + 1), 0.1))
            .collect();
        let fused = fuse_maps(&levels, (size, size)).unwrap();
        assert_eq!(fused.shape(), (size, size));
        assert_eq!(smooth(&fused, DEFAULT_SIGMA).shape(), (size, size));
    }
}

#[test]
fn decision_threshold_is_inclusive() {
    let calib = ScoreCalibration::new(0.0, 2.0).unwrap();
    let at = score_and_classify("a", Heatmap::filled(4, 4, 1.0), &calib);
    assert_eq!(at.normalized_score, DECISION_THRESHOLD);
    assert!(at.is_anomalous);
    let below = score_and_classify("b", Heatmap::filled(4, 4, 0.99), &calib);
    assert!(!below.is_anomalous);
}

fn maps() -> impl Strategy<Value = Heatmap> {
    (4usize..24, 4usize..24).prop_flat_map(|(h, w)| {
        prop::collection::vec(0.0f32..5.0, h * w).prop_map(move |v| Heatmap::new(h, w, v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn smoothing_preserves_mean_and_bounds_max(map in maps(), sigma in 0.5f64..6.0) {
        let out = smooth(&map, sigma);
        prop_assert_eq!(out.shape(), map.shape());
        prop_assert!((out.mean() - map.mean()).abs() < 1e-4);
        prop_assert!(out.max() <= map.max() + 1e-6);
        prop_assert!(out.min() >= map.min() - 1e-6);
    }

    #[test]
    fn raw_score_is_monotone_in_the_map(map in maps(), bump in prop::collection::vec(0.0f32..1.0, 1..4)) {
        let calib = ScoreCalibration::new(0.0, 10.0).unwrap();
        let bigger = map.map(|v| v + bump[0]);
        let a = score_and_classify("a", bigger.clone(), &calib);
        let b = score_and_classify("b", map, &calib);
        prop_assert!(a.raw_score >= b.raw_score);
        prop_assert_eq!(a.raw_score, bigger.max() as f64);
        prop_assert_eq!(a.is_anomalous, a.normalized_score >= DECISION_THRESHOLD);
    }
}
