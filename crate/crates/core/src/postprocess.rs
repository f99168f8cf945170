//! Turning per-level discrepancy maps into one denoised, input-sized map.

use crate::error::ShapeError;
use crate::heatmap::Heatmap;

/// Standard deviation of the denoising Gaussian.
pub const DEFAULT_SIGMA: f64 = 4.0;

/// Upsamples every level bilinearly to `target` and sums them.
pub fn fuse_maps(levels: &[Heatmap], target: (usize, usize)) -> Result<Heatmap, ShapeError> {
    if levels.is_empty() {
        return Err(ShapeError::Invalid("cannot fuse an empty map stack".into()));
    }
    let (height, width) = target;
    let mut fused = Heatmap::zeros(height, width);
    for level in levels {
        fused.add_assign(&level.resize_bilinear(height, width))?;
    }
    Ok(fused)
}

/// Truncation radius of the Gaussian kernel: `ceil(4 sigma)`.
pub fn kernel_radius(sigma: f64) -> usize {
    (4.0 * sigma).ceil() as usize
}

/// Sampled 1-D Gaussian, normalized to unit sum, of length `2 * radius + 1`.
pub fn gaussian_kernel_1d(sigma: f64) -> Vec<f64> {
    let radius = kernel_radius(sigma) as i64;
    let denom = 2.0 * sigma * sigma;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / denom).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Half-sample symmetric reflection (`d c b a | a b c d | d c b a`),
/// periodic so arbitrarily wide kernels stay in bounds.
fn reflect(index: i64, len: usize) -> usize {
    let n = len as i64;
    let period = 2 * n;
    let m = index.rem_euclid(period);
    if m < n {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Separable Gaussian filter with reflect padding; output has the input shape.
///
/// # Panics
/// If `sigma` is not strictly positive.
pub fn smooth(map: &Heatmap, sigma: f64) -> Heatmap {
    assert!(sigma > 0.0, "gaussian sigma must be positive, got {sigma}");
    let (h, w) = map.shape();
    if h == 0 || w == 0 {
        return map.clone();
    }
    let kernel = gaussian_kernel_1d(sigma);
    let radius = (kernel.len() / 2) as i64;
    let src = map.data();

    let mut rows = vec![0f64; h * w];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                acc += kv * row[reflect(x as i64 + k as i64 - radius, w)] as f64;
            }
            rows[y * w + x] = acc;
        }
    }

    let mut out = vec![0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                acc += kv * rows[reflect(y as i64 + k as i64 - radius, h) * w + x];
            }
            out[y * w + x] = acc as f32;
        }
    }
    Heatmap::new(h, w, out).expect("shape preserved")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fuse_rejects_empty_stack() {
        assert!(fuse_maps(&[], (8, 8)).is_err());
    }

    #[test]
    fn fuse_of_zero_maps_is_zero() {
        let levels = vec![Heatmap::zeros(16, 16), Heatmap::zeros(8, 8), Heatmap::zeros(4, 4)];
        let fused = fuse_maps(&levels, (64, 64)).unwrap();
        assert_eq!(fused.shape(), (64, 64));
        assert!(fused.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fuse_single_constant_level() {
        let levels = vec![Heatmap::filled(16, 16, 0.5), Heatmap::zeros(8, 8), Heatmap::zeros(4, 4)];
        for target in [(64, 64), (37, 53)] {
            let fused = fuse_maps(&levels, target).unwrap();
            assert!(fused.data().iter().all(|&v| v == 0.5));
        }
    }

    #[test]
    fn fuse_adds_constants() {
        let levels = vec![
            Heatmap::filled(16, 16, 0.1),
            Heatmap::filled(8, 8, 0.2),
            Heatmap::filled(4, 4, 0.3),
        ];
        let fused = fuse_maps(&levels, (64, 64)).unwrap();
        assert!(fused.data().iter().all(|&v| (v - 0.6).abs() < 1e-6));
    }

    #[test]
    fn radius_for_default_sigma() {
        assert_eq!(kernel_radius(DEFAULT_SIGMA), 16);
        let k = gaussian_kernel_1d(DEFAULT_SIGMA);
        assert_eq!(k.len(), 33);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reflect_indices() {
        let idx: Vec<usize> = (-4..8).map(|i| reflect(i, 4)).collect();
        assert_eq!(idx, vec![3, 2, 1, 0, 0, 1, 2, 3, 3, 2, 1, 0]);
        // kernel wider than the signal
        assert_eq!(reflect(-9, 4), 0);
        assert_eq!(reflect(-6, 4), 2);
    }

    #[test]
    fn constant_map_unchanged() {
        let m = Heatmap::filled(20, 31, 2.5);
        let s = smooth(&m, DEFAULT_SIGMA);
        assert!(s.data().iter().all(|&v| (v - 2.5).abs() < 1e-6));
    }

    #[test]
    fn smoothing_tiny_maps_keeps_shape() {
        let m = Heatmap::new(2, 3, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let s = smooth(&m, DEFAULT_SIGMA);
        assert_eq!(s.shape(), (2, 3));
        assert!((s.sum() - 1.0).abs() < 1e-6);
    }

    #[test]
    #[should_panic]
    fn non_positive_sigma_panics() {
        smooth(&Heatmap::zeros(4, 4), 0.0);
    }
}
