//! Procedural texture dataset with injected defects and exact masks.
//!
//! Normal images share one palette and one oriented grain pattern, varied by
//! per-image value noise. Defects are rectangles, scratches or blobs painted
//! in colours outside that palette. Everything derives from a single seed.

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{PreparedImage, RawSample, GOOD};
use crate::error::{DataError, ShapeError};
use crate::heatmap::Mask;

pub const CATEGORY: &str = "synthetic";

const PALETTE_DARK: [f32; 3] = [96.0, 70.0, 48.0];
const PALETTE_LIGHT: [f32; 3] = [196.0, 160.0, 112.0];
const DEFECT_COLOURS: [[f32; 3]; 4] = [
    [40.0, 170.0, 200.0],
    [210.0, 40.0, 50.0],
    [24.0, 24.0, 30.0],
    [236.0, 236.0, 240.0],
];
const DEFECT_OPACITY: f32 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    /// Fraction of test images that receive a defect (rounded to a count).
    pub defect_rate: f64,
    pub size: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_train: 64,
            n_test: 64,
            defect_rate: 0.5,
            size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub category: String,
    pub train: Vec<RawSample>,
    pub test: Vec<RawSample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DefectKind {
    Rectangle,
    Scratch,
    Blob,
}

impl DefectKind {
    pub const ALL: [DefectKind; 3] = [DefectKind::Rectangle, DefectKind::Scratch, DefectKind::Blob];

    pub fn name(self) -> &'static str {
        match self {
            DefectKind::Rectangle => "rectangle",
            DefectKind::Scratch => "scratch",
            DefectKind::Blob => "blob",
        }
    }
}

pub fn make_synthetic(cfg: &SynthConfig) -> Result<SyntheticDataset, ShapeError> {
    if cfg.n_train == 0 || cfg.n_test == 0 {
        return Err(ShapeError::Invalid("synthetic split sizes must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&cfg.defect_rate) {
        return Err(ShapeError::Invalid(format!(
            "defect rate must lie in [0, 1], got {}",
            cfg.defect_rate
        )));
    }
    if cfg.size < 16 {
        return Err(ShapeError::Invalid(format!("synthetic size {} is too small", cfg.size)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let train = (0..cfg.n_train)
        .map(|i| {
            let mut img_rng = ChaCha8Rng::seed_from_u64(rng.random());
            RawSample {
                sample_id: format!("train_{i:03}"),
                defect_type: GOOD.to_string(),
                image: texture(&mut img_rng, cfg.size),
                mask: None,
            }
        })
        .collect();

    let n_defects = (cfg.defect_rate * cfg.n_test as f64).round() as usize;
    let mut defective = vec![false; cfg.n_test];
    defective[..n_defects].iter_mut().for_each(|d| *d = true);
    defective.shuffle(&mut rng);

    let test = defective
        .iter()
        .enumerate()
        .map(|(i, &has_defect)| {
            let mut img_rng = ChaCha8Rng::seed_from_u64(rng.random());
            let mut image = texture(&mut img_rng, cfg.size);
            let (defect_type, mask) = if has_defect {
                let kind = DefectKind::ALL[img_rng.random_range(0..DefectKind::ALL.len())];
                let mask = paint_defect(&mut img_rng, &mut image, kind);
                (kind.name().to_string(), Some(mask))
            } else {
                (GOOD.to_string(), None)
            };
            RawSample {
                sample_id: format!("test_{i:03}"),
                defect_type,
                image,
                mask,
            }
        })
        .collect();

    Ok(SyntheticDataset {
        category: CATEGORY.to_string(),
        train,
        test,
    })
}

/// Palette-free colour noise images, independent per channel and mixed
/// over several spatial scales, already standardized for the networks.
/// Used where generic image statistics are needed without any dataset.
pub fn make_textures(seed: u64, count: usize, size: usize) -> Result<Vec<PreparedImage>, DataError> {
    crate::data::check_input_size(size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut img_rng = ChaCha8Rng::seed_from_u64(rng.random());
            let channels: Vec<Vec<f32>> = (0..3)
                .map(|_| {
                    let scales = [2, 4, 8, 16, size / 2];
                    let layers: Vec<Vec<f32>> =
                        scales.iter().map(|&c| value_noise(&mut img_rng, size, c.max(1))).collect();
                    let weights: Vec<f32> = scales.iter().map(|_| img_rng.random_range(0.2f32..1.0)).collect();
                    let total: f32 = weights.iter().sum();
                    (0..size * size)
                        .map(|i| layers.iter().zip(&weights).map(|(l, w)| l[i] * w).sum::<f32>() / total)
                        .collect()
                })
                .collect();
            let img = RgbImage::from_fn(size as u32, size as u32, |x, y| {
                let i = y as usize * size + x as usize;
                Rgb(std::array::from_fn(|c| (channels[c][i] * 255.0).round().clamp(0.0, 255.0) as u8))
            });
            Ok(crate::data::preprocess_rgb(&img, size))
        })
        .collect()
}

/// Smoothly interpolated lattice noise in `[0, 1]`.
fn value_noise(rng: &mut ChaCha8Rng, size: usize, cells: usize) -> Vec<f32> {
    let n = cells + 1;
    let lattice: Vec<f32> = (0..n * n).map(|_| rng.random::<f32>()).collect();
    let smoothstep = |t: f32| t * t * (3.0 - 2.0 * t);
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        let fy = y as f32 / size as f32 * cells as f32;
        let (y0, ty) = (fy.floor() as usize, smoothstep(fy.fract()));
        for x in 0..size {
            let fx = x as f32 / size as f32 * cells as f32;
            let (x0, tx) = (fx.floor() as usize, smoothstep(fx.fract()));
            let v00 = lattice[y0 * n + x0];
            let v01 = lattice[y0 * n + x0 + 1];
            let v10 = lattice[(y0 + 1) * n + x0];
            let v11 = lattice[(y0 + 1) * n + x0 + 1];
            let top = v00 + tx * (v01 - v00);
            let bottom = v10 + tx * (v11 - v10);
            out.push(top + ty * (bottom - top));
        }
    }
    out
}

fn texture(rng: &mut ChaCha8Rng, size: usize) -> RgbImage {
    let coarse = value_noise(rng, size, 6);
    let fine = value_noise(rng, size, 12);
    let angle = 0.35 + rng.random_range(-0.2f32..0.2);
    let period = size as f32 / 6.0;
    let phase = rng.random_range(0.0..std::f32::consts::TAU);
    let (sin, cos) = angle.sin_cos();
    let mut img = RgbImage::new(size as u32, size as u32);
    for y in 0..size {
        for x in 0..size {
            let idx = y * size + x;
            let along = y as f32 * cos + x as f32 * sin;
            let grain = 0.5
                + 0.5 * (std::f32::consts::TAU * along / period + phase + 3.0 * coarse[idx]).sin();
            let t = (0.55 * coarse[idx] + 0.25 * fine[idx] + 0.2 * grain).clamp(0.0, 1.0);
            let jitter = rng.random_range(-6.0f32..6.0);
            let px = std::array::from_fn(|c| {
                let v = PALETTE_DARK[c] + t * (PALETTE_LIGHT[c] - PALETTE_DARK[c]) + jitter;
                v.round().clamp(0.0, 255.0) as u8
            });
            img.put_pixel(x as u32, y as u32, Rgb(px));
        }
    }
    img
}

fn paint_defect(rng: &mut ChaCha8Rng, img: &mut RgbImage, kind: DefectKind) -> Mask {
    let size = img.width() as usize;
    let s = size as f32;
    let inside: Box<dyn Fn(f32, f32) -> bool> = match kind {
        DefectKind::Rectangle => {
            let w = rng.random_range(0.12 * s..0.25 * s);
            let h = rng.random_range(0.12 * s..0.25 * s);
            let x0 = rng.random_range(0.0..s - w);
            let y0 = rng.random_range(0.0..s - h);
            Box::new(move |x, y| x >= x0 && x < x0 + w && y >= y0 && y < y0 + h)
        }
        DefectKind::Scratch => {
            let len = rng.random_range(0.35 * s..0.6 * s);
            let theta = rng.random_range(0.0..std::f32::consts::PI);
            let (dy, dx) = theta.sin_cos();
            let cx = rng.random_range(0.25 * s..0.75 * s);
            let cy = rng.random_range(0.25 * s..0.75 * s);
            let (ax, ay) = (cx - dx * len / 2.0, cy - dy * len / 2.0);
            let half_thickness = (s / 32.0).max(2.0) / 2.0 + 0.5;
            Box::new(move |x, y| {
                let t = ((x - ax) * dx + (y - ay) * dy).clamp(0.0, len);
                let (px, py) = (ax + t * dx, ay + t * dy);
                (x - px).hypot(y - py) <= half_thickness
            })
        }
        DefectKind::Blob => {
            let rx = rng.random_range(0.07 * s..0.15 * s);
            let ry = rng.random_range(0.07 * s..0.15 * s);
            let rot = rng.random_range(0.0..std::f32::consts::PI);
            let cx = rng.random_range(rx.max(ry)..s - rx.max(ry));
            let cy = rng.random_range(rx.max(ry)..s - rx.max(ry));
            let (sr, cr) = rot.sin_cos();
            Box::new(move |x, y| {
                let (u, v) = (x - cx, y - cy);
                let (a, b) = (u * cr + v * sr, -u * sr + v * cr);
                (a / rx).powi(2) + (b / ry).powi(2) <= 1.0
            })
        }
    };
    let colour = DEFECT_COLOURS[rng.random_range(0..DEFECT_COLOURS.len())];
    let mut mask = Mask::empty(size, size);
    for y in 0..size {
        for x in 0..size {
            if inside(x as f32 + 0.5, y as f32 + 0.5) {
                mask.set(y, x, true);
                let px = img.get_pixel_mut(x as u32, y as u32);
                for c in 0..3 {
                    let blended =
                        DEFECT_OPACITY * colour[c] + (1.0 - DEFECT_OPACITY) * px[c] as f32;
                    px[c] = blended.round().clamp(0.0, 255.0) as u8;
                }
            }
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(seed: u64, rate: f64) -> SynthConfig {
        SynthConfig {
            seed,
            n_train: 4,
            n_test: 12,
            defect_rate: rate,
            size: 32,
        }
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let a = make_synthetic(&cfg(7, 0.5)).unwrap();
        let b = make_synthetic(&cfg(7, 0.5)).unwrap();
        assert_eq!(a, b);
        let c = make_synthetic(&cfg(8, 0.5)).unwrap();
        assert_ne!(a.train[0].image, c.train[0].image);
    }

    #[test]
    fn defect_rate_extremes() {
        let none = make_synthetic(&cfg(1, 0.0)).unwrap();
        assert!(none.test.iter().all(|s| s.defect_type == GOOD && s.mask.is_none()));
        let all = make_synthetic(&cfg(1, 1.0)).unwrap();
        assert!(all
            .test
            .iter()
            .all(|s| s.mask.as_ref().is_some_and(|m| !m.is_empty())));
    }

    #[test]
    fn defect_count_follows_rate() {
        let ds = make_synthetic(&cfg(3, 0.5)).unwrap();
        assert_eq!(ds.test.iter().filter(|s| s.mask.is_some()).count(), 6);
        assert!(ds.train.iter().all(|s| s.mask.is_none()));
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(make_synthetic(&SynthConfig { n_train: 0, ..cfg(0, 0.5) }).is_err());
        assert!(make_synthetic(&SynthConfig { n_test: 0, ..cfg(0, 0.5) }).is_err());
        assert!(make_synthetic(&cfg(0, 1.5)).is_err());
    }
}
