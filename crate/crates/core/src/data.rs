//! Image preprocessing and MVTec-style dataset layout.
//!
//! ```text
//! <root>/<category>/train/good/*.png
//! <root>/<category>/test/<defect_type>/*.png        (defect_type "good" = normal)
//! <root>/<category>/ground_truth/<defect_type>/<stem>_mask.png
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{DynamicImage, GrayImage, Luma, RgbImage};

use crate::error::DataError;
use crate::heatmap::Mask;

/// Per-channel ImageNet statistics used to standardize inputs.
pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

pub const GOOD: &str = "good";

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

/// A square, channel-first, standardized image.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedImage {
    size: usize,
    data: Vec<f32>,
}

impl PreparedImage {
    pub fn new(size: usize, data: Vec<f32>) -> Result<Self, DataError> {
        if data.len() != 3 * size * size {
            return Err(crate::error::ShapeError::BufferLength {
                height: size,
                width: size,
                len: data.len() / 3,
            }
            .into());
        }
        Ok(Self { size, data })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Channel-first values, `3 * size * size`.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Undo standardization for display.
    pub fn to_rgb8(&self) -> RgbImage {
        let plane = self.size * self.size;
        RgbImage::from_fn(self.size as u32, self.size as u32, |x, y| {
            let idx = y as usize * self.size + x as usize;
            let px = |c: usize| {
                let v = self.data[c * plane + idx] * IMAGENET_STD[c] + IMAGENET_MEAN[c];
                (v * 255.0).round().clamp(0.0, 255.0) as u8
            };
            image::Rgb([px(0), px(1), px(2)])
        })
    }
}

pub fn check_input_size(size: usize) -> Result<(), DataError> {
    if size == 0 || size % 32 != 0 {
        return Err(DataError::InputSize(size));
    }
    Ok(())
}

/// Bilinear resize to `size x size`, scale to `[0, 1]`, then standardize
/// each channel with the ImageNet mean and deviation.
pub fn preprocess(image: &DynamicImage, size: usize) -> Result<PreparedImage, DataError> {
    check_input_size(size)?;
    Ok(preprocess_rgb(&image.to_rgb8(), size))
}

pub(crate) fn preprocess_rgb(rgb: &RgbImage, size: usize) -> PreparedImage {
    let resized;
    let rgb = if rgb.dimensions() == (size as u32, size as u32) {
        rgb
    } else {
        resized = image::imageops::resize(rgb, size as u32, size as u32, FilterType::Triangle);
        &resized
    };
    let plane = size * size;
    let mut data = vec![0f32; 3 * plane];
    for (idx, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + idx] = (px[c] as f32 / 255.0 - IMAGENET_MEAN[c]) / IMAGENET_STD[c];
        }
    }
    PreparedImage { size, data }
}

/// Nearest-neighbour resize of a grayscale mask, binarized at half intensity.
pub fn prepare_mask(mask: &GrayImage, size: usize) -> Mask {
    let resized;
    let mask = if mask.dimensions() == (size as u32, size as u32) {
        mask
    } else {
        resized = image::imageops::resize(mask, size as u32, size as u32, FilterType::Nearest);
        &resized
    };
    Mask::new(size, size, mask.pixels().map(|p| p[0] >= 128).collect()).expect("square mask")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Normal,
    Anomalous,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::Normal => 0,
            Label::Anomalous => 1,
        }
    }

    pub fn is_anomalous(self) -> bool {
        self == Label::Anomalous
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub sample_id: String,
    pub category: String,
    pub defect_type: String,
    pub label: Label,
    pub image: PreparedImage,
    /// Present for anomalous test images; same spatial size as `image`.
    pub mask: Option<Mask>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub root: PathBuf,
    pub category: String,
    pub split: Split,
    pub input_size: usize,
}

fn list_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>, DataError> {
    if !dir.is_dir() {
        return Err(DataError::MissingDirectory(dir.to_path_buf()));
    }
    let mut entries = fs::read_dir(dir)
        .map_err(|e| DataError::io(dir, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| DataError::io(dir, e)))
        .collect::<Result<Vec<_>, _>>()?;
    entries.sort();
    Ok(entries)
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn open_image(path: &Path) -> Result<DynamicImage, DataError> {
    image::open(path).map_err(|source| DataError::Decode {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads one image file and preprocesses it to `size x size`.
pub fn load_image(path: &Path, size: usize) -> Result<PreparedImage, DataError> {
    check_input_size(size)?;
    preprocess(&open_image(path)?, size)
}

fn find_mask(gt_dir: &Path, stem: &str) -> Option<PathBuf> {
    let prefix = format!("{stem}_mask");
    let entries = list_dir_sorted(gt_dir).ok()?;
    entries.into_iter().find(|p| {
        is_image(p)
            && p.file_stem()
                .and_then(|s| s.to_str())
                .is_some_and(|s| s.starts_with(&prefix))
    })
}

/// Loads one split of one category in lexicographic (defect type, file name)
/// order. The train split reads `train/good` only.
pub fn load_dataset(spec: &DatasetSpec) -> Result<Vec<Sample>, DataError> {
    check_input_size(spec.input_size)?;
    let category_dir = spec.root.join(&spec.category);
    let split_dir = category_dir.join(spec.split.dir_name());
    let defect_dirs = match spec.split {
        Split::Train => {
            let good = split_dir.join(GOOD);
            if !good.is_dir() {
                return Err(DataError::MissingDirectory(good));
            }
            vec![good]
        }
        Split::Test => list_dir_sorted(&split_dir)?
            .into_iter()
            .filter(|p| p.is_dir())
            .collect(),
    };

    let mut samples = Vec::new();
    for dir in defect_dirs {
        let defect_type = dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        let label = if defect_type == GOOD {
            Label::Normal
        } else {
            Label::Anomalous
        };
        let gt_dir = category_dir.join("ground_truth").join(&defect_type);
        for path in list_dir_sorted(&dir)?.into_iter().filter(|p| is_image(p)) {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            let image = preprocess(&open_image(&path)?, spec.input_size)?;
            let mask = match label {
                Label::Normal => None,
                Label::Anomalous => {
                    let mask_path =
                        find_mask(&gt_dir, &stem).ok_or_else(|| DataError::MissingMask(path.clone()))?;
                    let gray = open_image(&mask_path)?.to_luma8();
                    Some(prepare_mask(&gray, spec.input_size))
                }
            };
            samples.push(Sample {
                sample_id: format!("{defect_type}_{stem}"),
                category: spec.category.clone(),
                defect_type: defect_type.clone(),
                label,
                image,
                mask,
            });
        }
    }
    Ok(samples)
}

/// An unprocessed sample, as produced by the synthetic generator.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSample {
    pub sample_id: String,
    pub defect_type: String,
    pub image: RgbImage,
    pub mask: Option<Mask>,
}

impl RawSample {
    pub fn label(&self) -> Label {
        if self.defect_type == GOOD {
            Label::Normal
        } else {
            Label::Anomalous
        }
    }

    pub fn prepare(&self, category: &str, input_size: usize) -> Result<Sample, DataError> {
        check_input_size(input_size)?;
        let mask = self.mask.as_ref().map(|m| {
            let gray = mask_to_gray(m);
            prepare_mask(&gray, input_size)
        });
        Ok(Sample {
            sample_id: self.sample_id.clone(),
            category: category.to_string(),
            defect_type: self.defect_type.clone(),
            label: self.label(),
            image: preprocess_rgb(&self.image, input_size),
            mask,
        })
    }
}

fn mask_to_gray(mask: &Mask) -> GrayImage {
    GrayImage::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        Luma([if mask.get(y as usize, x as usize) { 255 } else { 0 }])
    })
}

fn save_png<P>(path: &Path, img: &image::ImageBuffer<P, Vec<u8>>) -> Result<(), DataError>
where
    P: image::PixelWithColorType<Subpixel = u8>,
{
    img.save(path).map_err(|source| DataError::Encode {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes samples into the directory layout read by [`load_dataset`].
/// Files are numbered per defect type in the order given.
pub fn export_dataset(
    root: &Path,
    category: &str,
    train: &[RawSample],
    test: &[RawSample],
) -> Result<(), DataError> {
    let category_dir = root.join(category);
    let mkdir = |p: &Path| fs::create_dir_all(p).map_err(|e| DataError::io(p, e));
    let train_dir = category_dir.join("train").join(GOOD);
    mkdir(&train_dir)?;
    for (i, sample) in train.iter().enumerate() {
        save_png(&train_dir.join(format!("{i:03}.png")), &sample.image)?;
    }
    let mut counters: std::collections::BTreeMap<&str, usize> = Default::default();
    for sample in test {
        let n = counters.entry(sample.defect_type.as_str()).or_default();
        let stem = format!("{:03}", *n);
        *n += 1;
        let dir = category_dir.join("test").join(&sample.defect_type);
        mkdir(&dir)?;
        save_png(&dir.join(format!("{stem}.png")), &sample.image)?;
        if let Some(mask) = &sample.mask {
            let gt = category_dir.join("ground_truth").join(&sample.defect_type);
            mkdir(&gt)?;
            save_png(&gt.join(format!("{stem}_mask.png")), &mask_to_gray(mask))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preprocess_shapes_and_constants() {
        let img = DynamicImage::ImageRgb8(RgbImage::from_pixel(90, 90, image::Rgb([255, 128, 0])));
        let p = preprocess(&img, 64).unwrap();
        assert_eq!(p.size(), 64);
        assert_eq!(p.data().len(), 3 * 64 * 64);
        for c in 0..3 {
            let v = [1.0, 128.0 / 255.0, 0.0][c];
            let expected = (v - IMAGENET_MEAN[c]) / IMAGENET_STD[c];
            let plane = &p.data()[c * 4096..(c + 1) * 4096];
            assert!(plane.iter().all(|&x| (x - expected).abs() < 1e-6));
        }
    }

    #[test]
    fn preprocess_same_size_is_identity_resize() {
        let img = RgbImage::from_fn(32, 32, |x, y| image::Rgb([(x * 7) as u8, (y * 5) as u8, 9]));
        let p = preprocess(&DynamicImage::ImageRgb8(img.clone()), 32).unwrap();
        assert_eq!(p.to_rgb8(), img);
    }

    #[test]
    fn rejects_bad_sizes() {
        let img = DynamicImage::ImageRgb8(RgbImage::new(8, 8));
        assert!(matches!(preprocess(&img, 100), Err(DataError::InputSize(100))));
        assert!(preprocess(&img, 0).is_err());
    }

    #[test]
    fn grayscale_sources_become_three_channels() {
        let img = DynamicImage::ImageLuma8(GrayImage::from_pixel(40, 40, Luma([200])));
        let p = preprocess(&img, 32).unwrap();
        assert_eq!(p.data().len(), 3 * 32 * 32);
    }

    #[test]
    fn masks_are_binarized_with_nearest_resize() {
        let gray = GrayImage::from_fn(8, 8, |x, _| Luma([if x < 4 { 0 } else { 200 }]));
        let m = prepare_mask(&gray, 32);
        assert_eq!(m.shape(), (32, 32));
        assert_eq!(m.count(), 32 * 16);
        assert!(m.get(0, 16) && !m.get(0, 15));
    }

    #[test]
    fn missing_directory_is_named() {
        let spec = DatasetSpec {
            root: PathBuf::from("/definitely/not/here"),
            category: "bottle".into(),
            split: Split::Train,
            input_size: 64,
        };
        match load_dataset(&spec) {
            Err(DataError::MissingDirectory(p)) => assert!(p.ends_with("bottle/train/good")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
