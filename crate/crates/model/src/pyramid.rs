use candle_core::{Tensor, D};

use crate::config::LEVELS;
use crate::error::{ModelError, Result};

/// Guard added (squared) under the norm so zero vectors map to zero.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    Teacher,
    Encoder,
    Decoder,
}

/// The three intermediate feature maps of one pass, shallow to deep.
/// Level `k` has shape `[batch, c_k, h_k, w_k]`.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    levels: Vec<Tensor>,
    source: Source,
}

impl FeaturePyramid {
    pub fn new(levels: Vec<Tensor>, source: Source) -> Result<Self> {
        if levels.len() != LEVELS {
            return Err(ModelError::Shape(format!(
                "a pyramid has {LEVELS} levels, got {}",
                levels.len()
            )));
        }
        for l in &levels {
            if l.rank() != 4 {
                return Err(ModelError::Shape(format!("pyramid level must be rank 4, got {:?}", l.shape())));
            }
        }
        Ok(Self { levels, source })
    }

    pub fn levels(&self) -> &[Tensor] {
        &self.levels
    }

    pub fn level(&self, k: usize) -> &Tensor {
        &self.levels[k]
    }

    pub fn source(&self) -> Source {
        self.source
    }

    /// `(batch, channels, height, width)` of every level.
    pub fn shapes(&self) -> Vec<(usize, usize, usize, usize)> {
        self.levels
            .iter()
            .map(|l| l.dims4().expect("rank checked"))
            .collect()
    }

    pub fn batch_size(&self) -> usize {
        self.levels[0].dims()[0]
    }

    /// Scales every spatial feature vector to unit Euclidean length.
    pub fn l2_normalize(&self) -> Result<Self> {
        Ok(Self {
            levels: self.levels.iter().map(l2_normalize).collect::<Result<_>>()?,
            source: self.source,
        })
    }

    /// Same values with gradient tracking cut.
    pub fn detach(&self) -> Self {
        Self {
            levels: self.levels.iter().map(|l| l.detach()).collect(),
            source: self.source,
        }
    }
}

/// Divides each channel vector `x[b, :, i, j]` by `sqrt(|x|^2 + eps^2)`.
///
/// The guard keeps zero vectors at zero and gives a finite gradient there;
/// for any vector of non-negligible length the result is the unit vector.
pub fn l2_normalize(t: &Tensor) -> Result<Tensor> {
    let sq = t.sqr()?.sum_keepdim(1)?;
    let norm = (sq + NORM_EPS * NORM_EPS)?.sqrt()?;
    Ok(t.broadcast_div(&norm)?)
}

/// Squared channel norm per pixel, `[batch, h, w]`.
pub(crate) fn channel_sq_norm(t: &Tensor) -> Result<Tensor> {
    Ok(t.sqr()?.sum(D::Minus(3))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn pixel(values: &[f32]) -> Tensor {
        Tensor::from_slice(values, (1, values.len(), 1, 1), &Device::Cpu).unwrap()
    }

    fn flat(t: &Tensor) -> Vec<f32> {
        t.flatten_all().unwrap().to_vec1().unwrap()
    }

    #[test]
    fn three_four_five() {
        let n = flat(&l2_normalize(&pixel(&[3.0, 4.0])).unwrap());
        assert!((n[0] - 0.6).abs() < 1e-7 && (n[1] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn unit_vector_unchanged() {
        let n = flat(&l2_normalize(&pixel(&[0.0, 1.0, 0.0])).unwrap());
        assert_eq!(n, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn zero_vector_stays_zero() {
        let n = flat(&l2_normalize(&pixel(&[0.0, 0.0])).unwrap());
        assert_eq!(n, vec![0.0, 0.0]);
    }

    #[test]
    fn pyramid_needs_three_levels() {
        let t = Tensor::zeros((1, 2, 2, 2), candle_core::DType::F32, &Device::Cpu).unwrap();
        assert!(FeaturePyramid::new(vec![t.clone(), t.clone()], Source::Teacher).is_err());
        assert!(FeaturePyramid::new(vec![t.clone(), t.clone(), t], Source::Teacher).is_ok());
    }
}
