//! Per-pixel teacher/student discrepancy and the scalar training loss.
//!
//! For normalized feature vectors `a`, `b` at one pixel:
//!
//! * Euclidean term: `0.5 * |a - b|^2`
//! * cosine term: `1 - a.b / (|a| |b|)`, in `[0, 2]`
//! * anomaly value: `lambda * euclidean + cosine`
//!
//! The loss averages each level's map over its pixels, then over levels,
//! then over the batch.

use candle_core::{Tensor, D};

use crate::error::{ModelError, Result};
use crate::pyramid::{channel_sq_norm, FeaturePyramid, Source, NORM_EPS};

/// Discrepancy maps, one `[batch, h_k, w_k]` tensor per level.
#[derive(Debug, Clone)]
pub struct AnomalyMapStack {
    pub maps: Vec<Tensor>,
    /// Reference and student the maps compare.
    pub pair: (Source, Source),
}

fn check_pair(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() || a.rank() != 4 {
        return Err(ModelError::Shape(format!(
            "feature maps must match as [batch, c, h, w]: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `0.5 * |a - b|^2` over channels.
pub fn euclidean_map(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_pair(a, b)?;
    Ok((channel_sq_norm(&(a - b)?)? * 0.5)?)
}

/// `1 - cos(a, b)` over channels, clamped into `[0, 2]`.
///
/// The norm product is taken as `sqrt(|a|^2 |b|^2 + eps^2)`, so identical
/// inputs give exactly zero and zero vectors give a cosine of zero.
pub fn cosine_map(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_pair(a, b)?;
    let dot = (a * b)?.sum(D::Minus(3))?;
    let norms = ((channel_sq_norm(a)? * channel_sq_norm(b)?)? + NORM_EPS * NORM_EPS)?.sqrt()?;
    let cos = (dot / norms)?;
    Ok(cos.affine(-1.0, 1.0)?.clamp(0.0, 2.0)?)
}

pub fn anomaly_level(a: &Tensor, b: &Tensor, lambda: f64) -> Result<Tensor> {
    let cos = cosine_map(a, b)?;
    if lambda == 0.0 {
        return Ok(cos);
    }
    Ok(((euclidean_map(a, b)? * lambda)? + cos)?)
}

fn per_level(
    a: &FeaturePyramid,
    b: &FeaturePyramid,
    f: impl Fn(&Tensor, &Tensor) -> Result<Tensor>,
) -> Result<AnomalyMapStack> {
    let maps = a
        .levels()
        .iter()
        .zip(b.levels())
        .map(|(x, y)| f(x, y))
        .collect::<Result<Vec<_>>>()?;
    Ok(AnomalyMapStack {
        maps,
        pair: (a.source(), b.source()),
    })
}

pub fn pixel_l2_loss(a: &FeaturePyramid, b: &FeaturePyramid) -> Result<AnomalyMapStack> {
    per_level(a, b, euclidean_map)
}

pub fn pixel_cosine_loss(a: &FeaturePyramid, b: &FeaturePyramid) -> Result<AnomalyMapStack> {
    per_level(a, b, cosine_map)
}

/// `lambda * euclidean + cosine`, per level and pixel.
pub fn anomaly_map(a: &FeaturePyramid, b: &FeaturePyramid, lambda: f64) -> Result<AnomalyMapStack> {
    per_level(a, b, |x, y| anomaly_level(x, y, lambda))
}

/// Mean over pixels within each level, then over levels, then over the batch.
/// Returns a scalar tensor so it can be back-propagated.
pub fn scalar_loss(stack: &AnomalyMapStack) -> Result<Tensor> {
    if stack.maps.is_empty() {
        return Err(ModelError::Shape("cannot reduce an empty map stack".into()));
    }
    let mut per_level = Vec::with_capacity(stack.maps.len());
    for m in &stack.maps {
        if m.rank() != 3 {
            return Err(ModelError::Shape(format!("anomaly map must be [batch, h, w], got {:?}", m.shape())));
        }
        // [batch]
        per_level.push(m.flatten_from(1)?.mean(1)?);
    }
    let stacked = Tensor::stack(&per_level, 0)?;
    Ok(stacked.mean(0)?.mean(0)?)
}
