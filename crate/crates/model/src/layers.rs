//! Convolution + normalization building blocks shared by all networks.

use candle_core::{Module, ModuleT, Tensor};
use candle_nn::{BatchNorm, BatchNormConfig, Conv2d, Conv2dConfig, VarBuilder};

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

pub(crate) fn conv(
    in_c: usize,
    out_c: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    vb: VarBuilder,
) -> candle_core::Result<Conv2d> {
    let cfg = Conv2dConfig {
        padding,
        stride,
        ..Default::default()
    };
    candle_nn::conv2d_no_bias(in_c, out_c, kernel, cfg, vb)
}

pub(crate) fn batch_norm(channels: usize, vb: VarBuilder) -> candle_core::Result<BatchNorm> {
    batch_norm_with_momentum(channels, BN_MOMENTUM, vb)
}

/// Momentum 1 makes one training-mode pass store that batch's statistics.
pub(crate) fn batch_norm_with_momentum(
    channels: usize,
    momentum: f64,
    vb: VarBuilder,
) -> candle_core::Result<BatchNorm> {
    let cfg = BatchNormConfig {
        eps: BN_EPS,
        remove_mean: true,
        affine: true,
        momentum,
    };
    candle_nn::batch_norm(channels, cfg, vb)
}

/// 3x3 max pooling, stride 2, padding 1, for even spatial sides. Inputs
/// are post-ReLU, so zero padding is equivalent to padding with negative
/// infinity.
///
/// Built from the nine strided window offsets combined with `maximum`
/// because candle has no backward pass for overlapping pooling windows.
pub(crate) fn max_pool_3x3_s2(x: &Tensor) -> candle_core::Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        candle_core::bail!("max pool expects even spatial sides, got {h}x{w}");
    }
    let (ho, wo) = (h / 2, w / 2);
    let padded = x.pad_with_zeros(2, 1, 1)?.pad_with_zeros(3, 1, 1)?;
    let mut out: Option<Tensor> = None;
    for dy in 0..3 {
        let rows = padded
            .narrow(2, dy, h)?
            .reshape((b, c, ho, 2, w + 2))?
            .narrow(3, 0, 1)?
            .squeeze(3)?;
        for dx in 0..3 {
            let window = rows
                .narrow(3, dx, w)?
                .reshape((b, c, ho, wo, 2))?
                .narrow(4, 0, 1)?
                .squeeze(4)?;
            out = Some(match out {
                None => window,
                Some(m) => m.maximum(&window)?,
            });
        }
    }
    Ok(out.expect("nine windows"))
}

pub(crate) fn upsample2x(x: &Tensor) -> candle_core::Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    x.upsample_nearest2d(2 * h, 2 * w)
}

/// Convolution, batch normalization, ReLU.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    conv: Conv2d,
    bn: BatchNorm,
}

impl ConvBlock {
    pub fn new(
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        vb: VarBuilder,
    ) -> candle_core::Result<Self> {
        Ok(Self {
            conv: conv(in_c, out_c, kernel, stride, kernel / 2, vb.pp("conv"))?,
            bn: batch_norm(out_c, vb.pp("bn"))?,
        })
    }
}

impl ModuleT for ConvBlock {
    fn forward_t(&self, x: &Tensor, train: bool) -> candle_core::Result<Tensor> {
        self.bn.forward_t(&self.conv.forward(x)?, train)?.relu()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Resample {
    Keep,
    Down,
    Up,
}

/// Two-convolution residual block with an optional 1x1 projection shortcut.
///
/// Downsampling blocks use a stride-2 first convolution (encoder side);
/// upsampling blocks apply nearest-neighbour 2x upsampling before the first
/// convolution and the shortcut (decoder side). Parameter names follow the
/// torchvision ResNet layout.
#[derive(Debug, Clone)]
pub struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm,
    conv2: Conv2d,
    bn2: BatchNorm,
    shortcut: Option<(Conv2d, BatchNorm)>,
    resample: Resample,
}

impl BasicBlock {
    /// Encoder block; `stride` 2 halves the resolution.
    pub(crate) fn down(
        in_c: usize,
        out_c: usize,
        stride: usize,
        momentum: f64,
        vb: VarBuilder,
    ) -> candle_core::Result<Self> {
        let batch_norm = |c, vb| batch_norm_with_momentum(c, momentum, vb);
        let resample = if stride == 1 { Resample::Keep } else { Resample::Down };
        let shortcut = if stride != 1 || in_c != out_c {
            Some((
                conv(in_c, out_c, 1, stride, 0, vb.pp("downsample.0"))?,
                batch_norm(out_c, vb.pp("downsample.1"))?,
            ))
        } else {
            None
        };
        Ok(Self {
            conv1: conv(in_c, out_c, 3, stride, 1, vb.pp("conv1"))?,
            bn1: batch_norm(out_c, vb.pp("bn1"))?,
            conv2: conv(out_c, out_c, 3, 1, 1, vb.pp("conv2"))?,
            bn2: batch_norm(out_c, vb.pp("bn2"))?,
            shortcut,
            resample,
        })
    }

    /// Decoder-style block; `upsample` doubles the resolution. Also used
    /// without upsampling as the embedding fusion block.
    pub fn up(in_c: usize, out_c: usize, upsample: bool, vb: VarBuilder) -> candle_core::Result<Self> {
        let resample = if upsample { Resample::Up } else { Resample::Keep };
        let shortcut = if upsample || in_c != out_c {
            Some((
                conv(in_c, out_c, 1, 1, 0, vb.pp("shortcut.0"))?,
                batch_norm(out_c, vb.pp("shortcut.1"))?,
            ))
        } else {
            None
        };
        Ok(Self {
            conv1: conv(in_c, out_c, 3, 1, 1, vb.pp("conv1"))?,
            bn1: batch_norm(out_c, vb.pp("bn1"))?,
            conv2: conv(out_c, out_c, 3, 1, 1, vb.pp("conv2"))?,
            bn2: batch_norm(out_c, vb.pp("bn2"))?,
            shortcut,
            resample,
        })
    }
}

impl ModuleT for BasicBlock {
    fn forward_t(&self, x: &Tensor, train: bool) -> candle_core::Result<Tensor> {
        let input = match self.resample {
            Resample::Up => upsample2x(x)?,
            Resample::Keep | Resample::Down => x.clone(),
        };
        let main = self.bn1.forward_t(&self.conv1.forward(&input)?, train)?.relu()?;
        let main = self.bn2.forward_t(&self.conv2.forward(&main)?, train)?;
        let identity = match &self.shortcut {
            Some((c, bn)) => bn.forward_t(&c.forward(&input)?, train)?,
            None => input,
        };
        (main + identity)?.relu()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn pool_matches_direct_windows() {
        let x = Tensor::rand(0f32, 1.0, (2, 3, 6, 8), &Device::Cpu).unwrap();
        let got = max_pool_3x3_s2(&x).unwrap();
        assert_eq!(got.dims4().unwrap(), (2, 3, 3, 4));
        let xs = x.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let gs = got.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let at = |n: usize, ch: usize, i: i64, j: i64| -> f32 {
            if i < 0 || j < 0 || i >= 6 || j >= 8 {
                0.0
            } else {
                xs[((n * 3 + ch) * 6 + i as usize) * 8 + j as usize]
            }
        };
        for n in 0..2 {
            for ch in 0..3 {
                for oi in 0..3 {
                    for oj in 0..4 {
                        let mut m = f32::MIN;
                        for di in -1..=1 {
                            for dj in -1..=1 {
                                m = m.max(at(n, ch, 2 * oi as i64 + di, 2 * oj as i64 + dj));
                            }
                        }
                        assert_eq!(gs[((n * 3 + ch) * 3 + oi) * 4 + oj], m);
                    }
                }
            }
        }
    }

    #[test]
    fn pool_is_differentiable() {
        let v = candle_core::Var::rand(0f32, 1.0, (1, 1, 4, 4), &Device::Cpu).unwrap();
        let y = max_pool_3x3_s2(v.as_tensor()).unwrap().sum_all().unwrap();
        let g = y.backward().unwrap();
        assert!(g.get(v.as_tensor()).is_some());
    }
}

/// Runs blocks in sequence.
pub(crate) fn run_blocks(blocks: &[BasicBlock], x: &Tensor, train: bool) -> candle_core::Result<Tensor> {
    blocks.iter().try_fold(x.clone(), |h, b| b.forward_t(&h, train))
}
