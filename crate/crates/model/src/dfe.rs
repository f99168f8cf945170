//! Deep feature embedding: fuses the encoder pyramid into one deep map.
//!
//! Level 1 passes through two stride-2 3x3 blocks, level 2 through one, so
//! all three reach the deepest resolution. The concatenation (`4w * 3`
//! channels) goes through a residual block with a 1x1 projection shortcut
//! that outputs `4w` channels.

use candle_core::{ModuleT, Tensor};
use candle_nn::VarBuilder;

use crate::config::ModelConfig;
use crate::error::{ModelError, Result};
use crate::layers::{BasicBlock, ConvBlock};
use crate::pyramid::FeaturePyramid;

/// Decoder input, `[batch, 4w, s/16, s/16]`.
#[derive(Debug, Clone)]
pub struct Embedding(pub Tensor);

impl Embedding {
    pub fn tensor(&self) -> &Tensor {
        &self.0
    }
}

#[derive(Debug, Clone)]
pub struct FeatureEmbedding {
    level1: [ConvBlock; 2],
    level2: ConvBlock,
    fuse: BasicBlock,
    config: ModelConfig,
}

impl FeatureEmbedding {
    pub fn new(config: &ModelConfig, vb: VarBuilder) -> Result<Self> {
        config.validate()?;
        let [c1, c2, c3] = config.channels();
        Ok(Self {
            level1: [
                ConvBlock::new(c1, 2 * c1, 3, 2, vb.pp("level1.0"))?,
                ConvBlock::new(2 * c1, 4 * c1, 3, 2, vb.pp("level1.1"))?,
            ],
            level2: ConvBlock::new(c2, 2 * c2, 3, 2, vb.pp("level2.0"))?,
            fuse: BasicBlock::up(4 * c1 + 2 * c2 + c3, config.embedding_channels(), false, vb.pp("fuse"))?,
            config: *config,
        })
    }

    pub fn forward_t(&self, pyramid: &FeaturePyramid, train: bool) -> Result<Embedding> {
        let expected_c = self.config.channels();
        let expected_s = self.config.level_sizes();
        for (k, (b, c, h, w)) in pyramid.shapes().into_iter().enumerate() {
            if c != expected_c[k] || h != expected_s[k] || w != expected_s[k] || b != pyramid.batch_size() {
                return Err(ModelError::Shape(format!(
                    "embedding expects level {} of shape [*, {}, {s}, {s}], got [{b}, {c}, {h}, {w}]",
                    k + 1,
                    expected_c[k],
                    s = expected_s[k]
                )));
            }
        }
        let f1 = self.level1[0].forward_t(pyramid.level(0), train)?;
        let f1 = self.level1[1].forward_t(&f1, train)?;
        let f2 = self.level2.forward_t(pyramid.level(1), train)?;
        let fused = Tensor::cat(&[&f1, &f2, pyramid.level(2)], 1)?;
        Ok(Embedding(self.fuse.forward_t(&fused, train)?))
    }
}
