//! Decoder student: the encoder topology run backwards. Each stride-2
//! downsampling of the encoder becomes a nearest-neighbour 2x upsampling
//! followed by a 3x3 convolution, and channels shrink `4w -> 2w -> w`.

use candle_nn::VarBuilder;

use crate::config::ModelConfig;
use crate::dfe::Embedding;
use crate::error::{ModelError, Result};
use crate::layers::{run_blocks, BasicBlock};
use crate::pyramid::{FeaturePyramid, Source};

#[derive(Debug, Clone)]
pub struct Decoder {
    layer3: Vec<BasicBlock>,
    layer2: Vec<BasicBlock>,
    layer1: Vec<BasicBlock>,
    config: ModelConfig,
}

fn stage(in_c: usize, out_c: usize, upsample: bool, vb: VarBuilder) -> candle_core::Result<Vec<BasicBlock>> {
    Ok(vec![
        BasicBlock::up(in_c, out_c, upsample, vb.pp(0))?,
        BasicBlock::up(out_c, out_c, false, vb.pp(1))?,
    ])
}

impl Decoder {
    pub fn new(config: &ModelConfig, vb: VarBuilder) -> Result<Self> {
        config.validate()?;
        let [c1, c2, c3] = config.channels();
        Ok(Self {
            layer3: stage(config.embedding_channels(), c3, false, vb.pp("layer3"))?,
            layer2: stage(c3, c2, true, vb.pp("layer2"))?,
            layer1: stage(c2, c1, true, vb.pp("layer1"))?,
            config: *config,
        })
    }

    /// The decoder produces the deepest level first; the returned pyramid is
    /// reordered so level `k` matches the teacher's level `k`.
    ///
    /// Each stage reads the detached output of the stage above it, so the
    /// level-`k` loss trains only stage `k` (the deepest level also trains
    /// the embedding). Trained jointly, the shallowest level's loss
    /// dominates the shared trunk and the deeper levels never fit.
    pub fn forward_t(&self, embedding: &Embedding, train: bool) -> Result<FeaturePyramid> {
        let x = embedding.tensor();
        let (_, c, h, w) = x.dims4().map_err(|_| {
            ModelError::Shape(format!("embedding must be rank 4, got {:?}", x.shape()))
        })?;
        let deepest = self.config.level_sizes()[2];
        if c != self.config.embedding_channels() || h != deepest || w != deepest {
            return Err(ModelError::Shape(format!(
                "decoder expects embedding [*, {}, {deepest}, {deepest}], got {:?}",
                self.config.embedding_channels(),
                x.dims()
            )));
        }
        let d3 = run_blocks(&self.layer3, x, train)?;
        let d2 = run_blocks(&self.layer2, &d3.detach(), train)?;
        let d1 = run_blocks(&self.layer1, &d2.detach(), train)?;
        FeaturePyramid::new(vec![d1, d2, d3], Source::Decoder)
    }
}

