//! ResNet18-style feature extractor used for the teacher and the encoder
//! student: stem, then `layer1`..`layer3` whose outputs form the pyramid.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Module, ModuleT, Tensor};
use candle_nn::{BatchNorm, Conv2d, VarBuilder};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ModelConfig;
use crate::error::{ModelError, Result};
use crate::layers::{self, run_blocks, BasicBlock};
use crate::params::ParamStore;
use crate::pyramid::{FeaturePyramid, Source};

const BLOCKS_PER_STAGE: usize = 2;

/// ChaCha stream reserved for random teacher weights.
pub(crate) const TEACHER_STREAM: u64 = 1;

#[derive(Debug, Clone)]
pub struct ResNetFeatures {
    conv1: Conv2d,
    bn1: BatchNorm,
    layer1: Vec<BasicBlock>,
    layer2: Vec<BasicBlock>,
    layer3: Vec<BasicBlock>,
    config: ModelConfig,
}

fn stage(
    in_c: usize,
    out_c: usize,
    stride: usize,
    momentum: f64,
    vb: VarBuilder,
) -> candle_core::Result<Vec<BasicBlock>> {
    (0..BLOCKS_PER_STAGE)
        .map(|i| {
            let (cin, s) = if i == 0 { (in_c, stride) } else { (out_c, 1) };
            BasicBlock::down(cin, out_c, s, momentum, vb.pp(i))
        })
        .collect()
}

impl ResNetFeatures {
    /// Parameters are looked up with torchvision names (`conv1.weight`,
    /// `layer2.0.downsample.0.weight`, ...) under `vb`'s prefix.
    pub fn new(config: &ModelConfig, vb: VarBuilder) -> Result<Self> {
        Self::with_bn_momentum(config, layers::BN_MOMENTUM, vb)
    }

    fn with_bn_momentum(config: &ModelConfig, momentum: f64, vb: VarBuilder) -> Result<Self> {
        config.validate()?;
        let [c1, c2, c3] = config.channels();
        Ok(Self {
            conv1: layers::conv(3, c1, 7, 2, 3, vb.pp("conv1"))?,
            bn1: layers::batch_norm_with_momentum(c1, momentum, vb.pp("bn1"))?,
            layer1: stage(c1, c1, 1, momentum, vb.pp("layer1"))?,
            layer2: stage(c1, c2, 2, momentum, vb.pp("layer2"))?,
            layer3: stage(c2, c3, 2, momentum, vb.pp("layer3"))?,
            config: *config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Raw (unnormalized) pyramid for a `[batch, 3, s, s]` input.
    pub fn forward_t(&self, x: &Tensor, train: bool, source: Source) -> Result<FeaturePyramid> {
        check_input(x, &self.config)?;
        let h = self.bn1.forward_t(&self.conv1.forward(x)?, train)?.relu()?;
        let h = layers::max_pool_3x3_s2(&h)?;
        let f1 = run_blocks(&self.layer1, &h, train)?;
        let f2 = run_blocks(&self.layer2, &f1, train)?;
        let f3 = run_blocks(&self.layer3, &f2, train)?;
        FeaturePyramid::new(vec![f1, f2, f3], source)
    }
}

pub(crate) fn check_input(x: &Tensor, config: &ModelConfig) -> Result<()> {
    let dims = x.dims();
    let ok = dims.len() == 4 && dims[1] == 3 && dims[2] == dims[3] && dims[2] % 32 == 0 && dims[0] > 0;
    if !ok {
        return Err(ModelError::Shape(format!(
            "expected input [batch, 3, s, s] with s a multiple of 32, got {dims:?}"
        )));
    }
    if dims[2] != config.input_size {
        return Err(ModelError::Shape(format!(
            "input side {} does not match configured size {}",
            dims[2], config.input_size
        )));
    }
    Ok(())
}

/// Where the frozen teacher's weights came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TeacherSource {
    /// Deterministic random weights (no pretrained checkpoint available).
    Random { seed: u64 },
    /// A safetensors checkpoint with torchvision ResNet parameter names.
    File { path: PathBuf },
}

/// Frozen reference network. Its parameters are plain tensors, never
/// variables, so no optimizer can reach them.
#[derive(Debug, Clone)]
pub struct Teacher {
    net: ResNetFeatures,
    tensors: BTreeMap<String, Tensor>,
    source: TeacherSource,
    sha256: String,
}

impl Teacher {
    /// Randomly initialized teacher, reproducible from `seed`.
    ///
    /// Convolution weights are random. Normalization statistics are then
    /// fitted by one training-mode pass over a fixed batch of procedural
    /// textures, so every pre-activation is standardized as in a trained
    /// network; without this the deeper features collapse onto one
    /// direction.
    pub fn random(config: &ModelConfig, seed: u64, device: &Device) -> Result<Self> {
        let store = ParamStore::seeded_stream(seed, TEACHER_STREAM, device);
        let net = ResNetFeatures::with_bn_momentum(config, 1.0, store.var_builder())?;
        let batch = calibration_batch(config.input_size, seed, device)?;
        net.forward_t(&batch, true, Source::Teacher)?;
        let tensors = store.snapshot();
        Self::from_named(config, tensors, TeacherSource::Random { seed }, device)
    }

    /// Loads `conv1`, `bn1` and `layer1`..`layer3` from a safetensors file;
    /// other entries (deeper stages, classifier) are ignored.
    pub fn from_safetensors(config: &ModelConfig, path: &Path, device: &Device) -> Result<Self> {
        let weights_err = |reason: String| ModelError::Weights {
            path: path.to_path_buf(),
            reason,
        };
        let loaded = candle_core::safetensors::load(path, device).map_err(|e| weights_err(e.to_string()))?;
        let wanted = ["conv1.", "bn1.", "layer1.", "layer2.", "layer3."];
        let tensors: BTreeMap<String, Tensor> = loaded
            .into_iter()
            .filter(|(k, _)| wanted.iter().any(|p| k.starts_with(p)) && !k.ends_with("num_batches_tracked"))
            .map(|(k, t)| Ok((k, t.to_dtype(DType::F32)?)))
            .collect::<Result<_>>()?;
        Self::from_named(config, tensors, TeacherSource::File { path: path.to_path_buf() }, device)
            .map_err(|e| weights_err(e.to_string()))
    }

    fn from_named(
        config: &ModelConfig,
        tensors: BTreeMap<String, Tensor>,
        source: TeacherSource,
        device: &Device,
    ) -> Result<Self> {
        let map: HashMap<String, Tensor> = tensors.clone().into_iter().collect();
        let vb = VarBuilder::from_tensors(map, DType::F32, device);
        let net = ResNetFeatures::new(config, vb)?;
        let sha256 = hash_tensors(&tensors)?;
        Ok(Self {
            net,
            tensors,
            source,
            sha256,
        })
    }

    pub fn load(config: &ModelConfig, source: &TeacherSource, device: &Device) -> Result<Self> {
        match source {
            TeacherSource::Random { seed } => Self::random(config, *seed, device),
            TeacherSource::File { path } => Self::from_safetensors(config, path, device),
        }
    }

    /// Pyramid in inference mode with gradient tracking cut.
    pub fn forward(&self, x: &Tensor) -> Result<FeaturePyramid> {
        Ok(self.net.forward_t(x, false, Source::Teacher)?.detach())
    }

    pub fn source(&self) -> &TeacherSource {
        &self.source
    }

    /// Hex digest over parameter names, shapes and values.
    pub fn sha256(&self) -> &str {
        &self.sha256
    }

    /// Serialized parameters in name order.
    pub fn serialize(&self) -> Result<Vec<u8>> {
        Ok(safetensors::serialize(
            self.tensors.iter().map(|(k, t)| (k.as_str(), t)),
            None,
        )
        .map_err(|e| ModelError::Shape(e.to_string()))?)
    }

    pub fn config(&self) -> &ModelConfig {
        self.net.config()
    }

    /// Parameters by torchvision name.
    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }
}

/// Images used to fit the random teacher's normalization statistics.
pub const TEACHER_CALIBRATION_IMAGES: usize = 16;

fn calibration_batch(size: usize, seed: u64, device: &Device) -> Result<Tensor> {
    let textures = dskd_core::synth::make_textures(seed, TEACHER_CALIBRATION_IMAGES, size)?;
    let data: Vec<f32> = textures.iter().flat_map(|t| t.data().iter().copied()).collect();
    Ok(Tensor::from_vec(data, (TEACHER_CALIBRATION_IMAGES, 3, size, size), device)?)
}

fn hash_tensors(tensors: &BTreeMap<String, Tensor>) -> Result<String> {
    let mut hasher = Sha256::new();
    for (name, t) in tensors {
        hasher.update(name.as_bytes());
        for d in t.dims() {
            hasher.update((*d as u64).to_le_bytes());
        }
        for v in t.flatten_all()?.to_vec1::<f32>()? {
            hasher.update(v.to_le_bytes());
        }
    }
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(size: usize, batch: usize) -> Tensor {
        Tensor::randn(0f32, 1.0, (batch, 3, size, size), &Device::Cpu).unwrap()
    }

    #[test]
    fn teacher_shapes_for_256_and_128() {
        let cfg = ModelConfig::new(256);
        let t = Teacher::random(&cfg, 0, &Device::Cpu).unwrap();
        let p = t.forward(&input(256, 1)).unwrap();
        assert_eq!(p.shapes(), vec![(1, 64, 64, 64), (1, 128, 32, 32), (1, 256, 16, 16)]);

        let cfg = ModelConfig::new(128);
        let t = Teacher::random(&cfg, 0, &Device::Cpu).unwrap();
        let p = t.forward(&input(128, 1)).unwrap();
        assert_eq!(p.shapes(), vec![(1, 64, 32, 32), (1, 128, 16, 16), (1, 256, 8, 8)]);
    }

    #[test]
    fn teacher_is_deterministic() {
        let cfg = ModelConfig { width: 8, ..ModelConfig::new(64) };
        let t = Teacher::random(&cfg, 5, &Device::Cpu).unwrap();
        let x = input(64, 2);
        let a = t.forward(&x).unwrap();
        let b = t.forward(&x).unwrap();
        for k in 0..3 {
            let d = (a.level(k) - b.level(k)).unwrap().abs().unwrap().max_all().unwrap();
            assert_eq!(d.to_scalar::<f32>().unwrap(), 0.0);
        }
        assert_eq!(t.sha256(), Teacher::random(&cfg, 5, &Device::Cpu).unwrap().sha256());
        assert_ne!(t.sha256(), Teacher::random(&cfg, 6, &Device::Cpu).unwrap().sha256());
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = ModelConfig { width: 8, ..ModelConfig::new(64) };
        let t = Teacher::random(&cfg, 0, &Device::Cpu).unwrap();
        assert!(t.forward(&input(48, 1).narrow(3, 0, 40).unwrap()).is_err());
        // right shape law but not the configured size
        assert!(t.forward(&input(96, 1)).is_err());
    }

    #[test]
    fn missing_teacher_file_is_a_load_error() {
        let cfg = ModelConfig::new(64);
        let err = Teacher::from_safetensors(&cfg, Path::new("/nope/resnet18.safetensors"), &Device::Cpu);
        assert!(matches!(err, Err(ModelError::Weights { .. })));
    }
}
