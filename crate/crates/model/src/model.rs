//! Networks of one variant wired together: reference, students, embedding.
//!
//! | variant | reference          | students             | inference pair   |
//! |---------|--------------------|----------------------|------------------|
//! | DS      | teacher            | encoder, decoder     | teacher, decoder |
//! | T-E     | teacher            | encoder              | teacher, encoder |
//! | T-D     | teacher            | decoder (teacher embedding) | teacher, decoder |
//! | E-D     | frozen encoder     | decoder              | encoder, decoder |
//!
//! The embedding input is always detached, so decoder-side gradients never
//! reach the encoder. With the embedding disabled the decoder reads the
//! deepest normalized level of its source pyramid directly.

use std::collections::{BTreeMap, HashMap};

use candle_core::{Device, Tensor, Var};

use crate::backbone::{ResNetFeatures, Teacher};
use crate::config::ModelConfig;
use crate::decoder::Decoder;
use crate::dfe::{Embedding, FeatureEmbedding};
use crate::distill::{anomaly_map, scalar_loss, AnomalyMapStack};
use crate::error::{ModelError, Result};
use crate::params::ParamStore;
use crate::pyramid::{FeaturePyramid, Source};

/// ChaCha stream for trainable student weights.
const STUDENT_STREAM: u64 = 0;
/// ChaCha stream for the frozen E-D reference encoder.
const REFERENCE_STREAM: u64 = 2;

pub const ENCODER_PREFIX: &str = "encoder";
pub const DFE_PREFIX: &str = "dfe";
pub const DECODER_PREFIX: &str = "decoder";

/// Normalized pyramids of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Teacher, or the frozen encoder for E-D. Never carries gradients.
    pub reference: FeaturePyramid,
    /// Trainable encoder student (DS, T-E).
    pub encoder: Option<FeaturePyramid>,
    pub decoder: Option<FeaturePyramid>,
}

/// Scalar losses; absent when the variant lacks that student.
#[derive(Debug, Clone)]
pub struct Losses {
    pub encoder: Option<Tensor>,
    pub decoder: Option<Tensor>,
}

impl Losses {
    /// Sum of the present losses, as one back-propagatable scalar.
    pub fn total(&self) -> Result<Tensor> {
        match (&self.encoder, &self.decoder) {
            (Some(e), Some(d)) => Ok((e + d)?),
            (Some(l), None) | (None, Some(l)) => Ok(l.clone()),
            (None, None) => Err(ModelError::Shape("variant produced no loss".into())),
        }
    }
}

#[derive(Debug, Clone)]
struct FrozenEncoder {
    net: ResNetFeatures,
}

pub struct DskdModel {
    config: ModelConfig,
    init_seed: u64,
    teacher: Option<Teacher>,
    frozen: Option<FrozenEncoder>,
    encoder: Option<ResNetFeatures>,
    dfe: Option<FeatureEmbedding>,
    decoder: Option<Decoder>,
    params: ParamStore,
}

impl std::fmt::Debug for DskdModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DskdModel")
            .field("config", &self.config)
            .field("init_seed", &self.init_seed)
            .finish_non_exhaustive()
    }
}

impl DskdModel {
    /// Fresh students drawn from `seed`.
    pub fn new(config: &ModelConfig, teacher: Option<Teacher>, seed: u64, device: &Device) -> Result<Self> {
        let params = ParamStore::seeded_stream(seed, STUDENT_STREAM, device);
        Self::assemble(config, teacher, seed, params, device)
    }

    /// Students restored from named tensors (`encoder.*`, `dfe.*`,
    /// `decoder.*`). Every expected tensor must be present and no other.
    pub fn from_tensors(
        config: &ModelConfig,
        teacher: Option<Teacher>,
        seed: u64,
        tensors: BTreeMap<String, Tensor>,
        device: &Device,
    ) -> Result<Self> {
        let provided: Vec<String> = tensors.keys().cloned().collect();
        let map: HashMap<String, Tensor> = tensors.into_iter().collect();
        let params = ParamStore::from_tensors(map, device);
        let model = Self::assemble(config, teacher, seed, params, device)
            .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let used = model.params.vars();
        if let Some(extra) = provided.iter().find(|k| !used.contains_key(*k)) {
            return Err(ModelError::Checkpoint(format!(
                "unexpected tensor `{extra}` for variant {}",
                config.variant
            )));
        }
        Ok(model)
    }

    fn assemble(
        config: &ModelConfig,
        teacher: Option<Teacher>,
        seed: u64,
        params: ParamStore,
        device: &Device,
    ) -> Result<Self> {
        config.validate()?;
        let variant = config.variant;
        let teacher = if variant.uses_teacher() {
            let t = teacher.ok_or_else(|| {
                ModelError::config("teacher", format!("variant {variant} needs a teacher"))
            })?;
            let tc = t.config();
            if tc.input_size != config.input_size || tc.width != config.width {
                return Err(ModelError::config(
                    "teacher",
                    format!(
                        "teacher built for size {} width {}, model wants size {} width {}",
                        tc.input_size, tc.width, config.input_size, config.width
                    ),
                ));
            }
            Some(t)
        } else {
            None
        };
        let frozen = if variant.has_encoder() && !variant.trains_encoder() {
            // Regenerated from the seed rather than stored: it never trains
            // and batch statistics are never accumulated.
            let store = ParamStore::seeded_stream(seed, REFERENCE_STREAM, device);
            Some(FrozenEncoder {
                net: ResNetFeatures::new(config, store.var_builder().pp(ENCODER_PREFIX))?,
            })
        } else {
            None
        };
        let vb = params.var_builder();
        let encoder = if variant.trains_encoder() {
            Some(ResNetFeatures::new(config, vb.pp(ENCODER_PREFIX))?)
        } else {
            None
        };
        let (dfe, decoder) = if variant.has_decoder() {
            let dfe = if config.dfe_enabled {
                Some(FeatureEmbedding::new(config, vb.pp(DFE_PREFIX))?)
            } else {
                None
            };
            (dfe, Some(Decoder::new(config, vb.pp(DECODER_PREFIX))?))
        } else {
            (None, None)
        };
        Ok(Self {
            config: *config,
            init_seed: seed,
            teacher,
            frozen,
            encoder,
            dfe,
            decoder,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn teacher(&self) -> Option<&Teacher> {
        self.teacher.as_ref()
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Every variable the optimizer updates.
    pub fn trainable_vars(&self) -> Vec<Var> {
        self.params.trainable("")
    }

    /// Student parameters and running statistics, for checkpointing.
    pub fn named_tensors(&self) -> BTreeMap<String, Tensor> {
        self.params.snapshot()
    }

    /// Normalized pyramids for a `[batch, 3, s, s]` input. `train` selects
    /// batch statistics (and their running update) in the students.
    pub fn forward_t(&self, x: &Tensor, train: bool) -> Result<ForwardOutput> {
        let teacher = match &self.teacher {
            Some(t) => Some(t.forward(x)?.l2_normalize()?),
            None => None,
        };
        let encoder = match &self.encoder {
            Some(e) => Some(e.forward_t(x, train, Source::Encoder)?.l2_normalize()?),
            None => None,
        };
        let frozen = match &self.frozen {
            Some(f) => Some(f.net.forward_t(x, false, Source::Encoder)?.detach().l2_normalize()?),
            None => None,
        };
        let reference = teacher
            .clone()
            .or_else(|| frozen.clone())
            .ok_or_else(|| ModelError::Shape("model has no reference network".into()))?;

        let decoder = match &self.decoder {
            Some(dec) => {
                // DS embeds the trainable encoder, T-D the teacher, E-D the
                // frozen encoder.
                let source = encoder
                    .as_ref()
                    .or(frozen.as_ref())
                    .or(teacher.as_ref())
                    .expect("decoder variants have an embedding source")
                    .detach();
                let embedding = match &self.dfe {
                    Some(dfe) => dfe.forward_t(&source, train)?,
                    None => Embedding(source.level(2).clone()),
                };
                Some(dec.forward_t(&embedding, train)?.l2_normalize()?)
            }
            None => None,
        };
        Ok(ForwardOutput {
            reference,
            encoder,
            decoder,
        })
    }

    /// Per-pixel discrepancy for every distillation pair of the variant.
    pub fn training_maps(&self, out: &ForwardOutput, lambda: f64) -> Result<(Option<AnomalyMapStack>, Option<AnomalyMapStack>)> {
        let e = match &out.encoder {
            Some(enc) => Some(anomaly_map(&out.reference, enc, lambda)?),
            None => None,
        };
        let d = match &out.decoder {
            Some(dec) => Some(anomaly_map(&out.reference, dec, lambda)?),
            None => None,
        };
        Ok((e, d))
    }

    pub fn losses(&self, out: &ForwardOutput, lambda: f64) -> Result<Losses> {
        let (e, d) = self.training_maps(out, lambda)?;
        Ok(Losses {
            encoder: e.as_ref().map(scalar_loss).transpose()?,
            decoder: d.as_ref().map(scalar_loss).transpose()?,
        })
    }

    /// The maps that drive detection: reference against the decoder, or
    /// against the encoder when there is no decoder.
    pub fn inference_maps(&self, out: &ForwardOutput, lambda: f64) -> Result<AnomalyMapStack> {
        let student = out
            .decoder
            .as_ref()
            .or(out.encoder.as_ref())
            .ok_or_else(|| ModelError::Shape("model has no student".into()))?;
        anomaly_map(&out.reference, student, lambda)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Variant;

    fn cfg(variant: Variant, dfe: bool) -> ModelConfig {
        ModelConfig {
            width: 4,
            variant,
            dfe_enabled: dfe,
            ..ModelConfig::new(64)
        }
    }

    fn teacher(c: &ModelConfig) -> Teacher {
        Teacher::random(c, 9, &Device::Cpu).unwrap()
    }

    fn prefixes(m: &DskdModel) -> Vec<&'static str> {
        let names = m.named_tensors();
        [ENCODER_PREFIX, DFE_PREFIX, DECODER_PREFIX]
            .into_iter()
            .filter(|p| names.keys().any(|k| k.starts_with(&format!("{p}."))))
            .collect()
    }

    #[test]
    fn parameter_groups_per_variant() {
        let dev = Device::Cpu;
        let cases = [
            (Variant::DualStudent, true, vec!["encoder", "dfe", "decoder"]),
            (Variant::DualStudent, false, vec!["encoder", "decoder"]),
            (Variant::TeacherEncoder, true, vec!["encoder"]),
            (Variant::TeacherDecoder, true, vec!["dfe", "decoder"]),
            (Variant::EncoderDecoder, true, vec!["dfe", "decoder"]),
        ];
        for (v, dfe, expected) in cases {
            let c = cfg(v, dfe);
            let t = v.uses_teacher().then(|| teacher(&c));
            let m = DskdModel::new(&c, t, 0, &dev).unwrap();
            assert_eq!(prefixes(&m), expected, "{v} dfe={dfe}");
        }
    }

    #[test]
    fn teacher_required_unless_ed() {
        let c = cfg(Variant::DualStudent, true);
        assert!(DskdModel::new(&c, None, 0, &Device::Cpu).is_err());
        let c = cfg(Variant::EncoderDecoder, true);
        assert!(DskdModel::new(&c, None, 0, &Device::Cpu).is_ok());
    }

    #[test]
    fn losses_present_per_variant() {
        let dev = Device::Cpu;
        let x = Tensor::randn(0f32, 1.0, (2, 3, 64, 64), &dev).unwrap();
        for v in Variant::ALL {
            let c = cfg(v, true);
            let m = DskdModel::new(&c, v.uses_teacher().then(|| teacher(&c)), 1, &dev).unwrap();
            let out = m.forward_t(&x, true).unwrap();
            let l = m.losses(&out, 0.1).unwrap();
            assert_eq!(l.encoder.is_some(), v.trains_encoder(), "{v}");
            assert_eq!(l.decoder.is_some(), v.has_decoder(), "{v}");
            let stack = m.inference_maps(&out, 0.1).unwrap();
            assert_eq!(stack.maps.len(), 3);
            let expected_student = if v.has_decoder() { Source::Decoder } else { Source::Encoder };
            assert_eq!(stack.pair.1, expected_student);
        }
    }

    #[test]
    fn roundtrip_through_named_tensors() {
        let dev = Device::Cpu;
        let c = cfg(Variant::DualStudent, true);
        let m = DskdModel::new(&c, Some(teacher(&c)), 3, &dev).unwrap();
        let restored = DskdModel::from_tensors(&c, Some(teacher(&c)), 3, m.named_tensors(), &dev).unwrap();
        let x = Tensor::randn(0f32, 1.0, (1, 3, 64, 64), &dev).unwrap();
        let a = m.inference_maps(&m.forward_t(&x, false).unwrap(), 0.1).unwrap();
        let b = restored.inference_maps(&restored.forward_t(&x, false).unwrap(), 0.1).unwrap();
        for (p, q) in a.maps.iter().zip(&b.maps) {
            let d = (p - q).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
            assert_eq!(d, 0.0);
        }

        let mut extra = m.named_tensors();
        extra.insert("decoder.bogus".into(), Tensor::zeros(1, candle_core::DType::F32, &dev).unwrap());
        assert!(DskdModel::from_tensors(&c, Some(teacher(&c)), 3, extra, &dev).is_err());
        let mut missing = m.named_tensors();
        missing.remove("decoder.layer1.0.conv1.weight");
        assert!(DskdModel::from_tensors(&c, Some(teacher(&c)), 3, missing, &dev).is_err());
    }
}
