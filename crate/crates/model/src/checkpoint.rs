//! Single-file checkpoint: student tensors (`encoder.*`, `dfe.*`,
//! `decoder.*`), calibration (`calib.*`) and a JSON fingerprint of the run
//! stored in the safetensors metadata.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use dskd_core::score::ScoreCalibration;
use safetensors::SafeTensors;
use serde::{Deserialize, Serialize};

use crate::backbone::{Teacher, TeacherSource};
use crate::config::{MapSelection, ModelConfig, Variant};
use crate::detector::Detector;
use crate::error::{ModelError, Result};
use crate::model::DskdModel;

pub const FORMAT_VERSION: u32 = 1;
const FINGERPRINT_KEY: &str = "dskd.fingerprint";
const CALIB_MIN: &str = "calib.min_score";
const CALIB_MAX: &str = "calib.max_score";

/// Everything needed to rebuild the networks and reproduce inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub format_version: u32,
    pub input_size: usize,
    pub width: usize,
    pub variant: Variant,
    pub dfe_enabled: bool,
    pub lambda: f64,
    pub sigma: f64,
    /// Levels fused when the calibration was computed.
    pub maps: MapSelection,
    pub seed: u64,
    /// Absent for variants without a teacher.
    pub teacher: Option<TeacherSource>,
    pub teacher_sha256: Option<String>,
}

impl Fingerprint {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            input_size: self.input_size,
            width: self.width,
            variant: self.variant,
            dfe_enabled: self.dfe_enabled,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub fingerprint: Fingerprint,
    pub tensors: BTreeMap<String, Tensor>,
    pub calibration: ScoreCalibration,
}

impl Checkpoint {
    pub fn from_model(
        model: &DskdModel,
        lambda: f64,
        sigma: f64,
        maps: MapSelection,
        calibration: ScoreCalibration,
    ) -> Self {
        let c = model.config();
        let fingerprint = Fingerprint {
            format_version: FORMAT_VERSION,
            input_size: c.input_size,
            width: c.width,
            variant: c.variant,
            dfe_enabled: c.dfe_enabled,
            lambda,
            sigma,
            maps,
            seed: model.init_seed(),
            teacher: model.teacher().map(|t| t.source().clone()),
            teacher_sha256: model.teacher().map(|t| t.sha256().to_string()),
        };
        Self {
            fingerprint,
            tensors: model.named_tensors(),
            calibration,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let device = Device::Cpu;
        let calib = [
            (CALIB_MIN.to_string(), Tensor::new(&[self.calibration.min_score()], &device)?),
            (CALIB_MAX.to_string(), Tensor::new(&[self.calibration.max_score()], &device)?),
        ];
        let meta = serde_json::to_string(&self.fingerprint)
            .map_err(|e| ModelError::Checkpoint(format!("cannot encode fingerprint: {e}")))?;
        let metadata = HashMap::from([(FINGERPRINT_KEY.to_string(), meta)]);
        let entries = self
            .tensors
            .iter()
            .map(|(k, t)| (k.as_str(), t))
            .chain(calib.iter().map(|(k, t)| (k.as_str(), t)));
        let bytes = safetensors::serialize(entries, Some(metadata))
            .map_err(|e| ModelError::Checkpoint(format!("cannot serialize: {e}")))?;
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| ModelError::io(parent, e))?;
        }
        std::fs::write(path, bytes).map_err(|e| ModelError::io(path, e))
    }

    pub fn load(path: &Path, device: &Device) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| ModelError::io(path, e))?;
        let bad = |reason: String| ModelError::Checkpoint(format!("{}: {reason}", path.display()));
        let (_, meta) = SafeTensors::read_metadata(&bytes).map_err(|e| bad(e.to_string()))?;
        let json = meta
            .metadata()
            .as_ref()
            .and_then(|m| m.get(FINGERPRINT_KEY))
            .ok_or_else(|| bad("no fingerprint in metadata".into()))?;
        let fingerprint: Fingerprint = serde_json::from_str(json).map_err(|e| bad(e.to_string()))?;
        if fingerprint.format_version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {}", fingerprint.format_version)));
        }
        let mut tensors: BTreeMap<String, Tensor> = candle_core::safetensors::load_buffer(&bytes, device)
            .map_err(|e| bad(e.to_string()))?
            .into_iter()
            .collect();
        let mut take = |k: &str| -> Result<f64> {
            let t = tensors.remove(k).ok_or_else(|| bad(format!("missing `{k}`")))?;
            Ok(t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?.first().copied().unwrap_or(f64::NAN))
        };
        let (min, max) = (take(CALIB_MIN)?, take(CALIB_MAX)?);
        let calibration = ScoreCalibration::new(min, max).map_err(|e| bad(e.to_string()))?;
        Ok(Self {
            fingerprint,
            tensors,
            calibration,
        })
    }

    pub fn model_config(&self) -> ModelConfig {
        self.fingerprint.model_config()
    }

    /// Loads the teacher named by the fingerprint (or `teacher_override`)
    /// and checks its digest against the recorded one.
    pub fn load_teacher(&self, teacher_override: Option<&Path>, device: &Device) -> Result<Option<Teacher>> {
        let Some(recorded) = &self.fingerprint.teacher else {
            return Ok(None);
        };
        let source = match teacher_override {
            Some(p) => TeacherSource::File { path: p.to_path_buf() },
            None => recorded.clone(),
        };
        let teacher = Teacher::load(&self.model_config(), &source, device)?;
        if let Some(hash) = &self.fingerprint.teacher_sha256 {
            if hash != teacher.sha256() {
                return Err(ModelError::Checkpoint(format!(
                    "teacher digest {} differs from the recorded {hash}",
                    teacher.sha256()
                )));
            }
        }
        Ok(Some(teacher))
    }

    pub fn into_model(self, teacher_override: Option<&Path>, device: &Device) -> Result<(DskdModel, Fingerprint, ScoreCalibration)> {
        let teacher = self.load_teacher(teacher_override, device)?;
        let config = self.model_config();
        let model = DskdModel::from_tensors(&config, teacher, self.fingerprint.seed, self.tensors, device)?;
        Ok((model, self.fingerprint, self.calibration))
    }

    pub fn into_detector(self, teacher_override: Option<&Path>, device: &Device) -> Result<Detector> {
        let (model, fp, calibration) = self.into_model(teacher_override, device)?;
        Ok(Detector::new(model, calibration, fp.lambda).with_sigma(fp.sigma).with_maps(fp.maps))
    }
}
