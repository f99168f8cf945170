use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

/// Number of pyramid levels taken from the backbone.
pub const LEVELS: usize = 3;

/// Base channel width of ResNet18; level channels are `w, 2w, 4w`.
pub const RESNET18_WIDTH: usize = 64;

/// Topology parameters shared by every network in a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Square input side in pixels; must be a multiple of 32.
    pub input_size: usize,
    /// Channels of the first pyramid level. 64 reproduces ResNet18;
    /// smaller widths keep the same topology for fast experiments.
    pub width: usize,
    pub variant: Variant,
    pub dfe_enabled: bool,
}

impl ModelConfig {
    pub fn new(input_size: usize) -> Self {
        Self {
            input_size,
            width: RESNET18_WIDTH,
            variant: Variant::DualStudent,
            dfe_enabled: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.input_size % 32 != 0 {
            return Err(ModelError::config(
                "size",
                format!("{} is not a positive multiple of 32", self.input_size),
            ));
        }
        if self.width == 0 {
            return Err(ModelError::config("width", "must be at least 1"));
        }
        Ok(())
    }

    /// Channels per level, shallow to deep.
    pub fn channels(&self) -> [usize; LEVELS] {
        [self.width, 2 * self.width, 4 * self.width]
    }

    /// Spatial side per level: `input / 2^(k+1)` for k = 1..=3.
    pub fn level_sizes(&self) -> [usize; LEVELS] {
        let s = self.input_size;
        [s / 4, s / 8, s / 16]
    }

    /// Channels of the embedding fed to the decoder.
    pub fn embedding_channels(&self) -> usize {
        4 * self.width
    }
}

/// Which networks are trained and which pair drives inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Teacher, encoder student and decoder student; inference on teacher-decoder.
    #[serde(rename = "DS")]
    DualStudent,
    /// Teacher and encoder only.
    #[serde(rename = "T-E")]
    TeacherEncoder,
    /// Teacher feeds the embedding and the decoder distills from it.
    #[serde(rename = "T-D")]
    TeacherDecoder,
    /// A frozen random encoder is the reference for the decoder; no teacher.
    #[serde(rename = "E-D")]
    EncoderDecoder,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::DualStudent,
        Variant::TeacherEncoder,
        Variant::TeacherDecoder,
        Variant::EncoderDecoder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::DualStudent => "DS",
            Variant::TeacherEncoder => "T-E",
            Variant::TeacherDecoder => "T-D",
            Variant::EncoderDecoder => "E-D",
        }
    }

    pub fn has_encoder(self) -> bool {
        !matches!(self, Variant::TeacherDecoder)
    }

    pub fn has_decoder(self) -> bool {
        !matches!(self, Variant::TeacherEncoder)
    }

    pub fn trains_encoder(self) -> bool {
        matches!(self, Variant::DualStudent | Variant::TeacherEncoder)
    }

    pub fn uses_teacher(self) -> bool {
        !matches!(self, Variant::EncoderDecoder)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| ModelError::config("variant", format!("unknown variant `{s}` (DS, T-E, T-D, E-D)")))
    }
}

/// Subset of pyramid levels whose maps are fused at inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MapSelection([bool; LEVELS]);

impl MapSelection {
    pub const ALL: MapSelection = MapSelection([true; LEVELS]);

    pub fn new(levels: [bool; LEVELS]) -> Result<Self> {
        if !levels.iter().any(|&l| l) {
            return Err(ModelError::config("maps", "at least one level must be selected"));
        }
        Ok(Self(levels))
    }

    pub fn single(level: usize) -> Result<Self> {
        if level == 0 || level > LEVELS {
            return Err(ModelError::config("maps", format!("level M{level} does not exist")));
        }
        let mut levels = [false; LEVELS];
        levels[level - 1] = true;
        Ok(Self(levels))
    }

    /// Whether zero-based level `k` is included.
    pub fn contains(&self, k: usize) -> bool {
        self.0[k]
    }

    pub fn levels(&self) -> [bool; LEVELS] {
        self.0
    }
}

impl Default for MapSelection {
    fn default() -> Self {
        Self::ALL
    }
}

impl fmt::Display for MapSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == Self::ALL {
            return f.write_str("M1-3");
        }
        let names: Vec<String> = (0..LEVELS)
            .filter(|&k| self.0[k])
            .map(|k| format!("M{}", k + 1))
            .collect();
        f.write_str(&names.join("+"))
    }
}

impl FromStr for MapSelection {
    type Err = ModelError;

    /// Accepts `M1-3`/`all`, or `M1`, `M2`, `M3` joined by `+`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("all") || s.eq_ignore_ascii_case("M1-3") {
            return Ok(Self::ALL);
        }
        let mut levels = [false; LEVELS];
        for part in s.split('+') {
            let part = part.trim();
            let k = part
                .strip_prefix(['M', 'm'])
                .and_then(|n| n.parse::<usize>().ok())
                .filter(|&k| (1..=LEVELS).contains(&k))
                .ok_or_else(|| ModelError::config("maps", format!("cannot parse map selection `{s}`")))?;
            levels[k - 1] = true;
        }
        Self::new(levels)
    }
}

/// Optimizer and loss settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_betas: (f64, f64),
    pub epochs: usize,
    /// Weight of the Euclidean term in the per-pixel discrepancy.
    pub lambda: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            adam_betas: (0.5, 0.999),
            epochs: 200,
            lambda: 0.1,
            batch_size: 8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(ModelError::config("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(ModelError::config("batch_size", "must be at least 1"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(ModelError::config("lambda", format!("{} is not a finite non-negative value", self.lambda)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::config("lr", format!("{} is not a positive value", self.learning_rate)));
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(ModelError::config("adam_betas", "betas must lie in [0, 1)"));
        }
        Ok(())
    }
}
