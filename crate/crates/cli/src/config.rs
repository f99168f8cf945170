//! Run configuration: defaults, then a flat `key = value` file, then flags.
//! The resolved form is written back out with every field present, and
//! reading that snapshot reproduces the run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dskd_core::postprocess::DEFAULT_SIGMA;
use dskd_model::{MapSelection, ModelConfig, TrainConfig, Variant};

use crate::exit::{CliError, CliResult};

pub const SNAPSHOT_FILE: &str = "config.resolved";

/// Every setting of a train or ablate run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub category: String,
    pub size: usize,
    pub width: usize,
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub variant: Variant,
    pub dfe: bool,
    pub maps: MapSelection,
    pub sigma: f64,
    /// Pretrained teacher weights; a seeded random teacher when absent.
    pub teacher: Option<PathBuf>,
    pub teacher_seed: u64,
    pub out: PathBuf,
    pub device: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let m = ModelConfig::new(256);
        Self {
            data: None,
            category: dskd_core::synth::CATEGORY.to_string(),
            size: m.input_size,
            width: m.width,
            epochs: t.epochs,
            lr: t.learning_rate,
            beta1: t.adam_betas.0,
            beta2: t.adam_betas.1,
            lambda: t.lambda,
            batch_size: t.batch_size,
            seed: t.seed,
            variant: m.variant,
            dfe: m.dfe_enabled,
            maps: MapSelection::ALL,
            sigma: DEFAULT_SIGMA,
            teacher: None,
            teacher_seed: 0,
            out: PathBuf::from("runs/latest"),
            device: "cpu".to_string(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> CliResult<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| CliError::usage(format!("invalid value `{value}` for `{key}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> CliResult<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(CliError::usage(format!("invalid value `{value}` for `{key}`: expected true or false"))),
    }
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty() && value != "none").then(|| PathBuf::from(value))
}

impl RunConfig {
    /// Applies one `key = value` setting. Keys use the long flag names with
    /// `-` or `_`.
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let value = value.trim();
        match key.trim().replace('-', "_").as_str() {
            "data" => self.data = optional_path(value),
            "category" => self.category = value.to_string(),
            "size" => self.size = parse(key, value)?,
            "width" => self.width = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "variant" => self.variant = parse(key, value)?,
            "dfe" => self.dfe = parse_bool(key, value)?,
            "maps" => self.maps = parse(key, value)?,
            "sigma" => self.sigma = parse(key, value)?,
            "teacher" => self.teacher = optional_path(value),
            "teacher_seed" => self.teacher_seed = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "device" => self.device = value.to_string(),
            other => return Err(CliError::usage(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies a config file: one `key = value` per line, `#` comments.
    pub fn apply_text(&mut self, text: &str) -> CliResult<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("config line {}: expected `key = value`", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> CliResult<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    pub fn to_text(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "none".into());
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("data", path(&self.data));
        kv("category", self.category.clone());
        kv("size", self.size.to_string());
        kv("width", self.width.to_string());
        kv("epochs", self.epochs.to_string());
        kv("lr", self.lr.to_string());
        kv("beta1", self.beta1.to_string());
        kv("beta2", self.beta2.to_string());
        kv("lambda", self.lambda.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("seed", self.seed.to_string());
        kv("variant", self.variant.to_string());
        kv("dfe", self.dfe.to_string());
        kv("maps", self.maps.to_string());
        kv("sigma", self.sigma.to_string());
        kv("teacher", path(&self.teacher));
        kv("teacher_seed", self.teacher_seed.to_string());
        kv("out", self.out.display().to_string());
        kv("device", self.device.clone());
        out
    }

    pub fn write_snapshot(&self, dir: &Path) -> CliResult<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))?;
        let path = dir.join(SNAPSHOT_FILE);
        std::fs::write(&path, self.to_text())
            .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            input_size: self.size,
            width: self.width,
            variant: self.variant,
            dfe_enabled: self.dfe,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            adam_betas: (self.beta1, self.beta2),
            epochs: self.epochs,
            lambda: self.lambda,
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }

    /// Checks every field; errors name the offending one.
    pub fn validate(&self) -> CliResult<()> {
        self.model_config().validate()?;
        self.train_config().validate()?;
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(CliError::usage(format!("invalid `sigma`: {} is not positive", self.sigma)));
        }
        if self.category.is_empty() {
            return Err(CliError::usage("invalid `category`: must not be empty"));
        }
        if self.device != "cpu" {
            return Err(CliError::usage(format!("invalid `device`: `{}` (only cpu is supported)", self.device)));
        }
        Ok(())
    }

    pub fn data_root(&self) -> CliResult<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| CliError::usage("missing `data`: pass --data or set it in the config file"))
    }
}

/// Overrides collected from flags; `None` leaves the value untouched.
pub fn apply_overrides(cfg: &mut RunConfig, pairs: &BTreeMap<&'static str, Option<String>>) -> CliResult<()> {
    for (k, v) in pairs {
        if let Some(v) = v {
            cfg.set(k, v)?;
        }
    }
    Ok(())
}
