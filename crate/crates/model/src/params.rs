//! Named parameter storage behind `candle_nn::VarBuilder`.
//!
//! Candle's CPU generator cannot be seeded, so fresh parameters are drawn
//! here from a ChaCha stream in creation order, which makes initialization
//! reproducible for a given seed.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use candle_core::{DType, Device, Shape, Tensor, Var};
use candle_nn::init::{FanInOut, NormalOrUniform};
use candle_nn::var_builder::SimpleBackend;
use candle_nn::{Init, VarBuilder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

struct Inner {
    rng: Option<ChaCha8Rng>,
    stored: HashMap<String, Tensor>,
    vars: BTreeMap<String, Var>,
}

/// Shared registry of trainable variables, keyed by dotted path.
#[derive(Clone)]
pub struct ParamStore {
    inner: Arc<Mutex<Inner>>,
    device: Device,
}

impl ParamStore {
    /// Every requested parameter is freshly drawn from `seed`.
    pub fn seeded(seed: u64, device: &Device) -> Self {
        Self::seeded_stream(seed, 0, device)
    }

    /// Like [`ParamStore::seeded`] but on an independent ChaCha stream, so
    /// networks initialized from the same seed do not share draws.
    pub fn seeded_stream(seed: u64, stream: u64, device: &Device) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self::build(Some(rng), HashMap::new(), device)
    }

    /// Every requested parameter must be present in `tensors`.
    pub fn from_tensors(tensors: HashMap<String, Tensor>, device: &Device) -> Self {
        Self::build(None, tensors, device)
    }

    fn build(rng: Option<ChaCha8Rng>, stored: HashMap<String, Tensor>, device: &Device) -> Self {
        Self {
            inner: Arc::new(Mutex::new(Inner {
                rng,
                stored,
                vars: BTreeMap::new(),
            })),
            device: device.clone(),
        }
    }

    pub fn var_builder(&self) -> VarBuilder<'static> {
        VarBuilder::from_backend(Box::new(self.clone()), DType::F32, self.device.clone())
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// All registered variables in name order.
    pub fn vars(&self) -> BTreeMap<String, Var> {
        self.inner.lock().expect("param store poisoned").vars.clone()
    }

    /// Variables whose name starts with `prefix` and that receive gradients
    /// (normalization running statistics are excluded).
    pub fn trainable(&self, prefix: &str) -> Vec<Var> {
        self.vars()
            .into_iter()
            .filter(|(name, _)| name.starts_with(prefix) && !is_running_stat(name))
            .map(|(_, v)| v)
            .collect()
    }

    /// Detached copies of every parameter, for serialization.
    pub fn snapshot(&self) -> BTreeMap<String, Tensor> {
        self.vars()
            .into_iter()
            .map(|(name, var)| {
                let t = var.as_tensor().detach().copy().expect("cpu copy");
                (name, t)
            })
            .collect()
    }
}

pub(crate) fn is_running_stat(name: &str) -> bool {
    name.ends_with("running_mean") || name.ends_with("running_var")
}

fn draw(rng: &mut ChaCha8Rng, shape: &Shape, init: Init) -> candle_core::Result<Vec<f32>> {
    let n = shape.elem_count();
    let dims = shape.dims();
    let normal = |rng: &mut ChaCha8Rng, mean: f64, std: f64| -> candle_core::Result<Vec<f32>> {
        let dist = Normal::new(mean, std).map_err(|e| candle_core::Error::Msg(e.to_string()))?;
        Ok((0..n).map(|_| dist.sample(rng) as f32).collect())
    };
    match init {
        Init::Const(v) => Ok(vec![v as f32; n]),
        Init::Randn { mean, stdev } => normal(rng, mean, stdev),
        Init::Uniform { lo, up } => Ok((0..n).map(|_| rng.random_range(lo..up) as f32).collect()),
        Init::Kaiming { dist, fan, non_linearity } => {
            let receptive: usize = dims.iter().skip(2).product();
            let fan_value = match fan {
                FanInOut::FanIn => dims.get(1).copied().unwrap_or(1) * receptive.max(1),
                FanInOut::FanOut => dims.first().copied().unwrap_or(1) * receptive.max(1),
            };
            let std = non_linearity.gain() / (fan_value as f64).sqrt();
            match dist {
                NormalOrUniform::Normal => normal(rng, 0.0, std),
                NormalOrUniform::Uniform => {
                    let bound = 3f64.sqrt() * std;
                    Ok((0..n).map(|_| rng.random_range(-bound..bound) as f32).collect())
                }
            }
        }
    }
}

impl SimpleBackend for ParamStore {
    fn get(
        &self,
        shape: Shape,
        name: &str,
        init: Init,
        dtype: DType,
        dev: &Device,
    ) -> candle_core::Result<Tensor> {
        let mut inner = self.inner.lock().expect("param store poisoned");
        if let Some(var) = inner.vars.get(name) {
            if var.shape() != &shape {
                candle_core::bail!("parameter {name} requested with shape {shape:?}, have {:?}", var.shape());
            }
            return Ok(var.as_tensor().clone());
        }
        let tensor = if let Some(t) = inner.stored.get(name) {
            if t.shape() != &shape {
                candle_core::bail!("stored parameter {name} has shape {:?}, expected {shape:?}", t.shape());
            }
            t.to_dtype(dtype)?.to_device(dev)?.copy()?
        } else if let Some(rng) = inner.rng.as_mut() {
            Tensor::from_vec(draw(rng, &shape, init)?, shape, dev)?.to_dtype(dtype)?
        } else {
            candle_core::bail!("missing parameter {name}")
        };
        let var = Var::from_tensor(&tensor)?;
        let out = var.as_tensor().clone();
        inner.vars.insert(name.to_string(), var);
        Ok(out)
    }

    fn get_unchecked(&self, name: &str, _dtype: DType, _dev: &Device) -> candle_core::Result<Tensor> {
        let inner = self.inner.lock().expect("param store poisoned");
        inner
            .vars
            .get(name)
            .map(|v| v.as_tensor().clone())
            .ok_or_else(|| candle_core::Error::Msg(format!("missing parameter {name}")))
    }

    fn contains_tensor(&self, name: &str) -> bool {
        let inner = self.inner.lock().expect("param store poisoned");
        inner.vars.contains_key(name) || inner.stored.contains_key(name)
    }
}
