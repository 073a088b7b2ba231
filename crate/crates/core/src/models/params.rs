//! Named trainable parameters and a seeded `VarBuilder` backend.
//!
//! candle's own initializers draw from an unseedable CPU generator, so every
//! parameter is created here from a ChaCha stream instead, following the
//! same [`Init`] recipes. Parameters may alternatively be taken from a
//! tensor source (a pretrained encoder or a checkpoint).

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use candle_core::{DType, Device, Shape, Tensor, Var};
use candle_nn::init::NormalOrUniform;
use candle_nn::var_builder::SimpleBackend;
use candle_nn::{Init, VarBuilder};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Shared, ordered collection of trainable variables.
#[derive(Clone, Default)]
pub struct ParamStore {
    vars: Arc<Mutex<BTreeMap<String, Var>>>,
}

impl std::fmt::Debug for ParamStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamStore")
            .field("tensors", &self.len())
            .field("elements", &self.element_count())
            .finish()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// All variables in name order.
    pub fn named_vars(&self) -> Vec<(String, Var)> {
        self.vars
            .lock()
            .unwrap()
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn vars_where(&self, keep: impl Fn(&str) -> bool) -> Vec<Var> {
        self.vars
            .lock()
            .unwrap()
            .iter()
            .filter(|(k, _)| keep(k))
            .map(|(_, v)| v.clone())
            .collect()
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.vars.lock().unwrap().get(name).cloned()
    }

    pub fn len(&self) -> usize {
        self.vars.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn element_count(&self) -> usize {
        self.vars
            .lock()
            .unwrap()
            .values()
            .map(|v| v.elem_count())
            .sum()
    }

    /// Snapshot of current values, detached from the variables.
    pub fn tensors(&self) -> candle_core::Result<BTreeMap<String, Tensor>> {
        self.vars
            .lock()
            .unwrap()
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().copy()?)))
            .collect()
    }

    /// Overwrites variables from a snapshot taken with [`ParamStore::tensors`].
    pub fn restore(&self, snapshot: &BTreeMap<String, Tensor>) -> candle_core::Result<()> {
        let vars = self.vars.lock().unwrap();
        for (name, value) in snapshot {
            if let Some(var) = vars.get(name) {
                var.set(value)?;
            }
        }
        Ok(())
    }

    /// Builder whose parameters are stored under `prefix.` and drawn from
    /// the seeded stream `rng` (or from `source`, when given).
    pub fn builder(
        &self,
        prefix: &str,
        source: Option<TensorSource>,
        rng: SharedRng,
        dtype: DType,
        device: &Device,
    ) -> VarBuilder<'static> {
        let backend = SeededBackend {
            store: self.clone(),
            prefix: prefix.to_string(),
            source,
            rng,
        };
        VarBuilder::from_backend(Box::new(backend), dtype, device.clone())
    }
}

pub type SharedRng = Arc<Mutex<ChaCha8Rng>>;

pub fn shared_rng(seed: u64) -> SharedRng {
    Arc::new(Mutex::new(ChaCha8Rng::seed_from_u64(seed)))
}

/// Tensors that parameters are read from instead of being initialized.
#[derive(Clone)]
pub struct TensorSource {
    pub tensors: Arc<HashMap<String, Tensor>>,
    /// When false, names absent from the source fall back to seeded
    /// initialization; when true they are an error.
    pub strict: bool,
}

impl TensorSource {
    pub fn new(tensors: HashMap<String, Tensor>, strict: bool) -> Self {
        Self {
            tensors: Arc::new(tensors),
            strict,
        }
    }

    fn lookup(&self, name: &str) -> Option<&Tensor> {
        if let Some(t) = self.tensors.get(name) {
            return Some(t);
        }
        // Older BERT exports name layer-norm parameters gamma/beta.
        if let Some(stem) = name.strip_suffix(".weight") {
            return self.tensors.get(&format!("{stem}.gamma"));
        }
        if let Some(stem) = name.strip_suffix(".bias") {
            return self.tensors.get(&format!("{stem}.beta"));
        }
        None
    }
}

struct SeededBackend {
    store: ParamStore,
    prefix: String,
    source: Option<TensorSource>,
    rng: SharedRng,
}

impl SeededBackend {
    fn key(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }
}

impl SimpleBackend for SeededBackend {
    fn get(
        &self,
        shape: Shape,
        name: &str,
        init: Init,
        dtype: DType,
        dev: &Device,
    ) -> candle_core::Result<Tensor> {
        let key = self.key(name);
        if let Some(var) = self.store.get(&key) {
            if var.shape() != &shape {
                candle_core::bail!(
                    "parameter {key} requested with shape {shape:?} but exists as {:?}",
                    var.shape()
                );
            }
            return Ok(var.as_tensor().clone());
        }
        let from_source = match &self.source {
            Some(source) => match source.lookup(name) {
                Some(t) => Some(t),
                None if source.strict => {
                    candle_core::bail!("parameter {name} is missing from the loaded tensors")
                }
                None => None,
            },
            None => None,
        };
        let var = match from_source {
            Some(t) => {
                if t.shape() != &shape {
                    candle_core::bail!(
                        "parameter {name} has shape {:?}, expected {shape:?}",
                        t.shape()
                    );
                }
                Var::from_tensor(&t.to_dtype(dtype)?.to_device(dev)?)?
            }
            None => {
                let mut rng = self.rng.lock().unwrap();
                seeded_init(&mut rng, init, &shape, dtype, dev)?
            }
        };
        let tensor = var.as_tensor().clone();
        self.store.vars.lock().unwrap().insert(key, var);
        Ok(tensor)
    }

    fn get_unchecked(&self, name: &str, dtype: DType, dev: &Device) -> candle_core::Result<Tensor> {
        if let Some(var) = self.store.get(&self.key(name)) {
            return Ok(var.as_tensor().clone());
        }
        match self.source.as_ref().and_then(|s| s.lookup(name)) {
            Some(t) => {
                let var = Var::from_tensor(&t.to_dtype(dtype)?.to_device(dev)?)?;
                let tensor = var.as_tensor().clone();
                self.store.vars.lock().unwrap().insert(self.key(name), var);
                Ok(tensor)
            }
            None => candle_core::bail!("parameter {name} has no shape hint and no source"),
        }
    }

    fn contains_tensor(&self, name: &str) -> bool {
        self.store.get(&self.key(name)).is_some()
            || self
                .source
                .as_ref()
                .is_some_and(|s| s.lookup(name).is_some())
    }
}

/// Draws a variable following `init` from `rng`.
pub fn seeded_init(
    rng: &mut ChaCha8Rng,
    init: Init,
    shape: &Shape,
    dtype: DType,
    dev: &Device,
) -> candle_core::Result<Var> {
    let n = shape.elem_count();
    let values: Vec<f64> = match init {
        Init::Const(c) => vec![c; n],
        Init::Uniform { lo, up } => (0..n).map(|_| rng.random_range(lo..up)).collect(),
        Init::Randn { mean, stdev } => (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                mean + stdev * z
            })
            .collect(),
        Init::Kaiming {
            dist,
            fan,
            non_linearity,
        } => {
            let std = non_linearity.gain() / (fan.for_shape(shape) as f64).sqrt();
            match dist {
                NormalOrUniform::Uniform => {
                    let bound = 3f64.sqrt() * std;
                    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                }
                NormalOrUniform::Normal => (0..n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(rng);
                        std * z
                    })
                    .collect(),
            }
        }
    };
    let t = Tensor::from_vec(values, shape.clone(), dev)?.to_dtype(dtype)?;
    Var::from_tensor(&t)
}
