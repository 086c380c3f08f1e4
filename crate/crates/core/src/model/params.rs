use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex};

use candle_core::{DType, Device, Shape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub const DTYPE: DType = DType::F64;

/// Named trainable tensors. Clones share storage, so updates made through
/// the store are seen by every module holding the same [`Var`].
#[derive(Clone, Default)]
pub struct ParamStore {
    vars: Arc<Mutex<BTreeMap<String, Var>>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&self, name: String, var: Var) -> Result<()> {
        let mut vars = self.vars.lock().expect("param store poisoned");
        if vars.contains_key(&name) {
            return Err(Error::Checkpoint(format!("parameter {name} registered twice")));
        }
        vars.insert(name, var);
        Ok(())
    }

    /// All parameters in name order.
    pub fn vars(&self) -> Vec<(String, Var)> {
        let vars = self.vars.lock().expect("param store poisoned");
        vars.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.vars.lock().expect("param store poisoned").get(name).cloned()
    }

    pub fn len(&self) -> usize {
        self.vars.lock().expect("param store poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn element_count(&self) -> usize {
        self.vars().iter().map(|(_, v)| v.elem_count()).sum()
    }

    /// Detached copies of every parameter.
    pub fn snapshot(&self) -> HashMap<String, Tensor> {
        self.vars()
            .into_iter()
            .map(|(k, v)| (k, v.as_detached_tensor().copy().expect("cpu copy")))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        candle_core::safetensors::save(&self.snapshot(), path)?;
        Ok(())
    }

    /// Overwrites every registered parameter from a safetensors file. Missing
    /// names and shape mismatches are errors.
    pub fn load(&self, path: &Path) -> Result<()> {
        let tensors = candle_core::safetensors::load(path, &Device::Cpu)?;
        self.assign(&tensors)
    }

    pub fn assign(&self, tensors: &HashMap<String, Tensor>) -> Result<()> {
        for (name, var) in self.vars() {
            let t = tensors
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if t.shape() != var.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: expected {:?}, found {:?}",
                    var.shape(),
                    t.shape()
                )));
            }
            var.set(&t.to_dtype(DTYPE)?)?;
        }
        Ok(())
    }
}

/// Registers parameters under a dotted prefix, drawing initial values from a
/// seeded generator so that construction is reproducible.
#[derive(Clone)]
pub struct ParamBuilder {
    store: ParamStore,
    prefix: String,
    rng: Arc<Mutex<ChaCha8Rng>>,
}

impl ParamBuilder {
    pub fn new(store: &ParamStore, seed: u64) -> Self {
        ParamBuilder {
            store: store.clone(),
            prefix: String::new(),
            rng: Arc::new(Mutex::new(ChaCha8Rng::seed_from_u64(seed))),
        }
    }

    pub fn pp(&self, name: &str) -> ParamBuilder {
        let prefix = if self.prefix.is_empty() {
            name.to_owned()
        } else {
            format!("{}.{name}", self.prefix)
        };
        ParamBuilder {
            store: self.store.clone(),
            prefix,
            rng: self.rng.clone(),
        }
    }

    fn register(&self, name: &str, tensor: Tensor) -> Result<Var> {
        let var = Var::from_tensor(&tensor)?;
        self.store.insert(self.pp(name).prefix, var.clone())?;
        Ok(var)
    }

    pub fn normal<S: Into<Shape>>(&self, name: &str, shape: S, std: f64) -> Result<Var> {
        let shape = shape.into();
        let normal = Normal::new(0.0, std).map_err(|e| Error::Argument(e.to_string()))?;
        let values: Vec<f64> = {
            let mut rng = self.rng.lock().expect("rng poisoned");
            (0..shape.elem_count()).map(|_| normal.sample(&mut *rng)).collect()
        };
        self.register(name, Tensor::from_vec(values, shape, &Device::Cpu)?)
    }

    pub fn constant<S: Into<Shape>>(&self, name: &str, shape: S, value: f64) -> Result<Var> {
        self.register(name, Tensor::full(value, shape, &Device::Cpu)?)
    }

    pub fn from_tensor(&self, name: &str, tensor: &Tensor) -> Result<Var> {
        self.register(name, tensor.to_dtype(DTYPE)?.copy()?)
    }
}
