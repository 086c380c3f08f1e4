//! Adam with a linear-warmup-then-constant learning rate and optional
//! global gradient-norm clipping.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::backprop::GradStore;
use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub max_grad_norm: Option<f64>,
    pub warmup_steps: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            max_grad_norm: None,
            warmup_steps: 0,
        }
    }
}

impl AdamConfig {
    /// Learning rate for the 0-based update `step`.
    pub fn rate_at(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 || step >= self.warmup_steps {
            self.learning_rate
        } else {
            self.learning_rate * (step + 1) as f64 / self.warmup_steps as f64
        }
    }
}

pub struct Adam {
    pub config: AdamConfig,
    pub step: usize,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

/// What one update did, for logging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub grad_norm: f64,
    pub learning_rate: f64,
    pub clipped: bool,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    /// Applies one update to every parameter that received a gradient.
    pub fn apply(&mut self, store: &ParamStore, grads: &GradStore) -> Result<StepReport> {
        let vars = store.vars();
        let mut present = Vec::with_capacity(vars.len());
        let mut sq = 0.0;
        for (name, var) in &vars {
            if let Some(g) = grads.get(var.as_tensor()) {
                sq += g.sqr()?.sum_all()?.to_scalar::<f64>()?;
                present.push((name, var, g.clone()));
            }
        }
        let grad_norm = sq.sqrt();
        if !grad_norm.is_finite() {
            return Err(Error::Argument(format!("non-finite gradient norm {grad_norm}")));
        }
        let scale = match self.config.max_grad_norm {
            Some(max) if grad_norm > max => max / grad_norm,
            _ => 1.0,
        };
        let lr = self.config.rate_at(self.step);
        let t = (self.step + 1) as i32;
        let (b1, b2) = (self.config.beta1, self.config.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (name, var, g) in present {
            let g = (g * scale)?;
            let m_prev = match self.first.get(name) {
                Some(m) => m.clone(),
                None => g.zeros_like()?,
            };
            let v_prev = match self.second.get(name) {
                Some(v) => v.clone(),
                None => g.zeros_like()?,
            };
            let m = ((m_prev * b1)? + (&g * (1.0 - b1))?)?;
            let v = ((v_prev * b2)? + (g.sqr()? * (1.0 - b2))?)?;
            let denom = ((&v / c2)?.sqrt()? + self.config.eps)?;
            let mut update = (&m / c1)?.div(&denom)?;
            let current = var.as_detached_tensor();
            if self.config.weight_decay > 0.0 {
                update = (update + (&current * self.config.weight_decay)?)?;
            }
            var.set(&(current - (update * lr)?)?)?;
            self.first.insert(name.clone(), m);
            self.second.insert(name.clone(), v);
        }
        self.step += 1;
        Ok(StepReport {
            grad_norm,
            learning_rate: lr,
            clipped: scale < 1.0,
        })
    }

    /// Writes the moment estimates to `dir/optimizer.safetensors` and the
    /// step counter and settings to `dir/optimizer.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut tensors: HashMap<String, Tensor> = HashMap::new();
        for (k, v) in &self.first {
            tensors.insert(format!("m.{k}"), v.clone());
        }
        for (k, v) in &self.second {
            tensors.insert(format!("v.{k}"), v.clone());
        }
        if !tensors.is_empty() {
            candle_core::safetensors::save(&tensors, dir.join("optimizer.safetensors"))?;
        }
        let meta = OptimizerMeta {
            step: self.step,
            config: self.config,
        };
        let path = dir.join("optimizer.json");
        std::fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("optimizer.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: OptimizerMeta = serde_json::from_str(&text)?;
        let mut adam = Adam::new(meta.config);
        adam.step = meta.step;
        let tensors_path = dir.join("optimizer.safetensors");
        if tensors_path.exists() {
            for (k, v) in candle_core::safetensors::load(&tensors_path, &Device::Cpu)? {
                if let Some(name) = k.strip_prefix("m.") {
                    adam.first.insert(name.to_owned(), v);
                } else if let Some(name) = k.strip_prefix("v.") {
                    adam.second.insert(name.to_owned(), v);
                } else {
                    return Err(Error::Checkpoint(format!("unexpected optimizer entry {k}")));
                }
            }
        }
        Ok(adam)
    }
}

#[derive(Serialize, Deserialize)]
struct OptimizerMeta {
    step: usize,
    config: AdamConfig,
}
