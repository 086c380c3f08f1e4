use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, TinyConfig};
use crate::prompting::{PromptConfig, Template, TemplateCatalog};

/// Every knob of a training run. Serialized as a flat key-value document
/// whose keys are the field names; missing keys take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Weight of the prompt (mask-label) loss.
    pub prompt_loss_weight: f64,
    /// Weight of the generation loss.
    pub gen_loss_weight: f64,
    /// Pointer blend between projected encoder states and raw embeddings.
    pub alpha: f64,
    pub beam_size: usize,
    /// Generation cap; `None` means 10 × (max gold triplets in train) + 2.
    pub max_len: Option<usize>,
    pub seed: u64,
    pub template: String,
    pub k_samples: usize,
    pub manipulation_prob: f64,
    pub ablate_prompt_encoder: bool,

    pub warmup_fraction: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
    /// Evaluate on dev every this many epochs (the last epoch always is).
    pub eval_every: usize,
    /// Beam width for dev evaluation during training.
    pub eval_beam_size: usize,

    pub d_model: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub max_positions: usize,
    pub embedding_std: f64,
    pub lstm_hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let tiny = TinyConfig::default();
        TrainConfig {
            epochs: 50,
            batch_size: 8,
            learning_rate: 5e-5,
            prompt_loss_weight: 1.0,
            gen_loss_weight: 1.0,
            alpha: 0.5,
            beam_size: 4,
            max_len: None,
            seed: 42,
            template: "auto-1".into(),
            k_samples: PromptConfig::default().k_samples,
            manipulation_prob: PromptConfig::default().manipulation_prob,
            ablate_prompt_encoder: false,
            warmup_fraction: 0.1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            max_grad_norm: Some(1.0),
            eval_every: 1,
            eval_beam_size: 4,
            d_model: tiny.d_model,
            heads: tiny.heads,
            ffn_dim: tiny.ffn_dim,
            encoder_layers: tiny.encoder_layers,
            decoder_layers: tiny.decoder_layers,
            max_positions: tiny.max_positions,
            embedding_std: tiny.embedding_std,
            lstm_hidden: 16,
        }
    }
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: TrainConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
            _ => toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.beam_size == 0 || self.eval_beam_size == 0 {
            return bad("beam sizes must be at least 1".into());
        }
        if !(self.prompt_loss_weight >= 0.0 && self.gen_loss_weight >= 0.0) {
            return bad("loss weights must be non-negative".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(0.0..=1.0).contains(&self.manipulation_prob) {
            return bad("manipulation_prob must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return bad("warmup_fraction must lie in [0, 1]".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        if let Some(c) = self.max_grad_norm {
            if c <= 0.0 {
                return bad("max_grad_norm must be positive when set".into());
            }
        }
        if self.k_samples == 0 && self.prompt_loss_weight > 0.0 {
            return bad("k_samples must be at least 1 when the prompt loss is on".into());
        }
        Ok(())
    }

    pub fn prompt_config(&self) -> PromptConfig {
        PromptConfig {
            k_samples: self.k_samples,
            manipulation_prob: self.manipulation_prob,
        }
    }

    pub fn model_config(&self, catalog: &TemplateCatalog) -> Result<ModelConfig> {
        let template: Template = catalog.get(&self.template)?;
        let config = ModelConfig {
            backbone: TinyConfig {
                d_model: self.d_model,
                heads: self.heads,
                ffn_dim: self.ffn_dim,
                encoder_layers: self.encoder_layers,
                decoder_layers: self.decoder_layers,
                max_positions: self.max_positions,
                embedding_std: self.embedding_std,
            },
            alpha: self.alpha,
            lstm_hidden: self.lstm_hidden,
            template,
            ablate_prompt_encoder: self.ablate_prompt_encoder,
            seed: self.seed,
        };
        config.validate()?;
        Ok(config)
    }

    /// Generation cap for a training set whose richest sentence has
    /// `max_triplets` triplets.
    pub fn resolved_max_len(&self, max_triplets: usize) -> usize {
        self.max_len.unwrap_or(10 * max_triplets + 2)
    }
}
