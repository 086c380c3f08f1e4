//! Checkpoint directories: parameters, model config, vocabulary, optimizer
//! moments and trainer progress. Parameters are stored as 64-bit
//! safetensors, so a save/load cycle is bit-exact.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::config::TrainConfig;
use super::optim::Adam;
use super::trainer::TrainerState;
use crate::error::{Error, Result};
use crate::model::{AbsaModel, ModelConfig, Vocab};

pub const PARAMS_FILE: &str = "params.safetensors";
pub const MODEL_CONFIG_FILE: &str = "model_config.json";
pub const VOCAB_FILE: &str = "vocab.json";
pub const TRAIN_CONFIG_FILE: &str = "train_config.toml";
pub const TRAINER_STATE_FILE: &str = "trainer_state.json";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes what inference needs: parameters, model config and vocabulary.
pub fn save_model(dir: &Path, model: &AbsaModel) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    model.store.save(&dir.join(PARAMS_FILE))?;
    write_json(&dir.join(MODEL_CONFIG_FILE), &model.config)?;
    write_json(&dir.join(VOCAB_FILE), model.vocab())
}

pub fn load_model(dir: &Path) -> Result<AbsaModel> {
    if !dir.join(PARAMS_FILE).is_file() {
        return Err(Error::Checkpoint(format!("no {PARAMS_FILE} in {}", dir.display())));
    }
    let config: ModelConfig = read_json(&dir.join(MODEL_CONFIG_FILE))?;
    let vocab: Vocab = read_json(&dir.join(VOCAB_FILE))?;
    let model = AbsaModel::new(config, vocab)?;
    model.store.load(&dir.join(PARAMS_FILE))?;
    Ok(model)
}

/// Full training checkpoint, enough to resume.
pub fn save_training(
    dir: &Path,
    model: &AbsaModel,
    optimizer: &Adam,
    config: &TrainConfig,
    state: &TrainerState,
) -> Result<()> {
    save_model(dir, model)?;
    optimizer.save(dir)?;
    let path = dir.join(TRAIN_CONFIG_FILE);
    std::fs::write(&path, config.to_toml()).map_err(|e| Error::io(&path, e))?;
    write_json(&dir.join(TRAINER_STATE_FILE), state)
}

pub fn load_training(dir: &Path) -> Result<(AbsaModel, Adam, TrainConfig, TrainerState)> {
    let model = load_model(dir)?;
    let optimizer = Adam::load(dir)?;
    let config = TrainConfig::load(&dir.join(TRAIN_CONFIG_FILE))?;
    let state: TrainerState = read_json(&dir.join(TRAINER_STATE_FILE))?;
    Ok((model, optimizer, config, state))
}

/// Trainer progress stored alongside a checkpoint, if any.
pub fn load_trainer_state(dir: &Path) -> Result<Option<TrainerState>> {
    let path = dir.join(TRAINER_STATE_FILE);
    if !path.is_file() {
        return Ok(None);
    }
    read_json(&path).map(Some)
}
