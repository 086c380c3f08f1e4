//! The joint training loop: every step scores the same sentences through the
//! shared encoder twice, once as pointer-sequence generation and once as
//! prompt samples with masked label words, and takes one Adam step on the
//! weighted sum.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::beam::{beam_generate, greedy_generate, ModelScorer};
use super::checkpoint;
use super::config::TrainConfig;
use super::loss::{generation_loss, joint_loss, prompt_loss};
use super::optim::{Adam, AdamConfig};
use crate::codec::{decode_indices, encode_targets, Decoded};
use crate::error::{Error, Result};
use crate::evaluation::{exact_match_scores, Prf, SentenceTuples};
use crate::model::{build_vocab, AbsaModel, ModelConfig, DTYPE};
use crate::prompting::{build_prompt_batch, PromptConfig, PromptSample};
use crate::types::{AnnotatedSentence, SubtaskKind};

/// One line of the per-epoch log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_prompt: f64,
    pub l_gen: f64,
    pub l_joint: f64,
    pub dev_f1_aesc: Option<f64>,
    pub dev_f1_pair: Option<f64>,
    pub dev_f1_triplet: Option<f64>,
}

/// Progress persisted next to the parameters for resumption.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub epochs_done: usize,
    pub global_step: usize,
    pub max_len: usize,
    pub best_dev_f1: Option<f64>,
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochLog>,
}

/// Differentiable losses of one batch.
pub struct BatchLosses {
    pub l_prompt: Tensor,
    pub l_gen: Tensor,
    pub joint: Tensor,
    pub masks: usize,
}

/// Prompt samples for every sentence in the batch that has gold triplets,
/// tagged with the batch position of their sentence.
pub fn sample_prompts(
    batch: &[&AnnotatedSentence],
    model: &AbsaModel,
    config: &PromptConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(usize, PromptSample)>> {
    let mut out = Vec::new();
    for (i, s) in batch.iter().enumerate() {
        if s.triplets.is_empty() {
            continue;
        }
        for sample in build_prompt_batch(s, model.template(), config, rng)? {
            out.push((i, sample));
        }
    }
    Ok(out)
}

/// Generation loss averaged over sentences, prompt loss averaged over mask
/// positions, and their weighted sum.
pub fn batch_losses(
    model: &AbsaModel,
    batch: &[&AnnotatedSentence],
    prompts: &[(usize, PromptSample)],
    prompt_weight: f64,
    gen_weight: f64,
) -> Result<BatchLosses> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let mut gen_terms = Vec::with_capacity(batch.len());
    for s in batch {
        let enc = model.encode_sentence(s)?;
        let targets = encode_targets(s, SubtaskKind::Triplet).indices;
        let lp = model.sequence_log_probs(&enc, &targets)?;
        let mut gold = targets;
        gold.push(enc.end_index());
        gen_terms.push(generation_loss(&lp, &gold)?);
    }
    let l_gen = (Tensor::stack(&gen_terms, 0)?.sum_all()? / batch.len() as f64)?;

    let pseudo = if prompts.is_empty() { None } else { model.pseudo_rows()? };
    let mut sum = Tensor::zeros((), DTYPE, &Device::Cpu)?;
    let mut masks = 0;
    for (i, sample) in prompts {
        let sentence = batch
            .get(*i)
            .ok_or_else(|| Error::Argument(format!("prompt refers to batch position {i}")))?;
        let lp = model.mask_log_probs_with(sentence, sample, pseudo.as_ref())?;
        let loss = prompt_loss(&lp, &sample.mask_labels())?;
        sum = (sum + loss.sum)?;
        masks += loss.count;
    }
    let l_prompt = if masks == 0 { sum } else { (sum / masks as f64)? };
    let joint = joint_loss(&l_prompt, &l_gen, prompt_weight, gen_weight)?;
    Ok(BatchLosses {
        l_prompt,
        l_gen,
        joint,
        masks,
    })
}

/// A decoded prediction for one sentence.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub id: String,
    pub indices: Vec<usize>,
    pub decoded: Decoded,
    pub truncated: bool,
}

impl Prediction {
    pub fn tuples(&self) -> SentenceTuples {
        SentenceTuples::new(self.id.clone(), self.decoded.extractions.iter().cloned())
    }
}

/// Generates the triplet index sequence for one sentence and decodes it.
/// Only the sentence words are used; gold triplets are ignored.
pub fn predict_sentence(
    model: &AbsaModel,
    sentence: &AnnotatedSentence,
    beam_size: usize,
    max_len: usize,
) -> Result<Prediction> {
    let encoded = model.encode_sentence(sentence)?;
    let scorer = ModelScorer {
        model,
        encoded: &encoded,
    };
    let out = if beam_size == 1 {
        greedy_generate(&scorer, max_len)?
    } else {
        beam_generate(&scorer, beam_size, max_len)?
    };
    let decoded = decode_indices(&out.best.indices, encoded.n, SubtaskKind::Triplet)?;
    Ok(Prediction {
        id: sentence.id.clone(),
        indices: out.best.indices,
        decoded,
        truncated: out.truncated,
    })
}

pub fn predict_all(
    model: &AbsaModel,
    sentences: &[AnnotatedSentence],
    beam_size: usize,
    max_len: usize,
) -> Result<Vec<Prediction>> {
    sentences
        .iter()
        .map(|s| predict_sentence(model, s, beam_size, max_len))
        .collect()
}

/// Exact-match scores of the model on `sentences` for every subtask.
pub fn evaluate_model(
    model: &AbsaModel,
    sentences: &[AnnotatedSentence],
    beam_size: usize,
    max_len: usize,
) -> Result<BTreeMap<SubtaskKind, Prf>> {
    let preds: Vec<SentenceTuples> = predict_all(model, sentences, beam_size, max_len)?
        .iter()
        .map(Prediction::tuples)
        .collect();
    let golds: Vec<SentenceTuples> = sentences.iter().map(SentenceTuples::from).collect();
    SubtaskKind::ALL
        .iter()
        .map(|&s| Ok((s, exact_match_scores(&preds, &golds, s)?)))
        .collect()
}

/// Epoch-level random stream; depends only on the seed and the epoch so a
/// resumed run replays the same shuffles and prompt draws.
fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Mean losses over the batches of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLosses {
    pub l_prompt: f64,
    pub l_gen: f64,
    pub l_joint: f64,
}

pub struct TrainOutcome {
    pub history: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub best_dev_f1: Option<f64>,
    pub best_checkpoint: Option<PathBuf>,
}

pub struct Trainer {
    pub model: AbsaModel,
    pub optimizer: Adam,
    pub config: TrainConfig,
    pub state: TrainerState,
    output_dir: Option<PathBuf>,
}

impl Trainer {
    /// Fresh trainer. The vocabulary covers the words of every split given
    /// in `vocab_sources`.
    pub fn new(
        config: TrainConfig,
        model_config: ModelConfig,
        train: &[AnnotatedSentence],
        vocab_sources: &[&[AnnotatedSentence]],
        output_dir: Option<PathBuf>,
    ) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            return Err(Error::Argument("training split is empty".into()));
        }
        let template = model_config.effective_template();
        let vocab = build_vocab(vocab_sources.iter().flat_map(|s| s.iter()).chain(train), &template);
        let model = AbsaModel::new(model_config, vocab)?;
        let steps_per_epoch = train.len().div_ceil(config.batch_size);
        let total_steps = steps_per_epoch * config.epochs;
        let optimizer = Adam::new(AdamConfig {
            learning_rate: config.learning_rate,
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            eps: config.adam_eps,
            weight_decay: config.weight_decay,
            max_grad_norm: config.max_grad_norm,
            warmup_steps: (config.warmup_fraction * total_steps as f64).round() as usize,
        });
        let max_triplets = train.iter().map(|s| s.triplets.len()).max().unwrap_or(0);
        let state = TrainerState {
            max_len: config.resolved_max_len(max_triplets),
            ..TrainerState::default()
        };
        Ok(Trainer {
            model,
            optimizer,
            config,
            state,
            output_dir,
        })
    }

    /// Continues from a checkpoint written by a previous run.
    pub fn resume(dir: &Path, output_dir: Option<PathBuf>) -> Result<Self> {
        let (model, optimizer, config, state) = checkpoint::load_training(dir)?;
        Ok(Trainer {
            model,
            optimizer,
            config,
            state,
            output_dir,
        })
    }

    pub fn max_len(&self) -> usize {
        self.state.max_len
    }

    /// Runs epoch `epochs_done + 1` over `train`.
    pub fn train_epoch(&mut self, train: &[AnnotatedSentence]) -> Result<EpochLosses> {
        let epoch = self.state.epochs_done + 1;
        let mut rng = epoch_rng(self.config.seed, epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let prompt_config = self.config.prompt_config();
        let (mut sum_p, mut sum_g, mut sum_j, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&AnnotatedSentence> = chunk.iter().map(|&i| &train[i]).collect();
            let prompts = sample_prompts(&batch, &self.model, &prompt_config, &mut rng)?;
            let losses = batch_losses(
                &self.model,
                &batch,
                &prompts,
                self.config.prompt_loss_weight,
                self.config.gen_loss_weight,
            )?;
            let l_prompt = losses.l_prompt.to_scalar::<f64>()?;
            let l_gen = losses.l_gen.to_scalar::<f64>()?;
            let l_joint = losses.joint.to_scalar::<f64>()?;
            if !l_joint.is_finite() {
                return Err(self.non_finite(epoch, l_prompt, l_gen));
            }
            let grads = losses.joint.backward()?;
            self.optimizer.apply(&self.model.store, &grads)?;
            self.state.global_step += 1;
            sum_p += l_prompt;
            sum_g += l_gen;
            sum_j += l_joint;
            batches += 1;
        }
        self.state.epochs_done = epoch;
        let b = batches.max(1) as f64;
        Ok(EpochLosses {
            l_prompt: sum_p / b,
            l_gen: sum_g / b,
            l_joint: sum_j / b,
        })
    }

    fn non_finite(&self, epoch: usize, l_prompt: f64, l_gen: f64) -> Error {
        let snapshot = self.output_dir.as_ref().and_then(|dir| {
            let path = dir.join("nonfinite_snapshot");
            match checkpoint::save_model(&path, &self.model) {
                Ok(()) => Some(path),
                Err(e) => {
                    warn!("could not write diagnostic snapshot: {e}");
                    None
                }
            }
        });
        Error::NonFiniteLoss {
            epoch,
            step: self.state.global_step,
            l_prompt,
            l_gen,
            snapshot,
        }
    }

    /// Trains until `config.epochs`, evaluating on `dev` and keeping the
    /// checkpoint with the best dev Triplet F1. Without a dev split the last
    /// epoch is kept.
    pub fn fit(&mut self, train: &[AnnotatedSentence], dev: &[AnnotatedSentence]) -> Result<TrainOutcome> {
        if train.is_empty() {
            return Err(Error::Argument("training split is empty".into()));
        }
        let mut log_file = match &self.output_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                Some(dir.join("epochs.jsonl"))
            }
            None => None,
        };
        while self.state.epochs_done < self.config.epochs {
            let losses = self.train_epoch(train)?;
            let epoch = self.state.epochs_done;
            let evaluate = !dev.is_empty() && (epoch.is_multiple_of(self.config.eval_every) || epoch == self.config.epochs);
            let scores = if evaluate {
                Some(evaluate_model(&self.model, dev, self.config.eval_beam_size, self.state.max_len)?)
            } else {
                None
            };
            let f1 = |s: SubtaskKind| scores.as_ref().map(|m| m[&s].f1);
            let record = EpochLog {
                epoch,
                l_prompt: losses.l_prompt,
                l_gen: losses.l_gen,
                l_joint: losses.l_joint,
                dev_f1_aesc: f1(SubtaskKind::Aesc),
                dev_f1_pair: f1(SubtaskKind::Pair),
                dev_f1_triplet: f1(SubtaskKind::Triplet),
            };
            info!(
                "epoch {epoch}: l_prompt={:.4} l_gen={:.4} l_joint={:.4} dev_triplet_f1={:?}",
                record.l_prompt, record.l_gen, record.l_joint, record.dev_f1_triplet
            );
            if let Some(path) = log_file.as_mut() {
                append_line(path, &serde_json::to_string(&record)?)?;
            }
            self.state.history.push(record.clone());

            let improved = match (record.dev_f1_triplet, self.state.best_dev_f1) {
                (Some(now), Some(best)) => now > best,
                (Some(_), None) => true,
                (None, _) => dev.is_empty() && epoch == self.config.epochs,
            };
            if improved {
                self.state.best_dev_f1 = record.dev_f1_triplet.or(self.state.best_dev_f1);
                self.state.best_epoch = Some(epoch);
                if let Some(dir) = &self.output_dir {
                    checkpoint::save_training(&dir.join("best"), &self.model, &self.optimizer, &self.config, &self.state)?;
                }
            }
            if let Some(dir) = &self.output_dir {
                checkpoint::save_training(&dir.join("last"), &self.model, &self.optimizer, &self.config, &self.state)?;
            }
        }
        Ok(TrainOutcome {
            history: self.state.history.clone(),
            best_epoch: self.state.best_epoch,
            best_dev_f1: self.state.best_dev_f1,
            best_checkpoint: self.output_dir.as_ref().map(|d| d.join("best")),
        })
    }
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    use std::io::Write;
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}
