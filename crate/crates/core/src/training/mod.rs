//! Losses, the joint trainer, beam-search inference and checkpoints.

pub mod beam;
pub mod checkpoint;
pub mod config;
pub mod loss;
pub mod optim;
pub mod trainer;

pub use beam::{beam_generate, greedy_generate, BeamHypothesis, BeamOutput, ModelScorer, StepScorer};
pub use config::TrainConfig;
pub use loss::{generation_loss, joint_loss, prompt_loss, PromptLoss};
pub use optim::{Adam, AdamConfig};
pub use trainer::{
    batch_losses, evaluate_model, predict_all, predict_sentence, sample_prompts, BatchLosses, EpochLog, Prediction,
    TrainOutcome, Trainer, TrainerState,
};
