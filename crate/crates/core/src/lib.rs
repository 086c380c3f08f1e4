//! Aspect-based sentiment analysis as pointer-index generation, with
//! sentiment-aware prompt tuning as an auxiliary masked-label task.
//!
//! The crate is organised bottom-up:
//!
//! * [`types`] and [`codec`]: triplets, spans and the index-sequence codec.
//! * [`dataio`]: dataset import/export, few-shot sampling, statistics.
//! * [`prompting`]: consistency/polarity prompt construction.
//! * [`model`]: backbone abstraction, prompt encoder, pointer and mask heads.
//! * [`training`]: losses, the joint trainer, beam search and checkpoints.
//! * [`evaluation`]: exact-match scoring and invalid-prediction rates.

pub mod codec;
pub mod dataio;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod prompting;
pub mod training;
pub mod types;

pub use codec::{decode_indices, decode_sequence, encode_targets, round_trip_check, Decoded};
pub use error::{Error, Result};
pub use types::{
    AnnotatedSentence, Extraction, Polarity, SequenceDiagnostics, Span, SubtaskKind, TargetSequence,
    Triplet,
};
