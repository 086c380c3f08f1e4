//! The differentiable model: a backbone, the prompt encoder whose outputs are
//! spliced into the encoder input, the pointer head and the mask-label head.

pub mod backbone;
pub mod heads;
pub mod nn;
pub mod params;
pub mod prompt_encoder;
pub mod vocab;

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompting::{LabelWord, PromptSample, Slot, Template};
use crate::types::{AnnotatedSentence, Polarity};
pub use backbone::{Backbone, TinyConfig, TinyTransformer};
pub use heads::{mask_label_distribution, pointer_distribution, MlmHead, PointerHead};
pub use params::{ParamBuilder, ParamStore, DTYPE};
pub use prompt_encoder::PromptEncoder;
pub use vocab::Vocab;

/// Number of class tokens appended after the word positions.
pub const CLASS_COUNT: usize = Polarity::COUNT;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub backbone: TinyConfig,
    /// Blend between projected encoder states and raw embeddings in the
    /// pointer candidates.
    pub alpha: f64,
    pub lstm_hidden: usize,
    pub template: Template,
    /// Replaces pseudo tokens with the fixed manual wording.
    pub ablate_prompt_encoder: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: TinyConfig::default(),
            alpha: 0.5,
            lstm_hidden: 16,
            template: Template::auto(3),
            ablate_prompt_encoder: false,
            seed: 42,
        }
    }
}

impl ModelConfig {
    /// The template actually rendered, after applying the ablation switch.
    pub fn effective_template(&self) -> Template {
        if self.ablate_prompt_encoder {
            Template::manual()
        } else {
            self.template.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.lstm_hidden == 0 {
            return Err(Error::Config("lstm_hidden must be positive".into()));
        }
        self.effective_template().validate()
    }
}

/// Word-level vocabulary for a corpus: sentence words plus the literal words
/// of every preset template and of `extra`.
pub fn build_vocab<'a>(sentences: impl IntoIterator<Item = &'a AnnotatedSentence>, extra: &Template) -> Vocab {
    let mut words: Vec<String> = Vec::new();
    for s in sentences {
        words.extend(s.words.iter().cloned());
    }
    for t in Template::presets().iter().chain(std::iter::once(extra)) {
        words.extend(t.literal_words());
    }
    Vocab::build(words.iter().map(String::as_str))
}

/// What a target index stands for in a sentence of `n` words.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexToken<'a> {
    Word(&'a str),
    Class(Polarity),
    End,
}

/// Maps a 1-based index to the word it points at or to its class token.
/// Index `n + CLASS_COUNT + 1` is the end token.
pub fn index_to_token(index: usize, words: &[String]) -> Result<IndexToken<'_>> {
    let n = words.len();
    match index {
        i if i >= 1 && i <= n => Ok(IndexToken::Word(&words[i - 1])),
        i if i > n && i <= n + CLASS_COUNT => Ok(IndexToken::Class(
            Polarity::from_rank(i - n - 1).expect("rank in range"),
        )),
        i if i == n + CLASS_COUNT + 1 => Ok(IndexToken::End),
        i => Err(Error::Index {
            index: i,
            max: n + CLASS_COUNT + 1,
        }),
    }
}

/// Encoder output for one sentence, ready for pointer decoding.
pub struct EncodedSentence {
    pub n: usize,
    /// Vocabulary ids of the words, without specials.
    pub word_ids: Vec<u32>,
    /// Full encoder output including the start and end rows.
    pub memory: Tensor,
    /// Candidate rows: `n` blended word rows, the class rows, the end row.
    pub candidates: Tensor,
}

impl EncodedSentence {
    pub fn candidate_count(&self) -> usize {
        self.n + CLASS_COUNT + 1
    }

    pub fn end_index(&self) -> usize {
        self.n + CLASS_COUNT + 1
    }
}

/// Encoder input for a prompt: embedding rows plus where the masks and the
/// spliced pseudo rows ended up.
pub struct PromptInput {
    pub embeddings: Tensor,
    pub mask_positions: Vec<usize>,
    /// `(absolute position, pseudo index)` for every spliced row.
    pub pseudo_positions: Vec<(usize, usize)>,
}

pub struct AbsaModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub backbone: Box<dyn Backbone>,
    pub prompt_encoder: Option<PromptEncoder>,
    pub pointer: PointerHead,
    pub mlm: MlmHead,
    template: Template,
}

impl AbsaModel {
    pub fn new(config: ModelConfig, vocab: Vocab) -> Result<Self> {
        config.validate()?;
        let store = ParamStore::new();
        let pb = ParamBuilder::new(&store, config.seed);
        let backbone = TinyTransformer::new(&pb.pp("backbone"), config.backbone, vocab)?;
        Self::with_backbone(config, store, &pb, Box::new(backbone))
    }

    /// Builds the heads around an already constructed backbone whose
    /// parameters live in `store`.
    pub fn with_backbone(
        config: ModelConfig,
        store: ParamStore,
        pb: &ParamBuilder,
        backbone: Box<dyn Backbone>,
    ) -> Result<Self> {
        config.validate()?;
        let d = backbone.hidden_size();
        let template = config.effective_template();
        let prompt_encoder = match template.pseudo_count() {
            0 => None,
            lp => Some(PromptEncoder::new(&pb.pp("prompt_encoder"), lp, d, config.lstm_hidden)?),
        };
        let pointer = PointerHead::new(&pb.pp("pointer"), d, config.alpha)?;
        let label_ids: Vec<u32> = LabelWord::ALL.iter().map(|l| backbone.vocab().id(l.surface())).collect();
        let label_rows = backbone.embed(&label_ids)?.detach();
        let mlm = MlmHead::new(&pb.pp("mlm"), &label_rows)?;
        Ok(AbsaModel {
            config,
            store,
            backbone,
            prompt_encoder,
            pointer,
            mlm,
            template,
        })
    }

    pub fn vocab(&self) -> &Vocab {
        self.backbone.vocab()
    }

    pub fn template(&self) -> &Template {
        &self.template
    }

    fn class_ids(&self) -> [u32; CLASS_COUNT] {
        Polarity::ALL.map(|p| self.vocab().id(LabelWord::Polarity(p).surface()))
    }

    /// Vocabulary id fed to the decoder for a target index.
    fn decoder_input_id(&self, index: usize, enc: &EncodedSentence) -> Result<u32> {
        let n = enc.n;
        if index >= 1 && index <= n {
            Ok(enc.word_ids[index - 1])
        } else if index > n && index <= n + CLASS_COUNT {
            Ok(self.class_ids()[index - n - 1])
        } else {
            Err(Error::Index {
                index,
                max: n + CLASS_COUNT,
            })
        }
    }

    fn sentence_ids(&self, sentence: &AnnotatedSentence) -> Vec<u32> {
        sentence.words.iter().map(|w| self.vocab().id(w)).collect()
    }

    /// Runs the encoder on `<s> words </s>` and builds the candidate rows.
    pub fn encode_sentence(&self, sentence: &AnnotatedSentence) -> Result<EncodedSentence> {
        let vocab = self.vocab();
        let word_ids = self.sentence_ids(sentence);
        let n = word_ids.len();
        let mut ids = Vec::with_capacity(n + 2);
        ids.push(vocab.bos());
        ids.extend(&word_ids);
        ids.push(vocab.eos());
        let embeddings = self.backbone.embed(&ids)?;
        let memory = self.backbone.encode(&embeddings)?;
        let mut tail = self.class_ids().to_vec();
        tail.push(vocab.eos());
        let tail_rows = self.backbone.embed(&tail)?;
        let candidates = self.pointer.candidates(
            &memory.narrow(0, 1, n)?,
            &embeddings.narrow(0, 1, n)?,
            &tail_rows,
        )?;
        Ok(EncodedSentence {
            n,
            word_ids,
            memory,
            candidates,
        })
    }

    fn decoder_states(&self, enc: &EncodedSentence, prefix: &[usize]) -> Result<Tensor> {
        let mut ids = Vec::with_capacity(prefix.len() + 1);
        ids.push(self.vocab().bos());
        for &index in prefix {
            ids.push(self.decoder_input_id(index, enc)?);
        }
        let inputs = self.backbone.embed(&ids)?;
        self.backbone.decode(&enc.memory, &inputs)
    }

    /// Teacher-forced log-probabilities, one row per target index plus one
    /// for the end token: `(targets + 1, n + classes + 1)`.
    pub fn sequence_log_probs(&self, enc: &EncodedSentence, targets: &[usize]) -> Result<Tensor> {
        let states = self.decoder_states(enc, targets)?;
        heads::pointer_log_probs(&enc.candidates, &states)
    }

    /// Distribution over the next index given a decoded prefix.
    pub fn generation_step(&self, enc: &EncodedSentence, prefix: &[usize]) -> Result<Tensor> {
        let log_probs = self.step_log_probs(enc, prefix)?;
        Ok(Tensor::new(log_probs, &Device::Cpu)?.exp()?)
    }

    /// Log-probabilities of the next index; entry `i` scores index `i + 1`.
    pub fn step_log_probs(&self, enc: &EncodedSentence, prefix: &[usize]) -> Result<Vec<f64>> {
        let states = self.decoder_states(enc, prefix)?;
        let t = states.dim(0)?;
        let last = states.narrow(0, t - 1, 1)?;
        let lp = heads::pointer_log_probs(&enc.candidates, &last)?;
        Ok(lp.squeeze(0)?.to_vec1::<f64>()?)
    }

    /// Encoder input `<s> words </s> prompt </s>` with pseudo slots taking
    /// rows of `pseudo_rows` and every other slot its backbone embedding.
    pub fn assemble_prompt_input(
        &self,
        sentence: &AnnotatedSentence,
        sample: &PromptSample,
        pseudo_rows: Option<&Tensor>,
    ) -> Result<PromptInput> {
        let vocab = self.vocab();
        let mut ids = Vec::with_capacity(sentence.words.len() + sample.layout.len() + 3);
        ids.push(vocab.bos());
        ids.extend(self.sentence_ids(sentence));
        ids.push(vocab.eos());
        let offset = ids.len();
        let mut mask_positions = Vec::new();
        let mut pseudo_positions = Vec::new();
        for (k, slot) in sample.layout.iter().enumerate() {
            let id = match slot {
                Slot::Pseudo(p) => {
                    pseudo_positions.push((offset + k, *p));
                    vocab.mask()
                }
                Slot::Aspect(w) | Slot::Opinion(w) | Slot::Literal(w) => vocab.id(w),
                Slot::Mask => {
                    mask_positions.push(offset + k);
                    vocab.mask()
                }
            };
            ids.push(id);
        }
        ids.push(vocab.eos());
        let base = self.backbone.embed(&ids)?;
        if pseudo_positions.is_empty() {
            return Ok(PromptInput {
                embeddings: base,
                mask_positions,
                pseudo_positions,
            });
        }
        let rows = pseudo_rows.ok_or_else(|| Error::Alignment("layout has pseudo slots but no prompt rows".into()))?;
        let available = rows.dim(0)?;
        if let Some(&(_, p)) = pseudo_positions.iter().find(|(_, p)| *p >= available) {
            return Err(Error::Alignment(format!(
                "pseudo slot {p} but only {available} prompt rows"
            )));
        }
        // Gather from [base ; pseudo rows] so spliced rows are copied verbatim.
        let mut gather: Vec<u32> = (0..ids.len() as u32).collect();
        for &(pos, p) in &pseudo_positions {
            gather[pos] = (ids.len() + p) as u32;
        }
        let table = Tensor::cat(&[&base, rows], 0)?;
        let index = Tensor::from_vec(gather, ids.len(), &Device::Cpu)?;
        Ok(PromptInput {
            embeddings: table.index_select(&index, 0)?,
            mask_positions,
            pseudo_positions,
        })
    }

    /// Mask-label log-probabilities `(masks, 5)` for one prompt sample, read
    /// from encoder states at the mask positions.
    pub fn mask_log_probs(&self, sentence: &AnnotatedSentence, sample: &PromptSample) -> Result<Tensor> {
        let pseudo_rows = match &self.prompt_encoder {
            Some(pe) => Some(pe.forward_all()?),
            None => None,
        };
        self.mask_log_probs_with(sentence, sample, pseudo_rows.as_ref())
    }

    /// As [`AbsaModel::mask_log_probs`] with precomputed prompt rows, so a
    /// batch can share one prompt-encoder pass.
    pub fn mask_log_probs_with(
        &self,
        sentence: &AnnotatedSentence,
        sample: &PromptSample,
        pseudo_rows: Option<&Tensor>,
    ) -> Result<Tensor> {
        let input = self.assemble_prompt_input(sentence, sample, pseudo_rows)?;
        if input.mask_positions.is_empty() {
            return Err(Error::Alignment("prompt has no mask slot".into()));
        }
        let hidden = self.backbone.encode(&input.embeddings)?;
        let positions: Vec<u32> = input.mask_positions.iter().map(|&p| p as u32).collect();
        let index = Tensor::from_vec(positions.clone(), positions.len(), &Device::Cpu)?;
        self.mlm.log_probs(&hidden.index_select(&index, 0)?)
    }

    pub fn pseudo_rows(&self) -> Result<Option<Tensor>> {
        self.prompt_encoder.as_ref().map(|pe| pe.forward_all()).transpose()
    }
}
