//! Encoder-decoder backbones.
//!
//! [`TinyTransformer`] is a randomly initialised post-norm transformer with a
//! word-level vocabulary, sized for desk-scale training and gradient checks.
//! Pretrained backbones plug in through the [`Backbone`] trait.

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use super::nn::{softmax, Activation, FeedForward, Forward, LayerNorm, Linear};
use super::params::ParamBuilder;
use super::vocab::Vocab;
use crate::error::{Error, Result};

pub trait Backbone: Send + Sync {
    fn hidden_size(&self) -> usize;

    fn vocab(&self) -> &Vocab;

    /// Token embeddings `(len, d)`, without positional information.
    fn embed(&self, ids: &[u32]) -> Result<Tensor>;

    /// Bidirectional encoder over embedding rows; preserves the row count.
    fn encode(&self, embeddings: &Tensor) -> Result<Tensor>;

    /// Causal decoder: row `t` of the output depends only on input rows `..=t`.
    fn decode(&self, memory: &Tensor, inputs: &Tensor) -> Result<Tensor>;

    /// Hidden state for the last input row.
    fn decode_step(&self, memory: &Tensor, inputs: &Tensor) -> Result<Tensor> {
        let h = self.decode(memory, inputs)?;
        let t = h.dim(0)?;
        Ok(h.narrow(0, t - 1, 1)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TinyConfig {
    pub d_model: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub max_positions: usize,
    /// Standard deviation of the token-embedding initialisation.
    pub embedding_std: f64,
}

impl Default for TinyConfig {
    fn default() -> Self {
        TinyConfig {
            d_model: 32,
            heads: 2,
            ffn_dim: 64,
            encoder_layers: 1,
            decoder_layers: 1,
            max_positions: 256,
            embedding_std: 1.0,
        }
    }
}

impl TinyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            )));
        }
        if self.max_positions == 0 || self.ffn_dim == 0 {
            return Err(Error::Config("max_positions and ffn_dim must be positive".into()));
        }
        Ok(())
    }
}

struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    heads: usize,
}

impl Attention {
    fn new(pb: &ParamBuilder, d: usize, heads: usize) -> Result<Self> {
        Ok(Attention {
            q: Linear::new(&pb.pp("q"), d, d)?,
            k: Linear::new(&pb.pp("k"), d, d)?,
            v: Linear::new(&pb.pp("v"), d, d)?,
            out: Linear::new(&pb.pp("out"), d, d)?,
            heads,
        })
    }

    fn forward(&self, x: &Tensor, context: &Tensor, causal: bool) -> candle_core::Result<Tensor> {
        let (t, d) = x.dims2()?;
        let s = context.dim(0)?;
        let dh = d / self.heads;
        let split = |m: Tensor, rows: usize| m.reshape((rows, self.heads, dh))?.transpose(0, 1)?.contiguous();
        let q = split(self.q.forward(x)?, t)?;
        let k = split(self.k.forward(context)?, s)?;
        let v = split(self.v.forward(context)?, s)?;
        let mut scores = (q.matmul(&k.t()?.contiguous()?)? * (1.0 / (dh as f64).sqrt()))?;
        if causal {
            scores = scores.broadcast_add(&causal_mask(t, s)?)?;
        }
        let attn = softmax(&scores)?;
        let merged = attn.matmul(&v)?.transpose(0, 1)?.contiguous()?.reshape((t, d))?;
        self.out.forward(&merged)
    }
}

fn causal_mask(t: usize, s: usize) -> candle_core::Result<Tensor> {
    let values: Vec<f64> = (0..t)
        .flat_map(|i| (0..s).map(move |j| if j > i { -1e9 } else { 0.0 }))
        .collect();
    Tensor::from_vec(values, (t, s), &Device::Cpu)
}

struct EncoderLayer {
    attn: Attention,
    attn_norm: LayerNorm,
    ffn: FeedForward,
    ffn_norm: LayerNorm,
}

impl EncoderLayer {
    fn new(pb: &ParamBuilder, cfg: &TinyConfig) -> Result<Self> {
        let d = cfg.d_model;
        Ok(EncoderLayer {
            attn: Attention::new(&pb.pp("attn"), d, cfg.heads)?,
            attn_norm: LayerNorm::new(&pb.pp("attn_norm"), d)?,
            ffn: FeedForward::new(&pb.pp("ffn"), d, cfg.ffn_dim, d, Activation::Gelu)?,
            ffn_norm: LayerNorm::new(&pb.pp("ffn_norm"), d)?,
        })
    }

    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let x = self.attn_norm.forward(&(x + self.attn.forward(x, x, false)?)?)?;
        self.ffn_norm.forward(&(&x + self.ffn.forward(&x)?)?)
    }
}

struct DecoderLayer {
    self_attn: Attention,
    self_norm: LayerNorm,
    cross_attn: Attention,
    cross_norm: LayerNorm,
    ffn: FeedForward,
    ffn_norm: LayerNorm,
}

impl DecoderLayer {
    fn new(pb: &ParamBuilder, cfg: &TinyConfig) -> Result<Self> {
        let d = cfg.d_model;
        Ok(DecoderLayer {
            self_attn: Attention::new(&pb.pp("self_attn"), d, cfg.heads)?,
            self_norm: LayerNorm::new(&pb.pp("self_norm"), d)?,
            cross_attn: Attention::new(&pb.pp("cross_attn"), d, cfg.heads)?,
            cross_norm: LayerNorm::new(&pb.pp("cross_norm"), d)?,
            ffn: FeedForward::new(&pb.pp("ffn"), d, cfg.ffn_dim, d, Activation::Gelu)?,
            ffn_norm: LayerNorm::new(&pb.pp("ffn_norm"), d)?,
        })
    }

    fn forward(&self, x: &Tensor, memory: &Tensor) -> candle_core::Result<Tensor> {
        let x = self.self_norm.forward(&(x + self.self_attn.forward(x, x, true)?)?)?;
        let x = self.cross_norm.forward(&(&x + self.cross_attn.forward(&x, memory, false)?)?)?;
        self.ffn_norm.forward(&(&x + self.ffn.forward(&x)?)?)
    }
}

pub struct TinyTransformer {
    config: TinyConfig,
    vocab: Vocab,
    token_embedding: Tensor,
    encoder_positions: Tensor,
    decoder_positions: Tensor,
    encoder_embed_norm: LayerNorm,
    decoder_embed_norm: LayerNorm,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
}

impl TinyTransformer {
    pub fn new(pb: &ParamBuilder, config: TinyConfig, vocab: Vocab) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let token_embedding = pb
            .normal("token_embedding", (vocab.len(), d), config.embedding_std)?
            .as_tensor()
            .clone();
        let encoder_positions = pb
            .normal("encoder_positions", (config.max_positions, d), config.embedding_std)?
            .as_tensor()
            .clone();
        let decoder_positions = pb
            .normal("decoder_positions", (config.max_positions, d), config.embedding_std)?
            .as_tensor()
            .clone();
        let encoder = (0..config.encoder_layers)
            .map(|i| EncoderLayer::new(&pb.pp(&format!("encoder.{i}")), &config))
            .collect::<Result<_>>()?;
        let decoder = (0..config.decoder_layers)
            .map(|i| DecoderLayer::new(&pb.pp(&format!("decoder.{i}")), &config))
            .collect::<Result<_>>()?;
        Ok(TinyTransformer {
            config,
            vocab,
            token_embedding,
            encoder_positions,
            decoder_positions,
            encoder_embed_norm: LayerNorm::new(&pb.pp("encoder_embed_norm"), d)?,
            decoder_embed_norm: LayerNorm::new(&pb.pp("decoder_embed_norm"), d)?,
            encoder,
            decoder,
        })
    }

    pub fn config(&self) -> &TinyConfig {
        &self.config
    }

    fn positions(&self, table: &Tensor, len: usize) -> Result<Tensor> {
        if len > self.config.max_positions {
            return Err(Error::Shape(format!(
                "sequence of {len} rows exceeds max_positions {}",
                self.config.max_positions
            )));
        }
        Ok(table.narrow(0, 0, len)?)
    }

    fn check_width(&self, x: &Tensor) -> Result<usize> {
        let (rows, d) = x.dims2()?;
        if d != self.config.d_model {
            return Err(Error::Shape(format!("expected width {}, got {d}", self.config.d_model)));
        }
        Ok(rows)
    }
}

impl Backbone for TinyTransformer {
    fn hidden_size(&self) -> usize {
        self.config.d_model
    }

    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn embed(&self, ids: &[u32]) -> Result<Tensor> {
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= self.vocab.len()) {
            return Err(Error::Shape(format!("token id {bad} outside vocabulary of {}", self.vocab.len())));
        }
        let ids = Tensor::from_slice(ids, ids.len(), &Device::Cpu)?;
        Ok(self.token_embedding.index_select(&ids, 0)?)
    }

    fn encode(&self, embeddings: &Tensor) -> Result<Tensor> {
        let rows = self.check_width(embeddings)?;
        let mut x = self
            .encoder_embed_norm
            .forward(&(embeddings + self.positions(&self.encoder_positions, rows)?)?)?;
        for layer in &self.encoder {
            x = layer.forward(&x)?;
        }
        Ok(x)
    }

    fn decode(&self, memory: &Tensor, inputs: &Tensor) -> Result<Tensor> {
        self.check_width(memory)?;
        let rows = self.check_width(inputs)?;
        let mut x = self
            .decoder_embed_norm
            .forward(&(inputs + self.positions(&self.decoder_positions, rows)?)?)?;
        for layer in &self.decoder {
            x = layer.forward(&x, memory)?;
        }
        Ok(x)
    }
}
