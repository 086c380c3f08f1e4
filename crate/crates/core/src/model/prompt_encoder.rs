//! Continuous prompt embeddings: a trainable pseudo-token table passed
//! through a bidirectional LSTM and a two-layer ReLU MLP.

use candle_core::{Device, Tensor};

use super::nn::{Activation, BiLstm, FeedForward, Forward};
use super::params::ParamBuilder;
use crate::error::{Error, Result};

pub struct PromptEncoder {
    pub table: Tensor,
    pub lstm: BiLstm,
    pub mlp: FeedForward,
    pseudo_count: usize,
    d_model: usize,
}

impl PromptEncoder {
    pub fn new(pb: &ParamBuilder, pseudo_count: usize, d_model: usize, lstm_hidden: usize) -> Result<Self> {
        if pseudo_count == 0 {
            return Err(Error::Argument("prompt encoder needs at least one pseudo token".into()));
        }
        Ok(PromptEncoder {
            table: pb.normal("table", (pseudo_count, d_model), 1.0)?.as_tensor().clone(),
            lstm: BiLstm::new(&pb.pp("lstm"), d_model, lstm_hidden)?,
            mlp: FeedForward::new(&pb.pp("mlp"), 2 * lstm_hidden, d_model, d_model, Activation::Relu)?,
            pseudo_count,
            d_model,
        })
    }

    pub fn pseudo_count(&self) -> usize {
        self.pseudo_count
    }

    /// `(len, d)` embeddings for the given pseudo-token ids.
    pub fn forward(&self, pseudo_ids: &[u32]) -> Result<Tensor> {
        if pseudo_ids.is_empty() {
            return Err(Error::Argument("empty pseudo-token sequence".into()));
        }
        if let Some(&bad) = pseudo_ids.iter().find(|&&i| i as usize >= self.pseudo_count) {
            return Err(Error::Shape(format!(
                "pseudo id {bad} outside table of {}",
                self.pseudo_count
            )));
        }
        let ids = Tensor::from_slice(pseudo_ids, pseudo_ids.len(), &Device::Cpu)?;
        let rows = self.table.index_select(&ids, 0)?;
        let states = self.lstm.forward(&rows)?;
        let out = self.mlp.forward(&states)?;
        debug_assert_eq!(out.dim(1)?, self.d_model);
        Ok(out)
    }

    /// Embeddings for every pseudo token, in order.
    pub fn forward_all(&self) -> Result<Tensor> {
        let ids: Vec<u32> = (0..self.pseudo_count as u32).collect();
        self.forward(&ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::ParamStore;

    #[test]
    fn shape_and_determinism() {
        let store = ParamStore::new();
        let enc = PromptEncoder::new(&ParamBuilder::new(&store, 4), 3, 8, 4).unwrap();
        let a = enc.forward(&[0, 1, 2]).unwrap();
        assert_eq!(a.dims2().unwrap(), (3, 8));
        let b = enc.forward(&[0, 1, 2]).unwrap();
        assert_eq!(a.to_vec2::<f64>().unwrap(), b.to_vec2::<f64>().unwrap());
        assert!(enc.forward(&[]).is_err());
        assert!(enc.forward(&[3]).is_err());
    }

    #[test]
    fn each_output_sees_both_directions() {
        // changing the last pseudo embedding must move the first output (via
        // the backward LSTM) and vice versa
        let store = ParamStore::new();
        let enc = PromptEncoder::new(&ParamBuilder::new(&store, 5), 3, 8, 4).unwrap();
        let before = enc.forward_all().unwrap().to_vec2::<f64>().unwrap();
        let var = store.get("table").unwrap();
        let mut t = var.to_vec2::<f64>().unwrap();
        t[2][0] += 0.5;
        var.set(&Tensor::new(t, &Device::Cpu).unwrap()).unwrap();
        let after = enc.forward_all().unwrap().to_vec2::<f64>().unwrap();
        assert!(before[0].iter().zip(&after[0]).any(|(a, b)| (a - b).abs() > 1e-9));
    }
}
