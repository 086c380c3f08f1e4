//! Output heads: the pointer distribution over word positions and classes,
//! and the label-word distribution at prompt mask positions.

use candle_core::Tensor;

use super::nn::{log_softmax, softmax, Activation, FeedForward, Forward};
use super::params::ParamBuilder;
use crate::error::{Error, Result};
use crate::prompting::LabelWord;

/// Candidate rows `[α·MLP(H) + (1−α)·E ; C]` scored against decoder states.
pub fn pointer_candidates<M: Forward + ?Sized>(
    encoder_hidden: &Tensor,
    encoder_embeddings: &Tensor,
    class_embeddings: &Tensor,
    alpha: f64,
    mlp: &M,
) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Argument(format!("blend weight {alpha} outside [0, 1]")));
    }
    let (n, d) = encoder_hidden.dims2()?;
    let (ne, de) = encoder_embeddings.dims2()?;
    let (_, dc) = class_embeddings.dims2()?;
    if (n, d) != (ne, de) || dc != d {
        return Err(Error::Shape(format!(
            "encoder states {n}x{d}, embeddings {ne}x{de}, class rows of width {dc}"
        )));
    }
    let projected = mlp.forward(encoder_hidden)?;
    if projected.dims2()? != (n, d) {
        return Err(Error::Shape("pointer MLP must preserve the encoder shape".into()));
    }
    let blended = ((projected * alpha)? + (encoder_embeddings * (1.0 - alpha))?)?;
    Ok(Tensor::cat(&[&blended, class_embeddings], 0)?)
}

/// Log-probabilities `(steps, n + classes)` of each candidate for each
/// decoder state row.
pub fn pointer_log_probs(candidates: &Tensor, decoder_states: &Tensor) -> Result<Tensor> {
    let (_, d) = candidates.dims2()?;
    let (_, dh) = decoder_states.dims2()?;
    if d != dh {
        return Err(Error::Shape(format!("candidate width {d} vs decoder width {dh}")));
    }
    Ok(log_softmax(&decoder_states.matmul(&candidates.t()?)?)?)
}

/// Distribution over the `n + l` candidates for one decoder state `h_t`.
pub fn pointer_distribution<M: Forward + ?Sized>(
    encoder_hidden: &Tensor,
    encoder_embeddings: &Tensor,
    class_embeddings: &Tensor,
    h_t: &Tensor,
    alpha: f64,
    mlp: &M,
) -> Result<Tensor> {
    let candidates = pointer_candidates(encoder_hidden, encoder_embeddings, class_embeddings, alpha, mlp)?;
    let h = if h_t.rank() == 1 { h_t.unsqueeze(0)? } else { h_t.clone() };
    if h.dim(0)? != 1 {
        return Err(Error::Shape("expected a single decoder state".into()));
    }
    let d = candidates.dim(1)?;
    if h.dim(1)? != d {
        return Err(Error::Shape(format!("decoder state width {} vs {d}", h.dim(1)?)));
    }
    Ok(softmax(&h.matmul(&candidates.t()?)?)?.squeeze(0)?)
}

pub struct PointerHead {
    pub mlp: FeedForward,
    pub alpha: f64,
}

impl PointerHead {
    pub fn new(pb: &ParamBuilder, d: usize, alpha: f64) -> Result<Self> {
        Ok(PointerHead {
            mlp: FeedForward::new(&pb.pp("mlp"), d, d, d, Activation::Relu)?,
            alpha,
        })
    }

    pub fn candidates(&self, encoder_hidden: &Tensor, encoder_embeddings: &Tensor, class_embeddings: &Tensor) -> Result<Tensor> {
        pointer_candidates(encoder_hidden, encoder_embeddings, class_embeddings, self.alpha, &self.mlp)
    }
}

/// One weight row per label word.
pub struct MlmHead {
    pub weights: Tensor,
}

impl MlmHead {
    pub fn new(pb: &ParamBuilder, init: &Tensor) -> Result<Self> {
        let (rows, _) = init.dims2()?;
        if rows != LabelWord::ALL.len() {
            return Err(Error::Shape(format!("mask head needs {} rows, got {rows}", LabelWord::ALL.len())));
        }
        Ok(MlmHead {
            weights: pb.from_tensor("weights", init)?.as_tensor().clone(),
        })
    }

    /// `(masks, 5)` log-probabilities for stacked mask hidden states.
    pub fn log_probs(&self, mask_states: &Tensor) -> Result<Tensor> {
        Ok(log_softmax(&mask_states.matmul(&self.weights.t()?)?)?)
    }
}

/// Softmax over `{w_y · h : y ∈ label words}` for one mask hidden state.
pub fn mask_label_distribution(mask_state: &Tensor, weights: &Tensor) -> Result<Tensor> {
    let h = if mask_state.rank() == 1 { mask_state.unsqueeze(0)? } else { mask_state.clone() };
    let (rows, d) = weights.dims2()?;
    if rows != LabelWord::ALL.len() || h.dims2()? != (1, d) {
        return Err(Error::Shape(format!(
            "mask state {:?} against {rows}x{d} label weights",
            h.dims()
        )));
    }
    Ok(softmax(&h.matmul(&weights.t()?)?)?.squeeze(0)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::nn::Identity;
    use candle_core::Device;

    fn t2(rows: &[&[f64]]) -> Tensor {
        let v: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        Tensor::new(v, &Device::Cpu).unwrap()
    }

    #[test]
    fn blend_identity_with_equal_inputs_is_embedding() {
        let e = t2(&[&[0.3, -1.0], &[2.0, 0.5]]);
        let c = t2(&[&[1.0, 1.0]]);
        let cand = pointer_candidates(&e, &e, &c, 0.5, &Identity).unwrap().to_vec2::<f64>().unwrap();
        assert_eq!(cand[0], vec![0.3, -1.0]);
        assert_eq!(cand[1], vec![2.0, 0.5]);
    }

    #[test]
    fn hand_softmax_over_candidates() {
        let h = t2(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let c = t2(&[&[1.0, 1.0]]);
        let ht = Tensor::new(&[1.0f64, 0.0], &Device::Cpu).unwrap();
        let p = pointer_distribution(&h, &h, &c, &ht, 0.5, &Identity).unwrap().to_vec1::<f64>().unwrap();
        // scores [1, 0, 1]
        let z = 2.0 * 1f64.exp() + 1.0;
        let expected = [1f64.exp() / z, 1.0 / z, 1f64.exp() / z];
        for (a, b) in p.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((p[0] - 0.4223).abs() < 5e-5 && (p[1] - 0.1554).abs() < 5e-5);
    }

    #[test]
    fn shape_and_alpha_errors() {
        let h = t2(&[&[1.0, 0.0]]);
        let wide = t2(&[&[1.0, 0.0, 0.0]]);
        assert!(matches!(
            pointer_candidates(&h, &h, &wide, 0.5, &Identity),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            pointer_candidates(&h, &h, &h, 1.5, &Identity),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn mask_distribution_cases() {
        let row: &[f64] = &[0.5, 0.5];
        let equal = t2(&[row; 5]);
        let h = Tensor::new(&[1.0f64, 0.0], &Device::Cpu).unwrap();
        let p = mask_label_distribution(&h, &equal).unwrap().to_vec1::<f64>().unwrap();
        assert!(p.iter().all(|x| (x - 0.2).abs() < 1e-12));

        let w = t2(&[&[1.0, 0.0], &[0.0, 1.0], &[0.0, 1.0], &[0.0, 1.0], &[0.0, 1.0]]);
        let p = mask_label_distribution(&h, &w).unwrap().to_vec1::<f64>().unwrap();
        let z = 1f64.exp() + 4.0;
        assert!((p[0] - 1f64.exp() / z).abs() < 1e-12);
        assert!((p[0] - 0.405).abs() < 5e-4 && (p[1] - 0.149).abs() < 5e-4);
    }
}
