//! Cross-entropy losses over log-probability rows and their weighted sum.

use candle_core::{Device, Tensor};

use crate::error::{Error, Result};
use crate::model::DTYPE;
use crate::prompting::LabelWord;

fn one_hot(rows: usize, cols: usize, hot: impl Iterator<Item = usize>) -> Result<Tensor> {
    let mut data = vec![0.0f64; rows * cols];
    for (r, c) in hot.enumerate() {
        data[r * cols + c] = 1.0;
    }
    Ok(Tensor::from_vec(data, (rows, cols), &Device::Cpu)?)
}

/// Mean negative log-probability of the gold indices under teacher forcing.
/// `log_probs` has one row per gold position (the end token included) and
/// `gold` holds 1-based candidate indices.
pub fn generation_loss(log_probs: &Tensor, gold: &[usize]) -> Result<Tensor> {
    let (steps, candidates) = log_probs.dims2()?;
    if steps != gold.len() || steps == 0 {
        return Err(Error::Shape(format!("{steps} distributions for {} gold indices", gold.len())));
    }
    if let Some(&bad) = gold.iter().find(|&&g| g == 0 || g > candidates) {
        return Err(Error::Index { index: bad, max: candidates });
    }
    let target = one_hot(steps, candidates, gold.iter().map(|g| g - 1))?;
    Ok((log_probs.mul(&target)?.sum_all()?.neg()? / steps as f64)?)
}

/// Summed mask-label negative log-likelihood and the number of masks it
/// covers. Optimization uses the mean; the sum is kept for reporting.
pub struct PromptLoss {
    pub sum: Tensor,
    pub count: usize,
}

impl PromptLoss {
    pub fn mean(&self) -> Result<Tensor> {
        if self.count == 0 {
            return Ok(Tensor::zeros((), DTYPE, &Device::Cpu)?);
        }
        Ok((&self.sum / self.count as f64)?)
    }
}

/// `log_probs` has one row per mask over the five label words.
pub fn prompt_loss(log_probs: &Tensor, labels: &[LabelWord]) -> Result<PromptLoss> {
    let (masks, words) = log_probs.dims2()?;
    if words != LabelWord::ALL.len() {
        return Err(Error::Shape(format!("mask rows have {words} entries, expected {}", LabelWord::ALL.len())));
    }
    if masks != labels.len() {
        return Err(Error::Shape(format!("{masks} mask rows for {} labels", labels.len())));
    }
    let target = one_hot(masks, words, labels.iter().map(|l| l.index()))?;
    Ok(PromptLoss {
        sum: log_probs.mul(&target)?.sum_all()?.neg()?,
        count: masks,
    })
}

/// `prompt_weight · l_prompt + gen_weight · l_gen`.
pub fn joint_loss(l_prompt: &Tensor, l_gen: &Tensor, prompt_weight: f64, gen_weight: f64) -> Result<Tensor> {
    Ok(((l_prompt * prompt_weight)? + (l_gen * gen_weight)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Polarity;

    fn log_rows(rows: &[Vec<f64>]) -> Tensor {
        let lp: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|p| p.ln()).collect()).collect();
        Tensor::new(lp, &Device::Cpu).unwrap()
    }

    fn scalar(t: &Tensor) -> f64 {
        t.to_scalar::<f64>().unwrap()
    }

    #[test]
    fn uniform_generation_loss_is_log_candidates() {
        let lp = log_rows(&vec![vec![1.0 / 7.0; 7]; 3]);
        assert!((scalar(&generation_loss(&lp, &[1, 4, 7]).unwrap()) - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn generation_loss_hand_values() {
        let perfect = log_rows(&[vec![1e-300, 1.0], vec![1.0, 1e-300]]);
        assert!(scalar(&generation_loss(&perfect, &[2, 1]).unwrap()).abs() < 1e-12);
        let lp = log_rows(&[vec![0.5, 0.5], vec![0.75, 0.25]]);
        let l = scalar(&generation_loss(&lp, &[1, 2]).unwrap());
        assert!((l - 1.039_720_770_839_917_9).abs() < 1e-12);
        assert!(generation_loss(&lp, &[1]).is_err());
        assert!(generation_loss(&lp, &[1, 3]).is_err());
    }

    #[test]
    fn prompt_loss_hand_values() {
        let uniform = log_rows(&[vec![0.2; 5], vec![0.2; 5]]);
        let l = prompt_loss(&uniform, &[LabelWord::Yes, LabelWord::Polarity(Polarity::Neutral)]).unwrap();
        assert_eq!(l.count, 2);
        assert!((scalar(&l.mean().unwrap()) - 5f64.ln()).abs() < 1e-12);
        assert!((scalar(&l.sum) - 2.0 * 5f64.ln()).abs() < 1e-12);

        let one = log_rows(&[vec![0.8, 0.05, 0.05, 0.05, 0.05]]);
        let l = prompt_loss(&one, &[LabelWord::Yes]).unwrap();
        assert!((scalar(&l.mean().unwrap()) - 0.223_143_551_314_209_8).abs() < 1e-12);
    }

    #[test]
    fn joint_loss_is_weighted_sum() {
        let t = |x: f64| Tensor::new(x, &Device::Cpu).unwrap();
        assert_eq!(scalar(&joint_loss(&t(0.5), &t(1.5), 1.0, 1.0).unwrap()), 2.0);
        assert_eq!(scalar(&joint_loss(&t(0.5), &t(1.5), 0.0, 2.0).unwrap()), 3.0);
        let l = scalar(&joint_loss(&t(1.6094), &t(1.9459), 0.1, 1.0).unwrap());
        assert!((l - 2.10684).abs() < 1e-9);
    }
}
