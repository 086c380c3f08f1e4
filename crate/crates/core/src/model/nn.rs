//! Small differentiable building blocks on 2-D `(rows, features)` tensors.

use candle_core::{Device, Tensor, D};

use super::params::ParamBuilder;
use crate::error::Result;

/// Anything mapping a `(rows, d_in)` tensor to `(rows, d_out)`.
pub trait Forward {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor>;
}

pub struct Identity;

impl Forward for Identity {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        Ok(x.clone())
    }
}

/// `x · W + b` with `W` stored as `(in, out)`.
#[derive(Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(pb: &ParamBuilder, d_in: usize, d_out: usize) -> Result<Self> {
        let std = (1.0 / d_in as f64).sqrt();
        Ok(Linear {
            weight: pb.normal("weight", (d_in, d_out), std)?.as_tensor().clone(),
            bias: pb.constant("bias", d_out, 0.0)?.as_tensor().clone(),
        })
    }
}

impl Forward for Linear {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        x.matmul(&self.weight)?.broadcast_add(&self.bias)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Gelu,
}

impl Activation {
    fn apply(self, x: &Tensor) -> candle_core::Result<Tensor> {
        match self {
            Activation::Relu => x.relu(),
            Activation::Gelu => x.gelu(),
        }
    }
}

/// Two affine layers with an activation between them.
#[derive(Clone)]
pub struct FeedForward {
    pub first: Linear,
    pub second: Linear,
    pub activation: Activation,
}

impl FeedForward {
    pub fn new(pb: &ParamBuilder, d_in: usize, d_hidden: usize, d_out: usize, activation: Activation) -> Result<Self> {
        Ok(FeedForward {
            first: Linear::new(&pb.pp("fc1"), d_in, d_hidden)?,
            second: Linear::new(&pb.pp("fc2"), d_hidden, d_out)?,
            activation,
        })
    }
}

impl Forward for FeedForward {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let h = self.activation.apply(&self.first.forward(x)?)?;
        self.second.forward(&h)
    }
}

#[derive(Clone)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(pb: &ParamBuilder, d: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: pb.constant("gamma", d, 1.0)?.as_tensor().clone(),
            beta: pb.constant("beta", d, 0.0)?.as_tensor().clone(),
            eps: 1e-5,
        })
    }
}

impl Forward for LayerNorm {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)
    }
}

pub fn sigmoid(x: &Tensor) -> candle_core::Result<Tensor> {
    (x.neg()?.exp()? + 1.0)?.recip()
}

/// Row-wise softmax over the last dimension.
pub fn softmax(x: &Tensor) -> candle_core::Result<Tensor> {
    let shifted = x.broadcast_sub(&x.max_keepdim(D::Minus1)?.detach())?;
    let e = shifted.exp()?;
    e.broadcast_div(&e.sum_keepdim(D::Minus1)?)
}

/// Row-wise log-softmax over the last dimension.
pub fn log_softmax(x: &Tensor) -> candle_core::Result<Tensor> {
    let shifted = x.broadcast_sub(&x.max_keepdim(D::Minus1)?.detach())?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    shifted.broadcast_sub(&lse)
}

/// Single-direction LSTM with fused gate weights in i, f, g, o order.
#[derive(Clone)]
pub struct Lstm {
    pub w_input: Tensor,
    pub w_hidden: Tensor,
    pub bias: Tensor,
    pub hidden: usize,
}

impl Lstm {
    pub fn new(pb: &ParamBuilder, d_in: usize, hidden: usize) -> Result<Self> {
        let std = (1.0 / hidden as f64).sqrt();
        Ok(Lstm {
            w_input: pb.normal("w_input", (d_in, 4 * hidden), std)?.as_tensor().clone(),
            w_hidden: pb.normal("w_hidden", (hidden, 4 * hidden), std)?.as_tensor().clone(),
            bias: pb.constant("bias", 4 * hidden, 0.0)?.as_tensor().clone(),
            hidden,
        })
    }

    /// Hidden state after each input row, in input order. With `reverse` the
    /// rows are consumed last to first.
    fn run(&self, x: &Tensor, reverse: bool) -> candle_core::Result<Tensor> {
        let steps = x.dim(0)?;
        let projected = x.matmul(&self.w_input)?.broadcast_add(&self.bias)?;
        let h_dim = self.hidden;
        let mut h = Tensor::zeros((1, h_dim), x.dtype(), &Device::Cpu)?;
        let mut c = h.clone();
        let mut outputs = vec![None; steps];
        let order: Vec<usize> = if reverse { (0..steps).rev().collect() } else { (0..steps).collect() };
        for &t in &order {
            let gates = projected.narrow(0, t, 1)?.add(&h.matmul(&self.w_hidden)?)?;
            let i = sigmoid(&gates.narrow(1, 0, h_dim)?)?;
            let f = sigmoid(&gates.narrow(1, h_dim, h_dim)?)?;
            let g = gates.narrow(1, 2 * h_dim, h_dim)?.tanh()?;
            let o = sigmoid(&gates.narrow(1, 3 * h_dim, h_dim)?)?;
            c = f.mul(&c)?.add(&i.mul(&g)?)?;
            h = o.mul(&c.tanh()?)?;
            outputs[t] = Some(h.clone());
        }
        let rows: Vec<Tensor> = outputs.into_iter().map(|r| r.expect("every step visited")).collect();
        Tensor::cat(&rows, 0)
    }
}

/// Forward and backward LSTMs whose per-position states are concatenated.
#[derive(Clone)]
pub struct BiLstm {
    pub forward: Lstm,
    pub backward: Lstm,
}

impl BiLstm {
    pub fn new(pb: &ParamBuilder, d_in: usize, hidden: usize) -> Result<Self> {
        Ok(BiLstm {
            forward: Lstm::new(&pb.pp("forward"), d_in, hidden)?,
            backward: Lstm::new(&pb.pp("backward"), d_in, hidden)?,
        })
    }

    /// `(steps, 2 * hidden)`: row `k` is `[fwd state after 1..=k ; bwd state after k..=steps]`.
    pub fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let f = self.forward.run(x, false)?;
        let b = self.backward.run(x, true)?;
        Tensor::cat(&[&f, &b], 1)
    }
}
