//! Spatial attention block.
//!
//! The feature map is averaged over channels into a one-channel descriptor,
//! a 3x3 convolution turns the descriptor into gate logits, the gate is
//! `sigmoid(relu(logit))` and every channel at a position is scaled by the
//! gate value there.
//!
//! With the ReLU in front of the sigmoid the gate can never drop below 0.5;
//! [`AttentionGate::SigmoidOnly`] removes the ReLU for comparison.

use std::fmt;
use std::str::FromStr;

use crate::error::{shape_err, Error, Result};
use crate::layers::activation::{relu, sigmoid};
use crate::layers::{ConvLayer, Parameters};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttentionGate {
    #[default]
    ReluSigmoid,
    SigmoidOnly,
}

impl fmt::Display for AttentionGate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionGate::ReluSigmoid => "relu_sigmoid",
            AttentionGate::SigmoidOnly => "sigmoid_only",
        })
    }
}

impl FromStr for AttentionGate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu_sigmoid" => Ok(AttentionGate::ReluSigmoid),
            "sigmoid_only" => Ok(AttentionGate::SigmoidOnly),
            other => Err(Error::Config(format!("unknown attention gate `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialAttention {
    /// 3x3, one channel in and out, with bias.
    pub conv: ConvLayer,
    pub gate: AttentionGate,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    input: Tensor,
    descriptor: Tensor,
    logits: Tensor,
    map: Tensor,
}

impl AttentionCache {
    /// The gate map `[H, W]` produced by the forward pass.
    pub fn map(&self) -> &Tensor {
        &self.map
    }

    pub fn descriptor(&self) -> &Tensor {
        &self.descriptor
    }
}

/// Channel mean at every position: `[H, W, C] -> [H, W]`.
pub fn channel_mean(input: &Tensor) -> Result<Tensor> {
    if input.rank() != 3 {
        return shape_err(format!("channel_mean expects [H, W, C], got {:?}", input.shape()));
    }
    let c = input.dim(2);
    let data = input.data().chunks_exact(c).map(|px| px.iter().sum::<f64>() / c as f64).collect();
    Tensor::from_vec(&[input.dim(0), input.dim(1)], data)
}

/// Scales every channel at `(h, w)` by `t[h, w]`.
pub fn attention_apply(input: &Tensor, t: &Tensor) -> Result<Tensor> {
    input.mul(t)
}

impl SpatialAttention {
    /// Zero conv weights and bias: the gate starts at exactly 0.5 everywhere.
    pub fn new(gate: AttentionGate) -> Result<Self> {
        Ok(SpatialAttention { conv: ConvLayer::new(3, 1, 1)?, gate })
    }

    pub fn zeros_like(&self) -> Self {
        SpatialAttention { conv: self.conv.zeros_like(), gate: self.gate }
    }

    fn gate_value(&self, logit: f64) -> f64 {
        match self.gate {
            AttentionGate::ReluSigmoid => sigmoid(relu(logit)),
            AttentionGate::SigmoidOnly => sigmoid(logit),
        }
    }

    fn logits(&self, s: &Tensor) -> Result<Tensor> {
        if s.rank() != 2 {
            return shape_err(format!("attention descriptor must be [H, W], got {:?}", s.shape()));
        }
        let s3 = s.clone().reshape(&[s.dim(0), s.dim(1), 1])?;
        self.conv.forward(&s3)?.reshape(s.shape())
    }

    /// Gate map `T` for a spatial descriptor `s` (`[H, W] -> [H, W]`).
    pub fn attention_map(&self, s: &Tensor) -> Result<Tensor> {
        Ok(self.logits(s)?.map(|z| self.gate_value(z)))
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, AttentionCache)> {
        let descriptor = channel_mean(input)?;
        let logits = self.logits(&descriptor)?;
        let map = logits.map(|z| self.gate_value(z));
        let out = attention_apply(input, &map)?;
        Ok((out, AttentionCache { input: input.clone(), descriptor, logits, map }))
    }

    /// Gradient through both the direct scaling path and the descriptor path.
    pub fn backward_into(
        &self,
        cache: &AttentionCache,
        grad_out: &Tensor,
        grads: &mut SpatialAttention,
    ) -> Result<Tensor> {
        let input = &cache.input;
        if grad_out.shape() != input.shape() {
            return shape_err(format!("attention grad_out {:?} vs input {:?}", grad_out.shape(), input.shape()));
        }
        let (h, w, c) = (input.dim(0), input.dim(1), input.dim(2));

        // direct path, and d loss / d gate
        let mut grad_in = grad_out.mul(&cache.map)?;
        let mut dlogit = Vec::with_capacity(h * w);
        for (((gp, xp), &t), &z) in grad_out
            .data()
            .chunks_exact(c)
            .zip(input.data().chunks_exact(c))
            .zip(cache.map.data())
            .zip(cache.logits.data())
        {
            let dt: f64 = gp.iter().zip(xp).map(|(g, x)| g * x).sum();
            let open = match self.gate {
                AttentionGate::ReluSigmoid => z > 0.0,
                AttentionGate::SigmoidOnly => true,
            };
            dlogit.push(if open { dt * t * (1.0 - t) } else { 0.0 });
        }

        let s3 = cache.descriptor.clone().reshape(&[h, w, 1])?;
        let dlogit = Tensor::from_vec(&[h, w, 1], dlogit)?;
        let ds = self.conv.backward_into(&s3, &dlogit, &mut grads.conv)?;

        // descriptor path: s = mean over channels
        for (gp, &d) in grad_in.data_mut().chunks_exact_mut(c).zip(ds.data()) {
            gp.iter_mut().for_each(|g| *g += d / c as f64);
        }
        Ok(grad_in)
    }

    pub fn backward(&self, cache: &AttentionCache, grad_out: &Tensor) -> Result<(Tensor, SpatialAttention)> {
        let mut grads = self.zeros_like();
        let gi = self.backward_into(cache, grad_out, &mut grads)?;
        Ok((gi, grads))
    }
}

impl Parameters for SpatialAttention {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.conv.collect(prefix, out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.conv.collect_mut(prefix, out);
    }
}
