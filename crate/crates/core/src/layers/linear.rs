//! Fully connected layer `y = x W + b` applied to each row of `[T, d_in]`.

use super::{join, Parameters};
use crate::error::{shape_err, Result};
use crate::tensor::{gemm, Rng, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `[d_in, d_out]`
    pub weight: Tensor,
    /// `[d_out]`
    pub bias: Tensor,
}

impl Linear {
    pub fn new(d_in: usize, d_out: usize) -> Result<Self> {
        Ok(Linear { weight: Tensor::zeros(&[d_in, d_out])?, bias: Tensor::zeros(&[d_out])? })
    }

    pub fn he_normal(d_in: usize, d_out: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Linear {
            weight: rng.normal_tensor(&[d_in, d_out], (2.0 / d_in as f64).sqrt())?,
            bias: Tensor::zeros(&[d_out])?,
        })
    }

    pub fn d_in(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn d_out(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn zeros_like(&self) -> Linear {
        Linear { weight: self.weight.zeros_like(), bias: self.bias.zeros_like() }
    }

    fn rows(&self, x: &Tensor) -> Result<usize> {
        match x.shape() {
            [d] if *d == self.d_in() => Ok(1),
            [t, d] if *d == self.d_in() => Ok(*t),
            s => shape_err(format!("linear expects [.., {}], got {s:?}", self.d_in())),
        }
    }

    fn out_shape(x: &Tensor, rows: usize, d_out: usize) -> Vec<usize> {
        if x.rank() == 1 {
            vec![d_out]
        } else {
            vec![rows, d_out]
        }
    }

    /// Accepts `[d_in]` or `[T, d_in]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let rows = self.rows(x)?;
        let d_out = self.d_out();
        let mut out = Vec::with_capacity(rows * d_out);
        for _ in 0..rows {
            out.extend_from_slice(self.bias.data());
        }
        gemm(false, false, rows, self.d_in(), d_out, x.data(), self.weight.data(), &mut out, 1.0);
        Tensor::from_vec(&Self::out_shape(x, rows, d_out), out)
    }

    pub fn backward_into(&self, x: &Tensor, grad_out: &Tensor, grads: &mut Linear) -> Result<Tensor> {
        let rows = self.rows(x)?;
        let (d_in, d_out) = (self.d_in(), self.d_out());
        if grad_out.len() != rows * d_out {
            return shape_err(format!("linear grad_out {:?}", grad_out.shape()));
        }
        gemm(true, false, d_in, rows, d_out, x.data(), grad_out.data(), grads.weight.data_mut(), 1.0);
        for row in grad_out.data().chunks_exact(d_out) {
            grads.bias.data_mut().iter_mut().zip(row).for_each(|(b, g)| *b += g);
        }
        let mut gx = vec![0.0; rows * d_in];
        gemm(false, true, rows, d_out, d_in, grad_out.data(), self.weight.data(), &mut gx, 0.0);
        Tensor::from_vec(x.shape(), gx)
    }

    pub fn backward(&self, x: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Linear)> {
        let mut grads = self.zeros_like();
        let gx = self.backward_into(x, grad_out, &mut grads)?;
        Ok((gx, grads))
    }
}

impl Parameters for Linear {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((join(prefix, "weight"), &self.weight));
        out.push((join(prefix, "bias"), &self.bias));
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        out.push((join(prefix, "bias"), &mut self.bias));
    }
}
