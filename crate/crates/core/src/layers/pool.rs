//! Max pooling without padding (floor output size).

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool {
    pub pool_h: usize,
    pub pool_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
}

impl MaxPool {
    pub const fn new(pool_h: usize, pool_w: usize, stride_h: usize, stride_w: usize) -> Self {
        MaxPool { pool_h, pool_w, stride_h, stride_w }
    }

    /// Output size along one axis, `None` if the window does not fit.
    pub fn out_len(input: usize, pool: usize, stride: usize) -> Option<usize> {
        (input >= pool && pool > 0 && stride > 0).then(|| (input - pool) / stride + 1)
    }

    pub fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match (Self::out_len(h, self.pool_h, self.stride_h), Self::out_len(w, self.pool_w, self.stride_w)) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => shape_err(format!("{}x{} pool window does not fit a {h}x{w} map", self.pool_h, self.pool_w)),
        }
    }

    /// Per-window, per-channel max plus the flat input offset of each winner.
    /// Ties go to the first position in row-major order.
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
        if input.rank() != 3 {
            return shape_err(format!("pool expects [H, W, C], got {:?}", input.shape()));
        }
        let (h, w, c) = (input.dim(0), input.dim(1), input.dim(2));
        let (oh, ow) = self.output_dims(h, w)?;
        let src = input.data();
        let mut out = Vec::with_capacity(oh * ow * c);
        let mut arg = Vec::with_capacity(oh * ow * c);
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_at = usize::MAX;
                    for py in 0..self.pool_h {
                        for px in 0..self.pool_w {
                            let at = ((oy * self.stride_h + py) * w + ox * self.stride_w + px) * c + ch;
                            if best_at == usize::MAX || src[at] > best {
                                best = src[at];
                                best_at = at;
                            }
                        }
                    }
                    out.push(best);
                    arg.push(best_at);
                }
            }
        }
        Ok((Tensor::from_vec(&[oh, ow, c], out)?, arg))
    }

    /// Routes each output gradient to its argmax; overlapping windows accumulate.
    pub fn backward(&self, input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Result<Tensor> {
        if argmax.len() != grad_out.len() {
            return shape_err("pool backward: argmax table does not match grad_out");
        }
        let mut gi = Tensor::zeros(input_shape)?;
        let n = gi.len();
        let dst = gi.data_mut();
        for (&at, &g) in argmax.iter().zip(grad_out.data()) {
            if at >= n {
                return shape_err(format!("pool backward: argmax {at} out of range {n}"));
            }
            dst[at] += g;
        }
        Ok(gi)
    }
}
