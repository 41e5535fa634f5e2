//! Same-size 2-D convolution (cross-correlation, stride 1, zero padding
//! `k / 2`) over `[H, W, C]` maps, lowered to GEMM through im2col.

use super::{join, Parameters};
use crate::error::{shape_err, Result};
use crate::tensor::{gemm, Rng, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// `[k, k, c_in, c_out]`
    pub weight: Tensor,
    /// `[c_out]`
    pub bias: Tensor,
}

impl ConvLayer {
    /// Zero-initialized layer with an odd square kernel.
    pub fn new(kernel: usize, c_in: usize, c_out: usize) -> Result<Self> {
        if kernel % 2 == 0 {
            return shape_err(format!("kernel size must be odd, got {kernel}"));
        }
        Ok(ConvLayer { weight: Tensor::zeros(&[kernel, kernel, c_in, c_out])?, bias: Tensor::zeros(&[c_out])? })
    }

    /// He-normal weights (`sqrt(2 / fan_in)`), zero bias.
    pub fn he_normal(kernel: usize, c_in: usize, c_out: usize, rng: &mut Rng) -> Result<Self> {
        let mut layer = Self::new(kernel, c_in, c_out)?;
        let fan_in = (kernel * kernel * c_in) as f64;
        layer.weight = rng.normal_tensor(layer.weight.shape(), (2.0 / fan_in).sqrt())?;
        Ok(layer)
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn c_in(&self) -> usize {
        self.weight.dim(2)
    }

    pub fn c_out(&self) -> usize {
        self.weight.dim(3)
    }

    fn check_input(&self, input: &Tensor) -> Result<(usize, usize)> {
        if input.rank() != 3 || input.dim(2) != self.c_in() {
            return shape_err(format!("conv expects [H, W, {}], got {:?}", self.c_in(), input.shape()));
        }
        Ok((input.dim(0), input.dim(1)))
    }

    /// `[H*W, k*k*c_in]` patch matrix. For 1x1 kernels this is the input itself.
    fn im2col(&self, input: &Tensor) -> Vec<f64> {
        let (h, w, c) = (input.dim(0), input.dim(1), input.dim(2));
        let k = self.kernel();
        if k == 1 {
            return input.data().to_vec();
        }
        let pad = k / 2;
        let row_len = k * k * c;
        let src = input.data();
        let mut cols = vec![0.0; h * w * row_len];
        for y in 0..h {
            for x in 0..w {
                let row = &mut cols[(y * w + x) * row_len..][..row_len];
                for ky in 0..k {
                    let sy = y + ky;
                    if sy < pad || sy - pad >= h {
                        continue;
                    }
                    for kx in 0..k {
                        let sx = x + kx;
                        if sx < pad || sx - pad >= w {
                            continue;
                        }
                        let from = ((sy - pad) * w + (sx - pad)) * c;
                        row[(ky * k + kx) * c..][..c].copy_from_slice(&src[from..from + c]);
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64], h: usize, w: usize) -> Tensor {
        let c = self.c_in();
        let k = self.kernel();
        if k == 1 {
            return Tensor::from_vec(&[h, w, c], cols.to_vec()).expect("shape checked");
        }
        let pad = k / 2;
        let row_len = k * k * c;
        let mut out = vec![0.0; h * w * c];
        for y in 0..h {
            for x in 0..w {
                let row = &cols[(y * w + x) * row_len..][..row_len];
                for ky in 0..k {
                    let sy = y + ky;
                    if sy < pad || sy - pad >= h {
                        continue;
                    }
                    for kx in 0..k {
                        let sx = x + kx;
                        if sx < pad || sx - pad >= w {
                            continue;
                        }
                        let to = ((sy - pad) * w + (sx - pad)) * c;
                        for (o, v) in out[to..to + c].iter_mut().zip(&row[(ky * k + kx) * c..][..c]) {
                            *o += v;
                        }
                    }
                }
            }
        }
        Tensor::from_vec(&[h, w, c], out).expect("shape checked")
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let (h, w) = self.check_input(input)?;
        let cols = self.im2col(input);
        let co = self.c_out();
        let kk = self.kernel() * self.kernel() * self.c_in();
        let mut out = Vec::with_capacity(h * w * co);
        for _ in 0..h * w {
            out.extend_from_slice(self.bias.data());
        }
        gemm(false, false, h * w, kk, co, &cols, self.weight.data(), &mut out, 1.0);
        Tensor::from_vec(&[h, w, co], out)
    }

    /// Accumulates parameter gradients into `grads` and returns the input gradient.
    pub fn backward_into(&self, input: &Tensor, grad_out: &Tensor, grads: &mut ConvLayer) -> Result<Tensor> {
        let (h, w) = self.check_input(input)?;
        let co = self.c_out();
        if grad_out.shape() != [h, w, co] {
            return shape_err(format!("conv grad_out {:?}, expected [{h}, {w}, {co}]", grad_out.shape()));
        }
        if grads.weight.shape() != self.weight.shape() {
            return shape_err("conv gradient buffer has the wrong shape");
        }
        let kk = self.kernel() * self.kernel() * self.c_in();
        let cols = self.im2col(input);
        let dy = grad_out.data();

        gemm(true, false, kk, h * w, co, &cols, dy, grads.weight.data_mut(), 1.0);
        let gb = grads.bias.data_mut();
        for px in dy.chunks_exact(co) {
            for (b, g) in gb.iter_mut().zip(px) {
                *b += g;
            }
        }

        let mut dcols = vec![0.0; h * w * kk];
        gemm(false, true, h * w, co, kk, dy, self.weight.data(), &mut dcols, 0.0);
        Ok(self.col2im(&dcols, h, w))
    }

    /// Returns `(grad_input, grad_params)`.
    pub fn backward(&self, input: &Tensor, grad_out: &Tensor) -> Result<(Tensor, ConvLayer)> {
        let mut grads = self.zeros_like();
        let gi = self.backward_into(input, grad_out, &mut grads)?;
        Ok((gi, grads))
    }

    pub fn zeros_like(&self) -> ConvLayer {
        ConvLayer { weight: self.weight.zeros_like(), bias: self.bias.zeros_like() }
    }
}

impl Parameters for ConvLayer {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((join(prefix, "weight"), &self.weight));
        out.push((join(prefix, "bias"), &self.bias));
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        out.push((join(prefix, "bias"), &mut self.bias));
    }
}
