//! Residue convolutional block: `relu(conv_b(relu(conv_a(x)))) + skip(x)`.
//!
//! The skip is the identity when channel counts match and a learned 1x1
//! projection otherwise. With `residual = false` the block is a plain
//! conv-relu-conv-relu chain with no skip at all.
//!
//! The block itself carries no normalization. Batch-level callers may hand a
//! [`BatchNorm`] to [`ResidueBlock::forward_batch`], which is applied to the
//! output of `conv_b` before its ReLU.

use crate::error::{shape_err, Error, Result};
use crate::layers::activation::relu;
use crate::layers::{join, BatchNorm, BnCache, ConvLayer, Mode, Parameters};
use crate::parallel;
use crate::tensor::{Rng, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ResidueBlock {
    pub conv_a: ConvLayer,
    pub conv_b: ConvLayer,
    pub skip_proj: Option<ConvLayer>,
    pub residual: bool,
}

#[derive(Debug, Clone)]
pub struct ResidueCache {
    inputs: Vec<Tensor>,
    pre_a: Vec<Tensor>,
    hidden: Vec<Tensor>,
    /// input of the final ReLU (after normalization, if any)
    pre_out: Vec<Tensor>,
    norm: Option<BnCache>,
}

fn relu_mask(pre: &Tensor, grad: &Tensor) -> Tensor {
    let mut g = grad.clone();
    for (gi, &p) in g.data_mut().iter_mut().zip(pre.data()) {
        if p <= 0.0 {
            *gi = 0.0;
        }
    }
    g
}

impl ResidueBlock {
    /// Zero-initialized block `c_in -> c_mid -> c_out`.
    pub fn new(c_in: usize, c_mid: usize, c_out: usize, residual: bool) -> Result<Self> {
        let skip_proj = if residual && c_in != c_out { Some(ConvLayer::new(1, c_in, c_out)?) } else { None };
        Ok(ResidueBlock {
            conv_a: ConvLayer::new(3, c_in, c_mid)?,
            conv_b: ConvLayer::new(3, c_mid, c_out)?,
            skip_proj,
            residual,
        })
    }

    pub fn he_normal(c_in: usize, c_mid: usize, c_out: usize, residual: bool, rng: &mut Rng) -> Result<Self> {
        let skip_proj = if residual && c_in != c_out { Some(ConvLayer::he_normal(1, c_in, c_out, rng)?) } else { None };
        Ok(ResidueBlock {
            conv_a: ConvLayer::he_normal(3, c_in, c_mid, rng)?,
            conv_b: ConvLayer::he_normal(3, c_mid, c_out, rng)?,
            skip_proj,
            residual,
        })
    }

    pub fn c_in(&self) -> usize {
        self.conv_a.c_in()
    }

    pub fn c_out(&self) -> usize {
        self.conv_b.c_out()
    }

    pub fn zeros_like(&self) -> Self {
        ResidueBlock {
            conv_a: self.conv_a.zeros_like(),
            conv_b: self.conv_b.zeros_like(),
            skip_proj: self.skip_proj.as_ref().map(ConvLayer::zeros_like),
            residual: self.residual,
        }
    }

    fn add_assign(&mut self, other: &ResidueBlock) -> Result<()> {
        self.conv_a.weight.add_assign(&other.conv_a.weight)?;
        self.conv_a.bias.add_assign(&other.conv_a.bias)?;
        self.conv_b.weight.add_assign(&other.conv_b.weight)?;
        self.conv_b.bias.add_assign(&other.conv_b.bias)?;
        if let (Some(a), Some(b)) = (self.skip_proj.as_mut(), other.skip_proj.as_ref()) {
            a.weight.add_assign(&b.weight)?;
            a.bias.add_assign(&b.bias)?;
        }
        Ok(())
    }

    fn skip(&self, x: &Tensor) -> Result<Option<Tensor>> {
        if !self.residual {
            return Ok(None);
        }
        match &self.skip_proj {
            Some(p) => p.forward(x).map(Some),
            None if x.dim(2) == self.c_out() => Ok(Some(x.clone())),
            None => shape_err(format!("identity skip needs c_in == c_out, got {} -> {}", x.dim(2), self.c_out())),
        }
    }

    /// Single-map forward, no normalization.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ResidueCache)> {
        let (mut ys, cache) = self.forward_batch(std::slice::from_ref(x), None, Mode::Eval)?;
        Ok((ys.pop().expect("one item"), cache))
    }

    pub fn forward_batch(
        &self,
        xs: &[Tensor],
        norm: Option<&mut BatchNorm>,
        mode: Mode,
    ) -> Result<(Vec<Tensor>, ResidueCache)> {
        let first: Vec<(Tensor, Tensor, Tensor)> = parallel::map(xs.len(), |i| {
            let pre_a = self.conv_a.forward(&xs[i])?;
            let hidden = pre_a.map(relu);
            let pre_b = self.conv_b.forward(&hidden)?;
            Ok((pre_a, hidden, pre_b))
        })?;
        let mut pre_a = Vec::with_capacity(xs.len());
        let mut hidden = Vec::with_capacity(xs.len());
        let mut pre_b = Vec::with_capacity(xs.len());
        for (a, h, b) in first {
            pre_a.push(a);
            hidden.push(h);
            pre_b.push(b);
        }
        let (pre_out, norm_cache) = match norm {
            Some(bn) => {
                let (z, c) = bn.forward_batch(&pre_b, mode)?;
                (z, Some(c))
            }
            None => (pre_b, None),
        };
        let ys = parallel::map(xs.len(), |i| {
            let mut y = pre_out[i].map(relu);
            if let Some(s) = self.skip(&xs[i])? {
                y.add_assign(&s)?;
            }
            Ok(y)
        })?;
        let cache = ResidueCache { inputs: xs.to_vec(), pre_a, hidden, pre_out, norm: norm_cache };
        Ok((ys, cache))
    }

    /// Exact gradient; skip and residual paths both accumulate into the
    /// input gradient. `norm` must be the layer used in the forward pass.
    pub fn backward_batch(
        &self,
        cache: &ResidueCache,
        grads_out: &[Tensor],
        norm: Option<(&BatchNorm, &mut BatchNorm)>,
        grads: &mut ResidueBlock,
    ) -> Result<Vec<Tensor>> {
        let n = cache.inputs.len();
        if grads_out.len() != n {
            return shape_err("residue backward: batch size differs from forward");
        }
        let dz: Vec<Tensor> = (0..n).map(|i| relu_mask(&cache.pre_out[i], &grads_out[i])).collect();
        let dpre_b = match (norm, &cache.norm) {
            (Some((bn, bn_grads)), Some(c)) => bn.backward_batch(c, &dz, bn_grads)?,
            (None, None) => dz,
            _ => return Err(Error::MissingCache("residue block normalization state")),
        };

        let (dxs, accs) = parallel::map_accumulate(
            n,
            || self.zeros_like(),
            |i, acc| {
                let dh = self.conv_b.backward_into(&cache.hidden[i], &dpre_b[i], &mut acc.conv_b)?;
                let dpre_a = relu_mask(&cache.pre_a[i], &dh);
                let mut dx = self.conv_a.backward_into(&cache.inputs[i], &dpre_a, &mut acc.conv_a)?;
                if self.residual {
                    match (&self.skip_proj, acc.skip_proj.as_mut()) {
                        (Some(p), Some(pg)) => {
                            let ds = p.backward_into(&cache.inputs[i], &grads_out[i], pg)?;
                            dx.add_assign(&ds)?;
                        }
                        _ => dx.add_assign(&grads_out[i])?,
                    }
                }
                Ok(dx)
            },
        )?;
        for acc in &accs {
            grads.add_assign(acc)?;
        }
        Ok(dxs)
    }

    /// Returns `(grad_input, grad_params)` for a single-map cache.
    pub fn backward(&self, cache: &ResidueCache, grad_out: &Tensor) -> Result<(Tensor, ResidueBlock)> {
        let mut grads = self.zeros_like();
        let mut dx = self.backward_batch(cache, std::slice::from_ref(grad_out), None, &mut grads)?;
        Ok((dx.pop().expect("one item"), grads))
    }
}

impl Parameters for ResidueBlock {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.conv_a.collect(&join(prefix, "conv_a"), out);
        self.conv_b.collect(&join(prefix, "conv_b"), out);
        if let Some(p) = &self.skip_proj {
            p.collect(&join(prefix, "skip"), out);
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.conv_a.collect_mut(&join(prefix, "conv_a"), out);
        self.conv_b.collect_mut(&join(prefix, "conv_b"), out);
        if let Some(p) = &mut self.skip_proj {
            p.collect_mut(&join(prefix, "skip"), out);
        }
    }
}
