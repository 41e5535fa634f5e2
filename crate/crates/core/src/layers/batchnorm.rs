//! Per-channel batch normalization over the last axis.
//!
//! A batch is a slice of tensors whose last axis is the channel axis; the
//! statistics pool every other position of every item. Items may have
//! different widths, so variable-width crops never need zero padding.

use super::{join, Mode, Parameters};
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

/// Forward state needed by [`BatchNorm::backward`].
#[derive(Debug, Clone)]
pub struct BnCache {
    mode: Mode,
    xhat: Vec<Tensor>,
    inv_std: Vec<f64>,
    count: usize,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Result<Self> {
        Ok(BatchNorm {
            gamma: Tensor::new(&[channels], 1.0)?,
            beta: Tensor::zeros(&[channels])?,
            running_mean: Tensor::zeros(&[channels])?,
            running_var: Tensor::new(&[channels], 1.0)?,
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn zeros_like(&self) -> BatchNorm {
        BatchNorm {
            gamma: self.gamma.zeros_like(),
            beta: self.beta.zeros_like(),
            running_mean: self.running_mean.zeros_like(),
            running_var: self.running_var.zeros_like(),
            momentum: self.momentum,
            eps: self.eps,
        }
    }

    fn check(&self, items: &[Tensor]) -> Result<()> {
        let c = self.channels();
        for t in items {
            if t.shape().last() != Some(&c) {
                return shape_err(format!("batch-norm over {c} channels got {:?}", t.shape()));
            }
        }
        Ok(())
    }

    /// Normalizes a whole batch. In train mode the batch statistics are used
    /// and the running statistics are updated.
    pub fn forward_batch(&mut self, items: &[Tensor], mode: Mode) -> Result<(Vec<Tensor>, BnCache)> {
        self.check(items)?;
        let c = self.channels();
        let count: usize = items.iter().map(|t| t.len() / c).sum();
        let (mean, var) = match mode {
            Mode::Train => {
                if count < 2 {
                    return Err(Error::DegenerateBatch(count));
                }
                let mut mean = vec![0.0; c];
                for t in items {
                    for px in t.data().chunks_exact(c) {
                        mean.iter_mut().zip(px).for_each(|(m, x)| *m += x);
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count as f64);
                let mut var = vec![0.0; c];
                for t in items {
                    for px in t.data().chunks_exact(c) {
                        for ((v, x), m) in var.iter_mut().zip(px).zip(&mean) {
                            *v += (x - m) * (x - m);
                        }
                    }
                }
                var.iter_mut().for_each(|v| *v /= count as f64);
                let unbiased = count as f64 / (count as f64 - 1.0);
                let mom = self.momentum;
                for (r, m) in self.running_mean.data_mut().iter_mut().zip(&mean) {
                    *r = mom * *r + (1.0 - mom) * m;
                }
                for (r, v) in self.running_var.data_mut().iter_mut().zip(&var) {
                    *r = mom * *r + (1.0 - mom) * v * unbiased;
                }
                (mean, var)
            }
            Mode::Eval => (self.running_mean.data().to_vec(), self.running_var.data().to_vec()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();

        let mut outs = Vec::with_capacity(items.len());
        let mut xhats = Vec::with_capacity(items.len());
        for t in items {
            let mut xhat = t.clone();
            for px in xhat.data_mut().chunks_exact_mut(c) {
                for ((x, m), s) in px.iter_mut().zip(&mean).zip(&inv_std) {
                    *x = (*x - m) * s;
                }
            }
            let mut y = xhat.clone();
            for px in y.data_mut().chunks_exact_mut(c) {
                for ((x, g), b) in px.iter_mut().zip(self.gamma.data()).zip(self.beta.data()) {
                    *x = *x * g + b;
                }
            }
            outs.push(y);
            xhats.push(xhat);
        }
        Ok((outs, BnCache { mode, xhat: xhats, inv_std, count }))
    }

    /// Single-tensor convenience: all leading axes of `batch` are pooled.
    pub fn forward(&mut self, batch: &Tensor, mode: Mode) -> Result<(Tensor, BnCache)> {
        let (mut outs, cache) = self.forward_batch(std::slice::from_ref(batch), mode)?;
        Ok((outs.pop().expect("one item"), cache))
    }

    /// Exact gradient of the forward pass (through the batch statistics in
    /// train mode). Parameter gradients accumulate into `grads`.
    pub fn backward_batch(&self, cache: &BnCache, grads_out: &[Tensor], grads: &mut BatchNorm) -> Result<Vec<Tensor>> {
        if grads_out.len() != cache.xhat.len() {
            return shape_err("batch-norm backward: batch size differs from forward");
        }
        let c = self.channels();
        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xhat = vec![0.0; c];
        for (g, xh) in grads_out.iter().zip(&cache.xhat) {
            if g.shape() != xh.shape() {
                return shape_err(format!("batch-norm backward {:?} vs {:?}", g.shape(), xh.shape()));
            }
            for (gp, xp) in g.data().chunks_exact(c).zip(xh.data().chunks_exact(c)) {
                for ch in 0..c {
                    sum_dy[ch] += gp[ch];
                    sum_dy_xhat[ch] += gp[ch] * xp[ch];
                }
            }
        }
        grads.beta.data_mut().iter_mut().zip(&sum_dy).for_each(|(a, b)| *a += b);
        grads.gamma.data_mut().iter_mut().zip(&sum_dy_xhat).for_each(|(a, b)| *a += b);

        let n = cache.count as f64;
        let train = cache.mode == Mode::Train;
        let mut out = Vec::with_capacity(grads_out.len());
        for (g, xh) in grads_out.iter().zip(&cache.xhat) {
            let mut gi = g.clone();
            for (gp, xp) in gi.data_mut().chunks_exact_mut(c).zip(xh.data().chunks_exact(c)) {
                for ch in 0..c {
                    let scale = self.gamma.data()[ch] * cache.inv_std[ch];
                    gp[ch] = if train {
                        scale * (gp[ch] - sum_dy[ch] / n - xp[ch] * sum_dy_xhat[ch] / n)
                    } else {
                        scale * gp[ch]
                    };
                }
            }
            out.push(gi);
        }
        Ok(out)
    }

    /// Returns `(grad_input, grad_params)` for a single-tensor batch.
    pub fn backward(&self, cache: &BnCache, grad_out: &Tensor) -> Result<(Tensor, BatchNorm)> {
        let mut grads = self.zeros_like();
        let mut gi = self.backward_batch(cache, std::slice::from_ref(grad_out), &mut grads)?;
        Ok((gi.pop().expect("one item"), grads))
    }
}

impl Parameters for BatchNorm {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((join(prefix, "gamma"), &self.gamma));
        out.push((join(prefix, "beta"), &self.beta));
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((join(prefix, "gamma"), &mut self.gamma));
        out.push((join(prefix, "beta"), &mut self.beta));
    }
}

impl BatchNorm {
    /// Running statistics; persisted in checkpoints but not learnable.
    pub fn collect_state<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((join(prefix, "running_mean"), &self.running_mean));
        out.push((join(prefix, "running_var"), &self.running_var));
    }

    pub fn collect_state_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((join(prefix, "running_mean"), &mut self.running_mean));
        out.push((join(prefix, "running_var"), &mut self.running_var));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;
    use crate::testutil::{assert_grad_close, numeric_grad, probe_loss};

    fn channel_stats(t: &Tensor, c: usize) -> Vec<(f64, f64)> {
        let n = (t.len() / c) as f64;
        (0..c)
            .map(|ch| {
                let vals: Vec<f64> = t.data().iter().skip(ch).step_by(c).cloned().collect();
                let m = vals.iter().sum::<f64>() / n;
                let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
                (m, v)
            })
            .collect()
    }

    #[test]
    fn standardized_input_passes_through() {
        // per channel: values +-1, mean 0, variance 1
        let vals: Vec<f64> = (0..16)
            .flat_map(|i| {
                let s = if i % 2 == 0 { 1.0 } else { -1.0 };
                [s, -s]
            })
            .collect();
        let x = Tensor::from_vec(&[2, 2, 4, 2], vals).unwrap();
        let mut bn = BatchNorm::new(2).unwrap();
        let (y, _) = bn.forward(&x, Mode::Train).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_gamma_gives_beta() {
        let x = Rng::new(1).normal_tensor(&[3, 2, 2, 3], 2.0).unwrap();
        let mut bn = BatchNorm::new(3).unwrap();
        bn.gamma = Tensor::zeros(&[3]).unwrap();
        bn.beta = Tensor::from_vec(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let (y, _) = bn.forward(&x, Mode::Train).unwrap();
        for px in y.data().chunks(3) {
            assert_eq!(px, &[0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn train_output_is_standardized() {
        let x = Rng::new(3).normal_tensor(&[4, 3, 3, 2], 5.0).unwrap().map(|v| v + 3.0);
        let mut bn = BatchNorm::new(2).unwrap();
        let (y, _) = bn.forward(&x, Mode::Train).unwrap();
        let in_stats = channel_stats(&x, 2);
        for ((m, v), (_, vin)) in channel_stats(&y, 2).into_iter().zip(in_stats) {
            assert!(m.abs() < 1e-10);
            // variance shrinks by exactly var / (var + eps)
            assert!((v - vin / (vin + BN_EPS)).abs() < 1e-6);
            assert!((v - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn running_stats_update_and_eval() {
        let x = Rng::new(4).normal_tensor(&[8, 2], 1.0).unwrap().map(|v| v + 1.0);
        let mut bn = BatchNorm::new(2).unwrap();
        bn.forward(&x, Mode::Train).unwrap();
        let stats = channel_stats(&x, 2);
        for ch in 0..2 {
            assert!((bn.running_mean.data()[ch] - 0.1 * stats[ch].0).abs() < 1e-12);
            let unbiased = stats[ch].1 * 8.0 / 7.0;
            assert!((bn.running_var.data()[ch] - (0.9 + 0.1 * unbiased)).abs() < 1e-12);
        }
        let before = bn.clone();
        let (y, _) = bn.forward(&x, Mode::Eval).unwrap();
        assert_eq!(before, bn);
        let want = (x.data()[0] - bn.running_mean.data()[0]) / (bn.running_var.data()[0] + BN_EPS).sqrt();
        assert!((y.data()[0] - want).abs() < 1e-12);
    }

    #[test]
    fn degenerate_batch_rejected() {
        let mut bn = BatchNorm::new(2).unwrap();
        let x = Tensor::zeros(&[1, 1, 1, 2]).unwrap();
        assert!(matches!(bn.forward(&x, Mode::Train), Err(Error::DegenerateBatch(1))));
        assert!(bn.forward(&x, Mode::Eval).is_ok());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Rng::new(5);
        let x = rng.normal_tensor(&[4, 2, 2, 3], 1.5).unwrap();
        let w = rng.normal_tensor(&[4, 2, 2, 3], 1.0).unwrap();
        let mut bn = BatchNorm::new(3).unwrap();
        bn.gamma = rng.normal_tensor(&[3], 1.0).unwrap();
        bn.beta = rng.normal_tensor(&[3], 1.0).unwrap();
        let (_, cache) = bn.clone().forward(&x, Mode::Train).unwrap();
        let (gi, gp) = bn.backward(&cache, &w).unwrap();

        let f = |bn: &BatchNorm, x: &Tensor| probe_loss(&bn.clone().forward(x, Mode::Train).unwrap().0, &w);
        assert_grad_close(&gi, &numeric_grad(&x, |x| f(&bn, x)), 1e-5);
        let num = numeric_grad(&bn.gamma, |g| {
            let mut b = bn.clone();
            b.gamma = g.clone();
            f(&b, &x)
        });
        assert_grad_close(&gp.gamma, &num, 1e-5);
        let num = numeric_grad(&bn.beta, |g| {
            let mut b = bn.clone();
            b.beta = g.clone();
            f(&b, &x)
        });
        assert_grad_close(&gp.beta, &num, 1e-5);

        // grad_beta is the per-channel sum of grad_out
        for ch in 0..3 {
            let s: f64 = w.data().iter().skip(ch).step_by(3).sum();
            assert!((gp.beta.data()[ch] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn ragged_batch_matches_finite_differences() {
        let mut rng = Rng::new(6);
        let items = vec![rng.normal_tensor(&[2, 3, 2], 1.0).unwrap(), rng.normal_tensor(&[2, 5, 2], 1.0).unwrap()];
        let ws: Vec<Tensor> = items.iter().map(|t| rng.normal_tensor(t.shape(), 1.0).unwrap()).collect();
        let mut bn = BatchNorm::new(2).unwrap();
        bn.gamma = Tensor::from_vec(&[2], vec![0.7, -1.3]).unwrap();
        let (_, cache) = bn.clone().forward_batch(&items, Mode::Train).unwrap();
        let mut grads = bn.zeros_like();
        let gi = bn.backward_batch(&cache, &ws, &mut grads).unwrap();
        for k in 0..2 {
            let num = numeric_grad(&items[k], |x| {
                let mut it = items.clone();
                it[k] = x.clone();
                let (ys, _) = bn.clone().forward_batch(&it, Mode::Train).unwrap();
                ys.iter().zip(&ws).map(|(y, w)| probe_loss(y, w)).sum()
            });
            assert_grad_close(&gi[k], &num, 1e-5);
        }
    }

    #[test]
    fn constant_grad_is_mean_invariant() {
        let x = Rng::new(7).normal_tensor(&[3, 2, 2, 2], 1.0).unwrap();
        let mut bn = BatchNorm::new(2).unwrap();
        let (_, cache) = bn.forward(&x, Mode::Train).unwrap();
        let (gi, _) = bn.backward(&cache, &Tensor::new(x.shape(), 0.7).unwrap()).unwrap();
        for ch in 0..2 {
            let s: f64 = gi.data().iter().skip(ch).step_by(2).sum();
            assert!(s.abs() < 1e-10);
        }
    }
}
