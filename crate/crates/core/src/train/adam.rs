//! Adam with global-norm gradient clipping.

use crate::error::{shape_err, Error, Result};
use crate::layers::Parameters;
use crate::tensor::Tensor;

pub const DEFAULT_LR: f64 = 1e-3;
pub const DEFAULT_CLIP: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam::new(DEFAULT_LR)
    }
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(DEFAULT_CLIP),
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update. Returns the gradient norm before clipping.
    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P) -> Result<f64> {
        let mut g = Vec::new();
        grads.collect("", &mut g);
        let mut p = Vec::new();
        params.collect_mut("", &mut p);
        if p.len() != g.len() {
            return shape_err(format!("{} parameters but {} gradients", p.len(), g.len()));
        }
        for ((pn, pt), (gn, gt)) in p.iter().zip(&g) {
            if pt.shape() != gt.shape() {
                return shape_err(format!("`{pn}` is {:?} but its gradient `{gn}` is {:?}", pt.shape(), gt.shape()));
            }
            if !gt.all_finite() {
                return Err(Error::NonFiniteGradient(pn.clone()));
            }
        }
        if self.m.is_empty() {
            self.m = g.iter().map(|(_, t)| t.zeros_like()).collect();
            self.v = self.m.clone();
        } else if self.m.len() != g.len() || self.m.iter().zip(&g).any(|(m, (_, t))| m.shape() != t.shape()) {
            return shape_err("optimizer state does not match the parameters");
        }

        let norm = g.iter().map(|(_, t)| t.sum_sq()).sum::<f64>().sqrt();
        let scale = match self.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (_, pt)) in p.iter_mut().enumerate() {
            let gd = g[i].1.data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, w) in pt.data_mut().iter_mut().enumerate() {
                let gj = gd[j] * scale;
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                *w -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(norm)
    }
}
