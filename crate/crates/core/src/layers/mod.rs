//! Hand-written forward/backward passes for the primitive layers.
//!
//! Feature maps are rank-3 `[H, W, C]` tensors (channels last). Every
//! backward pass returns exact gradients of `sum(grad_out * output)`.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod linear;
pub mod pool;

pub use batchnorm::{BatchNorm, BnCache};
pub use conv::ConvLayer;
pub use linear::Linear;
pub use pool::MaxPool;

use crate::tensor::Tensor;

/// Train/eval switch; only batch norm behaves differently.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Uniform access to a layer's learnable tensors, in a fixed order.
///
/// Gradients are stored in a value of the same type as the layer, so the
/// parameter list and the gradient list line up index by index.
pub trait Parameters {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>);
    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>);

    fn param_count(&self) -> usize {
        let mut v = Vec::new();
        self.collect("", &mut v);
        v.iter().map(|(_, t)| t.len()).sum()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
