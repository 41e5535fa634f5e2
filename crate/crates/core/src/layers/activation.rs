//! Pointwise activations and row softmax.

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu_tensor(x: &Tensor) -> Tensor {
    x.map(relu)
}

/// Gradient through ReLU given its *input*; the derivative at 0 is 0.
pub fn relu_backward(pre: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if pre.shape() != grad_out.shape() {
        return shape_err(format!("relu backward {:?} vs {:?}", pre.shape(), grad_out.shape()));
    }
    let mut g = grad_out.clone();
    for (gi, &x) in g.data_mut().iter_mut().zip(pre.data()) {
        if x <= 0.0 {
            *gi = 0.0;
        }
    }
    Ok(g)
}

pub fn sigmoid_tensor(x: &Tensor) -> Tensor {
    x.map(sigmoid)
}

/// Gradient through sigmoid given its *output*.
pub fn sigmoid_backward(out: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if out.shape() != grad_out.shape() {
        return shape_err(format!("sigmoid backward {:?} vs {:?}", out.shape(), grad_out.shape()));
    }
    let mut g = grad_out.clone();
    for (gi, &y) in g.data_mut().iter_mut().zip(out.data()) {
        *gi *= y * (1.0 - y);
    }
    Ok(g)
}

/// Softmax of one row, with max subtraction.
pub fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
}

/// `log(softmax(row))` without forming the probabilities first.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

/// Softmax over the last axis.
pub fn softmax(x: &Tensor) -> Tensor {
    let k = *x.shape().last().expect("tensor has rank >= 1");
    let mut y = x.clone();
    y.data_mut().chunks_exact_mut(k).for_each(softmax_in_place);
    y
}

/// Gradient through a last-axis softmax given its output.
pub fn softmax_backward(out: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if out.shape() != grad_out.shape() {
        return shape_err(format!("softmax backward {:?} vs {:?}", out.shape(), grad_out.shape()));
    }
    let k = *out.shape().last().expect("rank >= 1");
    let mut g = grad_out.clone();
    for (grow, yrow) in g.data_mut().chunks_exact_mut(k).zip(out.data().chunks_exact(k)) {
        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
        for (gi, &yi) in grow.iter_mut().zip(yrow) {
            *gi = yi * (*gi - dot);
        }
    }
    Ok(g)
}
