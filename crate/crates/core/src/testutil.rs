//! Central-difference gradient oracle for unit tests.

use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;

/// d f / d x by central differences, one coordinate at a time.
pub fn numeric_grad(x: &Tensor, mut f: impl FnMut(&Tensor) -> f64) -> Tensor {
    let mut g = x.zeros_like();
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + FD_STEP;
        let up = f(&probe);
        probe.data_mut()[i] = orig - FD_STEP;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        g.data_mut()[i] = (up - down) / (2.0 * FD_STEP);
    }
    g
}

/// Worst-case coordinate error, scaled by the largest numeric gradient.
pub fn rel_err(analytic: &Tensor, numeric: &Tensor) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    let scale = numeric.max_abs().max(analytic.max_abs()).max(1e-8);
    analytic.data().iter().zip(numeric.data()).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max) / scale
}

pub fn assert_grad_close(analytic: &Tensor, numeric: &Tensor, tol: f64) {
    let e = rel_err(analytic, numeric);
    assert!(e < tol, "relative gradient error {e:e} >= {tol:e}");
}

/// `sum(w * y)`: a linear probe loss whose output gradient is `w`.
pub fn probe_loss(y: &Tensor, w: &Tensor) -> f64 {
    y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}
