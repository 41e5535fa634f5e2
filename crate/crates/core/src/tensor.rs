//! Dense row-major `f64` tensors, the GEMM kernel every layer leans on, and
//! the seeded random source used for initialization, shuffling and data
//! generation.

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{shape_err, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ewise {
    Add,
    Sub,
    Mul,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return shape_err("empty shape list");
    }
    if shape.contains(&0) {
        return shape_err(format!("zero dimension in shape {shape:?}"));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    /// A tensor of the given shape with every element set to `fill`.
    pub fn new(shape: &[usize], fill: f64) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Tensor { shape: shape.to_vec(), data: vec![fill; len] })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(shape, 0.0)
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != data.len() {
            return shape_err(format!("shape {shape:?} needs {len} values, got {}", data.len()));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    /// Zeros with the same shape as `self`.
    pub fn zeros_like(&self) -> Self {
        Tensor { shape: self.shape.clone(), data: vec![0.0; self.data.len()] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != self.data.len() {
            return shape_err(format!("cannot reshape {:?} into {shape:?}", self.shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Row-major flat offset of `coords`.
    pub fn offset(&self, coords: &[usize]) -> Result<usize> {
        if coords.len() != self.shape.len() {
            return shape_err(format!("rank {} index into rank {}", coords.len(), self.rank()));
        }
        let mut off = 0;
        for (&c, &d) in coords.iter().zip(&self.shape) {
            if c >= d {
                return shape_err(format!("index {coords:?} out of bounds for {:?}", self.shape));
            }
            off = off * d + c;
        }
        Ok(off)
    }

    /// Inverse of [`Tensor::offset`].
    pub fn coords(&self, mut offset: usize) -> Result<Vec<usize>> {
        if offset >= self.data.len() {
            return shape_err(format!("offset {offset} out of bounds for {:?}", self.shape));
        }
        let mut out = vec![0; self.shape.len()];
        for (slot, &d) in out.iter_mut().zip(&self.shape).rev() {
            *slot = offset % d;
            offset /= d;
        }
        Ok(out)
    }

    pub fn get(&self, coords: &[usize]) -> Result<f64> {
        Ok(self.data[self.offset(coords)?])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn scale(&mut self, k: f64) {
        self.data.iter_mut().for_each(|x| *x *= k);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `self += other`, shapes must agree exactly.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return shape_err(format!("add_assign {:?} += {:?}", self.shape, other.shape));
        }
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// Elementwise `a (op) b`. `b` may also be a rank-2 `[H, W]` map when `a`
    /// is a rank-3 `[H, W, C]` feature map; it is then replicated over channels.
    pub fn ewise(&self, other: &Tensor, kind: Ewise) -> Result<Tensor> {
        let op = |x: f64, y: f64| match kind {
            Ewise::Add => x + y,
            Ewise::Sub => x - y,
            Ewise::Mul => x * y,
        };
        if self.shape == other.shape {
            let data = self.data.iter().zip(&other.data).map(|(&x, &y)| op(x, y)).collect();
            return Ok(Tensor { shape: self.shape.clone(), data });
        }
        if self.rank() == 3 && other.rank() == 2 && self.shape[..2] == other.shape[..] {
            let c = self.shape[2];
            let data = self
                .data
                .chunks_exact(c)
                .zip(&other.data)
                .flat_map(|(px, &y)| px.iter().map(move |&x| op(x, y)))
                .collect();
            return Ok(Tensor { shape: self.shape.clone(), data });
        }
        shape_err(format!("ewise {:?} with {:?}", self.shape, other.shape))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.ewise(other, Ewise::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.ewise(other, Ewise::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.ewise(other, Ewise::Mul)
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return shape_err(format!("matmul {:?} x {:?}", self.shape, other.shape));
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![0.0; m * n];
        gemm(false, false, m, k, n, &self.data, &other.data, &mut out, 0.0);
        Tensor::from_vec(&[m, n], out)
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return shape_err(format!("transpose of rank {}", self.rank()));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::from_vec(&[c, r], out)
    }
}

/// `C = op(A) * op(B) + beta * C` on row-major slices.
///
/// `A` is logically `[m, k]` and stored `[k, m]` when `trans_a`; `B` is
/// logically `[k, n]` and stored `[n, k]` when `trans_b`. `C` is `[m, n]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    b: &[f64],
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand too small");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|x| *x *= beta);
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the bounds assertion above guarantees every strided access
    // stays inside the three slices, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Dot product with four independent partial sums.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a4, b4) = (a[..n].chunks_exact(4), b[..n].chunks_exact(4));
    let (ra, rb) = (a4.remainder(), b4.remainder());
    let mut acc = [0.0; 4];
    for (x, y) in a4.zip(b4) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y = A x + beta * y` for row-major `A` of shape `[rows, cols]`.
pub(crate) fn matvec(a: &[f64], rows: usize, cols: usize, x: &[f64], y: &mut [f64], beta: f64) {
    assert!(a.len() >= rows * cols && x.len() >= cols && y.len() >= rows, "matvec operand too small");
    for (yi, row) in y[..rows].iter_mut().zip(a.chunks_exact(cols)) {
        let d = dot(row, &x[..cols]);
        *yi = if beta == 0.0 { d } else { beta * *yi + d };
    }
}

/// `y = A^T x + beta * y` for row-major `A` of shape `[rows, cols]`.
pub(crate) fn matvec_t(a: &[f64], rows: usize, cols: usize, x: &[f64], y: &mut [f64], beta: f64) {
    assert!(a.len() >= rows * cols && x.len() >= rows && y.len() >= cols, "matvec_t operand too small");
    let y = &mut y[..cols];
    if beta == 0.0 {
        y.fill(0.0);
    } else if beta != 1.0 {
        y.iter_mut().for_each(|v| *v *= beta);
    }
    for (&xi, row) in x[..rows].iter().zip(a.chunks_exact(cols)) {
        if xi != 0.0 {
            y.iter_mut().zip(row).for_each(|(v, r)| *v += xi * r);
        }
    }
}

/// Seeded, portable random source (ChaCha8).
///
/// Independent streams are derived from a `(seed, stream)` pair, so work that
/// is split across samples or epochs draws the same numbers regardless of
/// the order it runs in.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng { inner }
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.gen::<f64>()
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn int_in(&mut self, lo: usize, hi: usize) -> usize {
        self.inner.gen_range(lo..=hi)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.inner.gen::<f64>() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.gen()
    }

    /// I.i.d. zero-mean normal tensor.
    pub fn normal_tensor(&mut self, shape: &[usize], stddev: f64) -> Result<Tensor> {
        let len = check_shape(shape)?;
        if !(stddev > 0.0) {
            return shape_err(format!("stddev must be positive, got {stddev}"));
        }
        let data = (0..len).map(|_| stddev * self.normal()).collect();
        Tensor::from_vec(shape, data)
    }
}
