//! LSTM with a recurrent projection layer, and its bidirectional wrapper.
//!
//! Per step, with gate blocks stacked in the order (input, forget,
//! cell-candidate, output):
//!
//! ```text
//! a   = W_x x_t + W_r r_{t-1} + b
//! i, f, o = sigmoid(a_i), sigmoid(a_f), sigmoid(a_o);  g = tanh(a_g)
//! c_t = f * c_{t-1} + i * g
//! h_t = o * tanh(c_t)
//! r_t = P h_t
//! ```
//!
//! Only the projected state `r_t` is recurrent and only `r_t` is emitted.

use crate::error::{shape_err, Error, Result};
use crate::layers::activation::sigmoid;
use crate::layers::{join, Parameters};
use crate::tensor::{gemm, matvec, matvec_t, Rng, Tensor};

pub const LSTM_INIT_STDDEV: f64 = 0.05;
pub const FORGET_BIAS_INIT: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmpCell {
    /// `[4h, d_in]`
    pub w_x: Tensor,
    /// `[4h, p]`
    pub w_r: Tensor,
    /// `[4h]`
    pub bias: Tensor,
    /// `[p, h]`
    pub proj: Tensor,
}

#[derive(Debug, Clone)]
pub struct LstmpCache {
    frames: Tensor,
    /// post-activation gates, `[T, 4h]`
    gates: Vec<f64>,
    cells: Vec<f64>,
    tanh_cells: Vec<f64>,
    hidden: Vec<f64>,
    outputs: Vec<f64>,
}

impl LstmpCell {
    pub fn new(d_in: usize, hidden: usize, proj: usize) -> Result<Self> {
        Ok(LstmpCell {
            w_x: Tensor::zeros(&[4 * hidden, d_in])?,
            w_r: Tensor::zeros(&[4 * hidden, proj])?,
            bias: Tensor::zeros(&[4 * hidden])?,
            proj: Tensor::zeros(&[proj, hidden])?,
        })
    }

    /// Scaled-normal weights, forget-gate bias 1, other biases 0.
    pub fn init(d_in: usize, hidden: usize, proj: usize, rng: &mut Rng) -> Result<Self> {
        let mut cell = LstmpCell {
            w_x: rng.normal_tensor(&[4 * hidden, d_in], LSTM_INIT_STDDEV)?,
            w_r: rng.normal_tensor(&[4 * hidden, proj], LSTM_INIT_STDDEV)?,
            bias: Tensor::zeros(&[4 * hidden])?,
            proj: rng.normal_tensor(&[proj, hidden], LSTM_INIT_STDDEV)?,
        };
        cell.bias.data_mut()[hidden..2 * hidden].iter_mut().for_each(|b| *b = FORGET_BIAS_INIT);
        Ok(cell)
    }

    pub fn d_in(&self) -> usize {
        self.w_x.dim(1)
    }

    pub fn hidden(&self) -> usize {
        self.proj.dim(1)
    }

    pub fn proj_dim(&self) -> usize {
        self.proj.dim(0)
    }

    pub fn zeros_like(&self) -> Self {
        LstmpCell {
            w_x: self.w_x.zeros_like(),
            w_r: self.w_r.zeros_like(),
            bias: self.bias.zeros_like(),
            proj: self.proj.zeros_like(),
        }
    }

    fn add_assign(&mut self, o: &LstmpCell) -> Result<()> {
        self.w_x.add_assign(&o.w_x)?;
        self.w_r.add_assign(&o.w_r)?;
        self.bias.add_assign(&o.bias)?;
        self.proj.add_assign(&o.proj)
    }

    /// Gate activations and new state for one step, from pre-activations `a`.
    fn cell_update(a: &mut [f64], c_prev: &[f64], c: &mut [f64], tc: &mut [f64], h_out: &mut [f64]) {
        let h = c.len();
        for j in 0..h {
            let i = sigmoid(a[j]);
            let f = sigmoid(a[h + j]);
            let g = a[2 * h + j].tanh();
            let o = sigmoid(a[3 * h + j]);
            a[j] = i;
            a[h + j] = f;
            a[2 * h + j] = g;
            a[3 * h + j] = o;
            c[j] = f * c_prev[j] + i * g;
            tc[j] = c[j].tanh();
            h_out[j] = o * tc[j];
        }
    }

    /// One step: `(x_t, r_{t-1}, c_{t-1}) -> (r_t, c_t)`.
    pub fn step(&self, x: &Tensor, r_prev: &Tensor, c_prev: &Tensor) -> Result<(Tensor, Tensor)> {
        let (d, h, p) = (self.d_in(), self.hidden(), self.proj_dim());
        if x.len() != d || r_prev.len() != p || c_prev.len() != h {
            return shape_err(format!(
                "lstmp step expects x[{d}], r[{p}], c[{h}]; got {:?}, {:?}, {:?}",
                x.shape(),
                r_prev.shape(),
                c_prev.shape()
            ));
        }
        let mut a = self.bias.data().to_vec();
        gemm(false, true, 1, d, 4 * h, x.data(), self.w_x.data(), &mut a, 1.0);
        gemm(false, true, 1, p, 4 * h, r_prev.data(), self.w_r.data(), &mut a, 1.0);
        let mut c = vec![0.0; h];
        let mut tc = vec![0.0; h];
        let mut hid = vec![0.0; h];
        Self::cell_update(&mut a, c_prev.data(), &mut c, &mut tc, &mut hid);
        let mut r = vec![0.0; p];
        gemm(false, true, 1, h, p, &hid, self.proj.data(), &mut r, 0.0);
        Ok((Tensor::from_vec(&[p], r)?, Tensor::from_vec(&[h], c)?))
    }

    /// Runs the whole sequence from zero state: `[T, d_in] -> [T, p]`.
    pub fn forward_seq(&self, frames: &Tensor) -> Result<(Tensor, LstmpCache)> {
        let (d, h, p) = (self.d_in(), self.hidden(), self.proj_dim());
        let t_len = match frames.shape() {
            [t, dd] if *dd == d => *t,
            s => return shape_err(format!("lstmp expects [T, {d}], got {s:?}")),
        };
        let g4 = 4 * h;
        let mut gates = Vec::with_capacity(t_len * g4);
        for _ in 0..t_len {
            gates.extend_from_slice(self.bias.data());
        }
        gemm(false, true, t_len, d, g4, frames.data(), self.w_x.data(), &mut gates, 1.0);

        let mut cells = vec![0.0; t_len * h];
        let mut tanh_cells = vec![0.0; t_len * h];
        let mut hidden = vec![0.0; t_len * h];
        let mut outputs = vec![0.0; t_len * p];
        let zero_c = vec![0.0; h];
        for t in 0..t_len {
            if t > 0 {
                matvec(self.w_r.data(), g4, p, &outputs[(t - 1) * p..t * p], &mut gates[t * g4..(t + 1) * g4], 1.0);
            }
            let (c_before, c_rest) = cells.split_at_mut(t * h);
            let c_prev: &[f64] = if t == 0 { &zero_c } else { &c_before[(t - 1) * h..] };
            Self::cell_update(
                &mut gates[t * g4..(t + 1) * g4],
                c_prev,
                &mut c_rest[..h],
                &mut tanh_cells[t * h..(t + 1) * h],
                &mut hidden[t * h..(t + 1) * h],
            );
            matvec(self.proj.data(), p, h, &hidden[t * h..(t + 1) * h], &mut outputs[t * p..(t + 1) * p], 0.0);
        }
        let out = Tensor::from_vec(&[t_len, p], outputs.clone())?;
        Ok((out, LstmpCache { frames: frames.clone(), gates, cells, tanh_cells, hidden, outputs }))
    }

    /// Backpropagation through time. Parameter gradients accumulate into
    /// `grads`; returns the gradient with respect to the input frames.
    pub fn backward_seq(&self, cache: &LstmpCache, grad_out: &Tensor, grads: &mut LstmpCell) -> Result<Tensor> {
        let (d, h, p) = (self.d_in(), self.hidden(), self.proj_dim());
        let t_len = cache.frames.dim(0);
        if grad_out.shape() != [t_len, p] {
            return shape_err(format!("lstmp grad_out {:?}, expected [{t_len}, {p}]", grad_out.shape()));
        }
        let g4 = 4 * h;
        let mut d_pre = vec![0.0; t_len * g4];
        let mut d_r_total = vec![0.0; t_len * p];
        let mut dr_next = vec![0.0; p];
        let mut dc_next = vec![0.0; h];
        let mut dh = vec![0.0; h];

        for t in (0..t_len).rev() {
            let dr = &mut d_r_total[t * p..(t + 1) * p];
            for ((o, g), n) in dr.iter_mut().zip(&grad_out.data()[t * p..]).zip(&dr_next) {
                *o = g + n;
            }
            matvec_t(self.proj.data(), p, h, dr, &mut dh, 0.0);

            let gate = &cache.gates[t * g4..(t + 1) * g4];
            let tc = &cache.tanh_cells[t * h..(t + 1) * h];
            let da = &mut d_pre[t * g4..(t + 1) * g4];
            for j in 0..h {
                let (i, f, g, o) = (gate[j], gate[h + j], gate[2 * h + j], gate[3 * h + j]);
                let c_prev = if t == 0 { 0.0 } else { cache.cells[(t - 1) * h + j] };
                let d_o = dh[j] * tc[j];
                let dc = dc_next[j] + dh[j] * o * (1.0 - tc[j] * tc[j]);
                da[j] = dc * g * i * (1.0 - i);
                da[h + j] = dc * c_prev * f * (1.0 - f);
                da[2 * h + j] = dc * i * (1.0 - g * g);
                da[3 * h + j] = d_o * o * (1.0 - o);
                dc_next[j] = dc * f;
            }
            matvec_t(self.w_r.data(), g4, p, da, &mut dr_next, 0.0);
        }

        // parameter gradients in bulk
        gemm(true, false, g4, t_len, d, &d_pre, cache.frames.data(), grads.w_x.data_mut(), 1.0);
        if t_len > 1 {
            gemm(true, false, g4, t_len - 1, p, &d_pre[g4..], &cache.outputs, grads.w_r.data_mut(), 1.0);
        }
        for row in d_pre.chunks_exact(g4) {
            grads.bias.data_mut().iter_mut().zip(row).for_each(|(b, x)| *b += x);
        }
        gemm(true, false, p, t_len, h, &d_r_total, &cache.hidden, grads.proj.data_mut(), 1.0);

        let mut dx = vec![0.0; t_len * d];
        gemm(false, false, t_len, g4, d, &d_pre, self.w_x.data(), &mut dx, 0.0);
        Tensor::from_vec(&[t_len, d], dx)
    }
}

impl Parameters for LstmpCell {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((join(prefix, "w_x"), &self.w_x));
        out.push((join(prefix, "w_r"), &self.w_r));
        out.push((join(prefix, "bias"), &self.bias));
        out.push((join(prefix, "proj"), &self.proj));
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((join(prefix, "w_x"), &mut self.w_x));
        out.push((join(prefix, "w_r"), &mut self.w_r));
        out.push((join(prefix, "bias"), &mut self.bias));
        out.push((join(prefix, "proj"), &mut self.proj));
    }
}

/// Forward and backward [`LstmpCell`]s; frame `t` of the output is
/// `concat(forward r_t, backward r_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm {
    pub fwd: LstmpCell,
    pub bwd: LstmpCell,
}

#[derive(Debug, Clone)]
pub struct BiLstmCache {
    fwd: LstmpCache,
    bwd: LstmpCache,
}

fn reverse_rows(t: &Tensor) -> Tensor {
    let cols = t.dim(1);
    let data: Vec<f64> = t.data().chunks_exact(cols).rev().flatten().copied().collect();
    Tensor::from_vec(t.shape(), data).expect("same shape")
}

impl BiLstm {
    pub fn init(d_in: usize, hidden: usize, proj: usize, rng: &mut Rng) -> Result<Self> {
        Ok(BiLstm { fwd: LstmpCell::init(d_in, hidden, proj, rng)?, bwd: LstmpCell::init(d_in, hidden, proj, rng)? })
    }

    pub fn out_dim(&self) -> usize {
        self.fwd.proj_dim() + self.bwd.proj_dim()
    }

    pub fn zeros_like(&self) -> Self {
        BiLstm { fwd: self.fwd.zeros_like(), bwd: self.bwd.zeros_like() }
    }

    pub fn add_assign(&mut self, o: &BiLstm) -> Result<()> {
        self.fwd.add_assign(&o.fwd)?;
        self.bwd.add_assign(&o.bwd)
    }

    /// `[T, d_in] -> [T, 2p]`, both directions from zero state.
    pub fn forward(&self, frames: &Tensor) -> Result<(Tensor, BiLstmCache)> {
        if frames.rank() != 2 {
            return shape_err(format!("bilstm expects [T, d], got {:?}", frames.shape()));
        }
        let t_len = frames.dim(0);
        if t_len == 0 {
            return Err(Error::EmptySequence);
        }
        let (rf, cf) = self.fwd.forward_seq(frames)?;
        let (rb, cb) = self.bwd.forward_seq(&reverse_rows(frames))?;
        let rb = reverse_rows(&rb);
        let (pf, pb) = (self.fwd.proj_dim(), self.bwd.proj_dim());
        let mut out = Vec::with_capacity(t_len * (pf + pb));
        for (a, b) in rf.data().chunks_exact(pf).zip(rb.data().chunks_exact(pb)) {
            out.extend_from_slice(a);
            out.extend_from_slice(b);
        }
        Ok((Tensor::from_vec(&[t_len, pf + pb], out)?, BiLstmCache { fwd: cf, bwd: cb }))
    }

    pub fn backward_into(&self, cache: &BiLstmCache, grad_out: &Tensor, grads: &mut BiLstm) -> Result<Tensor> {
        let (pf, pb) = (self.fwd.proj_dim(), self.bwd.proj_dim());
        let t_len = cache.fwd.frames.dim(0);
        if grad_out.shape() != [t_len, pf + pb] {
            return shape_err(format!("bilstm grad_out {:?}", grad_out.shape()));
        }
        let mut gf = Vec::with_capacity(t_len * pf);
        let mut gb = Vec::with_capacity(t_len * pb);
        for row in grad_out.data().chunks_exact(pf + pb) {
            gf.extend_from_slice(&row[..pf]);
            gb.extend_from_slice(&row[pf..]);
        }
        let gf = Tensor::from_vec(&[t_len, pf], gf)?;
        let gb = reverse_rows(&Tensor::from_vec(&[t_len, pb], gb)?);
        let mut dx = self.fwd.backward_seq(&cache.fwd, &gf, &mut grads.fwd)?;
        let dxb = reverse_rows(&self.bwd.backward_seq(&cache.bwd, &gb, &mut grads.bwd)?);
        dx.add_assign(&dxb)?;
        Ok(dx)
    }

    pub fn backward(&self, cache: &BiLstmCache, grad_out: &Tensor) -> Result<(Tensor, BiLstm)> {
        let mut grads = self.zeros_like();
        let dx = self.backward_into(cache, grad_out, &mut grads)?;
        Ok((dx, grads))
    }
}

impl Parameters for BiLstm {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.fwd.collect(&join(prefix, "fwd"), out);
        self.bwd.collect(&join(prefix, "bwd"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.fwd.collect_mut(&join(prefix, "fwd"), out);
        self.bwd.collect_mut(&join(prefix, "bwd"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{numeric_grad, probe_loss, rel_err};

    fn t1(v: f64) -> Tensor {
        Tensor::from_vec(&[1], vec![v]).unwrap()
    }

    #[test]
    fn zero_weights_step() {
        let cell = LstmpCell::new(3, 4, 2).unwrap();
        let c_prev = Tensor::from_vec(&[4], vec![1.0, -2.0, 0.5, 0.0]).unwrap();
        let x = Rng::new(1).normal_tensor(&[3], 1.0).unwrap();
        let (r, c) = cell.step(&x, &Tensor::zeros(&[2]).unwrap(), &c_prev).unwrap();
        assert_eq!(r.data(), &[0.0, 0.0]);
        for (ci, cp) in c.data().iter().zip(c_prev.data()) {
            assert_eq!(*ci, 0.5 * cp);
        }
    }

    #[test]
    fn saturated_gates_kill_state() {
        let mut rng = Rng::new(2);
        let mut cell = LstmpCell::init(2, 3, 2, &mut rng).unwrap();
        let h = 3;
        for j in 0..h {
            cell.bias.data_mut()[j] = -50.0;
            cell.bias.data_mut()[h + j] = -50.0;
            cell.bias.data_mut()[3 * h + j] = -50.0;
        }
        let (r, c) = cell
            .step(&Tensor::zeros(&[2]).unwrap(), &Tensor::zeros(&[2]).unwrap(), &Tensor::zeros(&[3]).unwrap())
            .unwrap();
        assert!(c.max_abs() < 1e-12);
        assert!(r.max_abs() < 1e-12);
    }

    #[test]
    fn scalar_hand_trace() {
        let cell = LstmpCell {
            w_x: Tensor::from_vec(&[4, 1], vec![0.5, -0.3, 0.8, 1.2]).unwrap(),
            w_r: Tensor::from_vec(&[4, 1], vec![0.1, 0.2, -0.4, 0.3]).unwrap(),
            bias: Tensor::from_vec(&[4], vec![0.05, 1.0, -0.1, 0.2]).unwrap(),
            proj: Tensor::from_vec(&[1, 1], vec![0.7]).unwrap(),
        };
        let (x, r0, c0) = (0.9, -0.4, 0.6);
        let s = |z: f64| 1.0 / (1.0 + (-z).exp());
        let i = s(0.5 * x + 0.1 * r0 + 0.05);
        let f = s(-0.3 * x + 0.2 * r0 + 1.0);
        let g = (0.8 * x - 0.4 * r0 - 0.1).tanh();
        let o = s(1.2 * x + 0.3 * r0 + 0.2);
        let c = f * c0 + i * g;
        let r = 0.7 * o * c.tanh();
        let (rt, ct) = cell.step(&t1(x), &t1(r0), &t1(c0)).unwrap();
        assert!((ct.data()[0] - c).abs() < 1e-12);
        assert!((rt.data()[0] - r).abs() < 1e-12);
    }

    #[test]
    fn sequence_matches_repeated_steps() {
        let mut rng = Rng::new(3);
        let cell = LstmpCell::init(4, 5, 3, &mut rng).unwrap();
        let frames = rng.normal_tensor(&[6, 4], 1.0).unwrap();
        let (out, _) = cell.forward_seq(&frames).unwrap();
        let mut r = Tensor::zeros(&[3]).unwrap();
        let mut c = Tensor::zeros(&[5]).unwrap();
        for t in 0..6 {
            let x = Tensor::from_vec(&[4], frames.data()[t * 4..(t + 1) * 4].to_vec()).unwrap();
            let (r2, c2) = cell.step(&x, &r, &c).unwrap();
            r = r2;
            c = c2;
            for (a, b) in out.data()[t * 3..(t + 1) * 3].iter().zip(r.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_frame_bilstm() {
        let mut rng = Rng::new(4);
        let net = BiLstm::init(3, 4, 2, &mut rng).unwrap();
        let x = rng.normal_tensor(&[1, 3], 1.0).unwrap();
        let (out, _) = net.forward(&x).unwrap();
        let z = Tensor::zeros(&[2]).unwrap();
        let zc = Tensor::zeros(&[4]).unwrap();
        let xf = x.clone().reshape(&[3]).unwrap();
        let (rf, _) = net.fwd.step(&xf, &z, &zc).unwrap();
        let (rb, _) = net.bwd.step(&xf, &z, &zc).unwrap();
        // the sequence path uses GEMM, the step path a matvec; rounding differs
        for (a, b) in out.data().iter().zip([rf.data(), rb.data()].concat()) {
            assert!((a - b).abs() <= 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn palindrome_symmetry() {
        let mut rng = Rng::new(5);
        let cell = LstmpCell::init(2, 3, 2, &mut rng).unwrap();
        let net = BiLstm { fwd: cell.clone(), bwd: cell };
        let a = rng.normal_tensor(&[2], 1.0).unwrap();
        let b = rng.normal_tensor(&[2], 1.0).unwrap();
        let frames = Tensor::from_vec(&[3, 2], [a.data(), b.data(), a.data()].concat()).unwrap();
        let (out, _) = net.forward(&frames).unwrap();
        // out[t] = (f_t, b_t); palindrome + shared weights: b_t = f_{T-1-t}
        for t in 0..3 {
            let row = &out.data()[t * 4..(t + 1) * 4];
            let mirror = &out.data()[(2 - t) * 4..(3 - t) * 4];
            assert!((row[0] - mirror[2]).abs() < 1e-12 && (row[1] - mirror[3]).abs() < 1e-12);
        }
    }

    #[test]
    fn reversal_with_swapped_cells() {
        let mut rng = Rng::new(6);
        let net = BiLstm::init(3, 4, 2, &mut rng).unwrap();
        let swapped = BiLstm { fwd: net.bwd.clone(), bwd: net.fwd.clone() };
        let frames = rng.normal_tensor(&[5, 3], 1.0).unwrap();
        let (out, _) = net.forward(&frames).unwrap();
        let (rev, _) = swapped.forward(&reverse_rows(&frames)).unwrap();
        for t in 0..5 {
            let a = &out.data()[t * 4..(t + 1) * 4];
            let b = &rev.data()[(4 - t) * 4..(5 - t) * 4];
            assert!((a[0] - b[2]).abs() < 1e-12 && (a[1] - b[3]).abs() < 1e-12);
            assert!((a[2] - b[0]).abs() < 1e-12 && (a[3] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weights_give_zero_output_and_empty_is_error() {
        let net = BiLstm { fwd: LstmpCell::new(3, 4, 2).unwrap(), bwd: LstmpCell::new(3, 4, 2).unwrap() };
        let x = Rng::new(7).normal_tensor(&[4, 3], 1.0).unwrap();
        assert_eq!(net.forward(&x).unwrap().0.max_abs(), 0.0);
        assert!(Tensor::zeros(&[0, 3]).is_err());
    }

    #[test]
    fn projection_bounds_output() {
        let mut rng = Rng::new(8);
        let net = BiLstm::init(3, 6, 3, &mut rng).unwrap();
        let x = rng.normal_tensor(&[7, 3], 5.0).unwrap();
        let (out, _) = net.forward(&x).unwrap();
        let bound = |p: &Tensor| {
            p.data().chunks(p.dim(1)).map(|row| row.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
        };
        let b = bound(&net.fwd.proj).max(bound(&net.bwd.proj));
        assert!(out.max_abs() <= b);
    }

    fn fd_all(net: &BiLstm, frames: &Tensor, w: &Tensor) -> f64 {
        let (_, cache) = net.forward(frames).unwrap();
        let (dx, grads) = net.backward(&cache, w).unwrap();
        let f = |n: &BiLstm, x: &Tensor| probe_loss(&n.forward(x).unwrap().0, w);
        let mut worst = rel_err(&dx, &numeric_grad(frames, |x| f(net, x)));
        let mut analytic = Vec::new();
        grads.collect("", &mut analytic);
        for k in 0..analytic.len() {
            let mut base = Vec::new();
            net.collect("", &mut base);
            let mut probe = net.clone();
            let num = numeric_grad(base[k].1, |t| {
                let mut slots = Vec::new();
                probe.collect_mut("", &mut slots);
                *slots[k].1 = t.clone();
                drop(slots);
                f(&probe, frames)
            });
            worst = worst.max(rel_err(analytic[k].1, &num));
        }
        worst
    }

    #[test]
    fn bptt_matches_finite_differences() {
        let mut rng = Rng::new(9);
        let mut net = BiLstm::init(5, 6, 3, &mut rng).unwrap();
        // larger weights so gates leave their linear regime
        for (_, t) in {
            let mut v = Vec::new();
            net.collect_mut("", &mut v);
            v
        } {
            *t = t.map(|x| x * 8.0);
        }
        let frames = rng.normal_tensor(&[4, 5], 1.0).unwrap();
        let w = rng.normal_tensor(&[4, 6], 1.0).unwrap();
        let e = fd_all(&net, &frames, &w);
        assert!(e < 1e-5, "bptt rel err {e:e}");

        let one = rng.normal_tensor(&[1, 5], 1.0).unwrap();
        let w1 = rng.normal_tensor(&[1, 6], 1.0).unwrap();
        let e = fd_all(&net, &one, &w1);
        assert!(e < 1e-5, "single-step rel err {e:e}");
    }

    #[test]
    fn zero_grad_out() {
        let mut rng = Rng::new(10);
        let net = BiLstm::init(3, 4, 2, &mut rng).unwrap();
        let x = rng.normal_tensor(&[3, 3], 1.0).unwrap();
        let (_, cache) = net.forward(&x).unwrap();
        let (dx, g) = net.backward(&cache, &Tensor::zeros(&[3, 4]).unwrap()).unwrap();
        assert_eq!(dx.max_abs(), 0.0);
        let mut v = Vec::new();
        g.collect("", &mut v);
        assert!(v.iter().all(|(_, t)| t.max_abs() == 0.0));
    }
}
