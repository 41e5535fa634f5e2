//! The full network: conv1, three residue blocks with optional spatial
//! attention, a projected BiLSTM over width columns, and a linear head.
//!
//! ```text
//! conv1 -> relu -> [SA] -> pool 3x3/2
//!   -> RB1 -> [SA] -> pool 2x2/2
//!   -> RB2 -> [SA] -> pool 2x1/(2,1)
//!   -> RB3 -> [SA] -> pool 2x1/(2,1)
//!   -> columns as frames -> BiLSTMP -> FC -> softmax
//! ```

pub mod checkpoint;
pub mod config;

pub use config::{ArchConfig, AttentionSite, FirstPool, LossKind, INPUT_HEIGHT};

use crate::attention::{AttentionCache, SpatialAttention};
use crate::error::{shape_err, Error, Result};
use crate::layers::activation::{relu_backward, relu_tensor, softmax};
use crate::layers::{join, BatchNorm, ConvLayer, Linear, Mode, Parameters};
use crate::parallel;
use crate::recurrent::{BiLstm, BiLstmCache};
use crate::residual::{ResidueBlock, ResidueCache};
use crate::tensor::{Rng, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ArchConfig,
    pub conv1: ConvLayer,
    /// Indexed by [`AttentionSite::index`].
    pub attention: [Option<SpatialAttention>; 4],
    pub blocks: [ResidueBlock; 3],
    /// Normalization after the second conv of each block.
    pub norms: [Option<BatchNorm>; 3],
    pub lstm: BiLstm,
    pub fc: Linear,
    /// Seed the parameters were drawn from.
    pub seed: u64,
    /// Optimizer steps taken.
    pub step: u64,
}

#[derive(Debug, Clone)]
struct PoolCache {
    in_shape: Vec<usize>,
    argmax: Vec<usize>,
}

/// Everything the backward pass needs from one batch forward.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Tensor>,
    pre1: Vec<Tensor>,
    attention: [Vec<AttentionCache>; 4],
    pools: [Vec<PoolCache>; 4],
    blocks: Vec<ResidueCache>,
    map_shapes: Vec<[usize; 3]>,
    lstm: Vec<BiLstmCache>,
    features: Vec<Tensor>,
}

impl ForwardCache {
    pub fn batch_len(&self) -> usize {
        self.inputs.len()
    }

    /// Attention caches at `site`, one per batch item (empty if absent).
    pub fn attention(&self, site: AttentionSite) -> &[AttentionCache] {
        &self.attention[site.index()]
    }
}

/// Maps `f` over the batch in fixed chunks, each with a private gradient
/// accumulator, then adds the accumulators into `grads` in chunk order.
fn accumulate<P, I, F>(n: usize, init: I, grads: &mut P, f: F) -> Result<Vec<Tensor>>
where
    P: Parameters + Send,
    I: Fn() -> P + Sync,
    F: Fn(usize, &mut P) -> Result<Tensor> + Sync,
{
    let (out, accs) = parallel::map_accumulate(n, init, f)?;
    for acc in &accs {
        add_params(grads, acc)?;
    }
    Ok(out)
}

fn add_params<P: Parameters>(dst: &mut P, src: &P) -> Result<()> {
    let mut s = Vec::new();
    src.collect("", &mut s);
    let mut d = Vec::new();
    dst.collect_mut("", &mut d);
    for ((_, a), (_, b)) in d.iter_mut().zip(&s) {
        a.add_assign(b)?;
    }
    Ok(())
}

/// `[H, W, C] -> [W, H*C]`, each frame listing rows top to bottom.
pub fn map_to_sequence(x: &Tensor) -> Result<Tensor> {
    let [h, w, c] = match x.shape() {
        &[h, w, c] => [h, w, c],
        s => return shape_err(format!("map_to_sequence expects [H, W, C], got {s:?}")),
    };
    let mut out = Vec::with_capacity(x.len());
    for col in 0..w {
        for row in 0..h {
            let o = (row * w + col) * c;
            out.extend_from_slice(&x.data()[o..o + c]);
        }
    }
    Tensor::from_vec(&[w, h * c], out)
}

fn sequence_to_map(g: &Tensor, shape: [usize; 3]) -> Result<Tensor> {
    let [h, w, c] = shape;
    if g.shape() != [w, h * c] {
        return shape_err(format!("sequence grad {:?} does not match map {shape:?}", g.shape()));
    }
    let mut out = vec![0.0; h * w * c];
    for col in 0..w {
        for row in 0..h {
            let src = (col * h + row) * c;
            let dst = (row * w + col) * c;
            out[dst..dst + c].copy_from_slice(&g.data()[src..src + c]);
        }
    }
    Tensor::from_vec(&shape, out)
}

impl Model {
    /// Fresh parameters: He-normal convs and head, zero-weight attention
    /// convs with the configured bias, LSTM per its own init.
    pub fn build(config: ArchConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(seed);
        let f = config.conv_filters;
        let res = config.use_residual;
        let conv1 = ConvLayer::he_normal(3, 1, f[0], &mut rng)?;
        let blocks = [
            ResidueBlock::he_normal(f[0], f[1], f[2], res, &mut rng)?,
            ResidueBlock::he_normal(f[2], f[3], f[4], res, &mut rng)?,
            ResidueBlock::he_normal(f[4], f[5], f[6], res, &mut rng)?,
        ];
        let lstm = BiLstm::init(config.frame_dim()?, config.lstm_hidden, config.lstm_proj, &mut rng)?;
        let fc = Linear::he_normal(2 * config.lstm_proj, config.num_classes(), &mut rng)?;
        let mut attention: [Option<SpatialAttention>; 4] = Default::default();
        for site in AttentionSite::ALL {
            if config.has_site(site) {
                let mut sa = SpatialAttention::new(config.attention_gate)?;
                sa.conv.bias.data_mut()[0] = config.attention_bias;
                attention[site.index()] = Some(sa);
            }
        }
        let mut norms: [Option<BatchNorm>; 3] = Default::default();
        for (b, n) in norms.iter_mut().enumerate() {
            if config.block_has_bn(b) {
                *n = Some(BatchNorm::new(f[2 * b + 2])?);
            }
        }
        Ok(Model { config, conv1, attention, blocks, norms, lstm, fc, seed, step: 0 })
    }

    /// Same structure, every learnable tensor zero. Used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        Model {
            config: self.config.clone(),
            conv1: self.conv1.zeros_like(),
            attention: self.attention.clone().map(|a| a.map(|a| a.zeros_like())),
            blocks: self.blocks.clone().map(|b| b.zeros_like()),
            norms: self.norms.clone().map(|n| n.map(|n| n.zeros_like())),
            lstm: self.lstm.zeros_like(),
            fc: self.fc.zeros_like(),
            seed: self.seed,
            step: 0,
        }
    }

    /// Non-learnable tensors that still belong in a checkpoint.
    pub fn collect_state<'a>(&'a self, out: &mut Vec<(String, &'a Tensor)>) {
        for (b, n) in self.norms.iter().enumerate() {
            if let Some(n) = n {
                n.collect_state(&format!("bn{}", b + 1), out);
            }
        }
    }

    pub fn collect_state_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Tensor)>) {
        for (b, n) in self.norms.iter_mut().enumerate() {
            if let Some(n) = n {
                n.collect_state_mut(&format!("bn{}", b + 1), out);
            }
        }
    }

    /// Learnable scalar count per top-level layer, in parameter order.
    pub fn param_breakdown(&self) -> Vec<(String, usize)> {
        let mut ps = Vec::new();
        self.collect("", &mut ps);
        let mut out: Vec<(String, usize)> = Vec::new();
        for (name, t) in ps {
            let layer = name.rsplit_once('.').map_or(name.as_str(), |(l, _)| l);
            // group at the depth of the top-level layer
            let layer = match layer.split_once('.') {
                Some((top, rest)) if top.starts_with("rb") || top == "lstm" => {
                    format!("{top}.{}", rest.split('.').next().unwrap_or(rest))
                }
                Some((top, _)) => top.to_string(),
                None => layer.to_string(),
            };
            match out.last_mut() {
                Some((l, n)) if *l == layer => *n += t.len(),
                _ => out.push((layer, t.len())),
            }
        }
        out
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        match x.shape() {
            &[h, w, 1] if h == self.config.input_height => self.config.frames_for_width(w).map(|_| ()),
            s => shape_err(format!("crop must be [{}, W, 1], got {s:?}", self.config.input_height)),
        }
    }

    fn run(
        &self,
        norms: &mut [Option<BatchNorm>; 3],
        xs: &[Tensor],
        mode: Mode,
    ) -> Result<(Vec<Tensor>, ForwardCache)> {
        let n = xs.len();
        if n == 0 {
            return shape_err("empty batch");
        }
        for x in xs {
            self.check_input(x)?;
        }
        let pre1 = parallel::map(n, |i| self.conv1.forward(&xs[i]))?;
        let mut cur: Vec<Tensor> = pre1.iter().map(relu_tensor).collect();
        let mut attention: [Vec<AttentionCache>; 4] = Default::default();
        let mut pools: [Vec<PoolCache>; 4] = Default::default();
        let mut blocks = Vec::with_capacity(3);

        for stage in 0..4 {
            if stage > 0 {
                let b = stage - 1;
                let (ys, c) = self.blocks[b].forward_batch(&cur, norms[b].as_mut(), mode)?;
                blocks.push(c);
                cur = ys;
            }
            if let Some(sa) = &self.attention[stage] {
                let r = parallel::map(n, |i| sa.forward(&cur[i]))?;
                let (ys, cs): (Vec<_>, Vec<_>) = r.into_iter().unzip();
                attention[stage] = cs;
                cur = ys;
            }
            let pool = self.config.pool(stage);
            let r = parallel::map(n, |i| pool.forward(&cur[i]))?;
            let mut next = Vec::with_capacity(n);
            for (x, (y, argmax)) in cur.iter().zip(r) {
                pools[stage].push(PoolCache { in_shape: x.shape().to_vec(), argmax });
                next.push(y);
            }
            cur = next;
        }

        let map_shapes: Vec<[usize; 3]> = cur.iter().map(|x| [x.dim(0), x.dim(1), x.dim(2)]).collect();
        let seqs = parallel::map(n, |i| map_to_sequence(&cur[i]))?;
        drop(cur);
        let r = parallel::map(n, |i| self.lstm.forward(&seqs[i]))?;
        let (features, lstm): (Vec<_>, Vec<_>) = r.into_iter().unzip();
        let logits = parallel::map(n, |i| self.fc.forward(&features[i]))?;
        let cache = ForwardCache { inputs: xs.to_vec(), pre1, attention, pools, blocks, map_shapes, lstm, features };
        Ok((logits, cache))
    }

    /// Batch forward to per-frame logits `[T_i, |L'|]`. Train mode uses
    /// batch statistics and updates running statistics.
    pub fn forward_batch(&mut self, xs: &[Tensor], mode: Mode) -> Result<(Vec<Tensor>, ForwardCache)> {
        let mut norms = std::mem::take(&mut self.norms);
        let r = self.run(&mut norms, xs, mode);
        self.norms = norms;
        r
    }

    /// Eval-mode forward that leaves the model untouched.
    pub fn forward_eval(&self, xs: &[Tensor]) -> Result<(Vec<Tensor>, ForwardCache)> {
        let mut norms = self.norms.clone();
        self.run(&mut norms, xs, Mode::Eval)
    }

    /// Eval-mode per-frame class probabilities for one crop.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let (mut logits, _) = self.forward_eval(std::slice::from_ref(x))?;
        Ok(softmax(&logits.pop().expect("one item")))
    }

    /// Backward from per-frame logit gradients. Parameter gradients are
    /// added into `grads`; returns gradients with respect to the inputs.
    pub fn backward(&self, cache: &ForwardCache, grad_logits: &[Tensor], grads: &mut Model) -> Result<Vec<Tensor>> {
        let n = cache.batch_len();
        if grad_logits.len() != n {
            return shape_err(format!("{} logit gradients for a batch of {n}", grad_logits.len()));
        }
        if cache.blocks.len() != 3 || cache.lstm.len() != n {
            return Err(Error::MissingCache("model forward cache is incomplete"));
        }
        let d_feat = accumulate(
            n,
            || self.fc.zeros_like(),
            &mut grads.fc,
            |i, acc| self.fc.backward_into(&cache.features[i], &grad_logits[i], acc),
        )?;
        let d_seq = accumulate(
            n,
            || self.lstm.zeros_like(),
            &mut grads.lstm,
            |i, acc| self.lstm.backward_into(&cache.lstm[i], &d_feat[i], acc),
        )?;
        let mut cur = parallel::map(n, |i| sequence_to_map(&d_seq[i], cache.map_shapes[i]))?;

        for stage in (0..4).rev() {
            let pool = self.config.pool(stage);
            let pc = &cache.pools[stage];
            cur = parallel::map(n, |i| pool.backward(&pc[i].in_shape, &pc[i].argmax, &cur[i]))?;
            if let Some(sa) = &self.attention[stage] {
                let ac = &cache.attention[stage];
                if ac.len() != n {
                    return Err(Error::MissingCache("attention cache"));
                }
                let g = grads.attention[stage].as_mut().ok_or(Error::MissingCache("attention gradient slot"))?;
                let gate = sa.gate;
                cur = accumulate(
                    n,
                    || SpatialAttention { conv: sa.conv.zeros_like(), gate },
                    g,
                    |i, acc| sa.backward_into(&ac[i], &cur[i], acc),
                )?;
            }
            if stage > 0 {
                let b = stage - 1;
                let norm = match (&self.norms[b], grads.norms[b].as_mut()) {
                    (Some(bn), Some(g)) => Some((bn, g)),
                    (None, None) => None,
                    _ => return Err(Error::MissingCache("batch norm gradient slot")),
                };
                cur = self.blocks[b].backward_batch(&cache.blocks[b], &cur, norm, &mut grads.blocks[b])?;
            }
        }
        let cur = parallel::map(n, |i| relu_backward(&cache.pre1[i], &cur[i]))?;
        accumulate(
            n,
            || self.conv1.zeros_like(),
            &mut grads.conv1,
            |i, acc| self.conv1.backward_into(&cache.inputs[i], &cur[i], acc),
        )
    }
}

impl Parameters for Model {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.conv1.collect(&join(prefix, "conv1"), out);
        for stage in 0..4 {
            if stage > 0 {
                self.blocks[stage - 1].collect(&join(prefix, &format!("rb{stage}")), out);
                if let Some(n) = &self.norms[stage - 1] {
                    n.collect(&join(prefix, &format!("bn{stage}")), out);
                }
            }
            if let Some(sa) = &self.attention[stage] {
                sa.collect(&join(prefix, &format!("sa_{}", AttentionSite::ALL[stage])), out);
            }
        }
        self.lstm.collect(&join(prefix, "lstm"), out);
        self.fc.collect(&join(prefix, "fc"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.conv1.collect_mut(&join(prefix, "conv1"), out);
        let mut blocks = self.blocks.iter_mut();
        let mut norms = self.norms.iter_mut();
        for (stage, sa) in self.attention.iter_mut().enumerate() {
            if stage > 0 {
                blocks.next().expect("3 blocks").collect_mut(&join(prefix, &format!("rb{stage}")), out);
                if let Some(n) = norms.next().expect("3 norms") {
                    n.collect_mut(&join(prefix, &format!("bn{stage}")), out);
                }
            }
            if let Some(sa) = sa {
                sa.collect_mut(&join(prefix, &format!("sa_{}", AttentionSite::ALL[stage])), out);
            }
        }
        self.lstm.collect_mut(&join(prefix, "lstm"), out);
        self.fc.collect_mut(&join(prefix, "fc"), out);
    }
}
