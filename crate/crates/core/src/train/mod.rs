//! Minibatch training with CTC or a pooled cross-entropy baseline.

pub mod adam;
pub mod eval;

use std::time::Instant;

use serde::Serialize;

pub use adam::Adam;
pub use eval::{evaluate, EvalReport};

use crate::ctc::{ctc_loss_logits, min_frames};
use crate::data::augment::augment;
use crate::data::Sample;
use crate::error::{shape_err, Error, Result};
use crate::layers::activation::softmax_in_place;
use crate::layers::Mode;
use crate::model::{LossKind, Model};
use crate::parallel;
use crate::tensor::{Rng, Tensor};

/// Pooled cross-entropy on logits `[T, K]` against one script class
/// (`1..K`). Frames get a softmax over the script logits only; their time
/// mean is scored. The blank column receives zero gradient.
pub fn ce_loss_logits(logits: &Tensor, class: usize) -> Result<(f64, Tensor)> {
    let (t, k) = match logits.shape() {
        &[t, k] if k >= 2 => (t, k),
        s => return shape_err(format!("logits must be [T, K>=2], got {s:?}")),
    };
    if !(1..k).contains(&class) {
        return Err(Error::LabelRange { label: class, lo: 1, hi: k - 1 });
    }
    let mut q = Vec::with_capacity(t * (k - 1));
    for row in logits.data().chunks_exact(k) {
        let mut r = row[1..].to_vec();
        softmax_in_place(&mut r);
        q.extend(r);
    }
    let y = class - 1;
    let p_bar = q.chunks_exact(k - 1).map(|r| r[y]).sum::<f64>() / t as f64;
    let mut grad = vec![0.0; t * k];
    for (ti, r) in q.chunks_exact(k - 1).enumerate() {
        let w = r[y] / (t as f64 * p_bar);
        for j in 0..k - 1 {
            let delta = if j == y { 1.0 } else { 0.0 };
            grad[ti * k + j + 1] = w * (r[j] - delta);
        }
    }
    Ok((-p_bar.ln(), Tensor::from_vec(&[t, k], grad)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub augment: bool,
    pub seed: u64,
    pub lr: f64,
    pub clip_norm: Option<f64>,
    /// Evaluate on the test split every this many epochs; 0 never.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            augment: true,
            seed: 0,
            lr: adam::DEFAULT_LR,
            clip_norm: Some(adam::DEFAULT_CLIP),
            eval_every: 1,
        }
    }
}

/// One JSON line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub word_acc: Option<f64>,
    pub per_script_acc: Option<Vec<f64>>,
    pub skipped: usize,
    pub steps: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub epochs: Vec<EpochRecord>,
    pub skipped: usize,
    pub final_eval: Option<EvalReport>,
}

fn check_scripts(model: &Model, samples: &[Sample]) -> Result<()> {
    let n = model.config.scripts.len();
    match samples.iter().find(|s| s.script >= n || s.labels.iter().any(|&l| l == 0 || l > n)) {
        Some(s) => Err(Error::Config(format!(
            "sample for script {} with labels {:?} does not fit a {n}-script model",
            s.script, s.labels
        ))),
        None => Ok(()),
    }
}

/// Whether a sample can contribute to the loss at its width.
fn usable(model: &Model, s: &Sample) -> bool {
    match model.config.frames_for_width(s.image.dim(1)) {
        Ok(t) => model.config.loss == LossKind::CrossEntropy || t >= min_frames(&s.labels),
        Err(_) => false,
    }
}

fn batch_loss(model: &Model, logits: &[Tensor], batch: &[&Sample]) -> Result<Vec<(f64, Tensor)>> {
    parallel::map(batch.len(), |i| match model.config.loss {
        LossKind::Ctc => ctc_loss_logits(&logits[i], &batch[i].labels),
        LossKind::CrossEntropy => ce_loss_logits(&logits[i], batch[i].script + 1),
    })
}

/// One optimizer step on `batch`; returns the summed sample loss.
pub fn train_step(model: &mut Model, opt: &mut Adam, batch: &[&Sample], images: &[Tensor]) -> Result<f64> {
    let (logits, cache) = model.forward_batch(images, Mode::Train)?;
    let losses = batch_loss(model, &logits, batch)?;
    let inv = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut grad_logits = Vec::with_capacity(batch.len());
    for (l, mut g) in losses {
        total += l;
        g.scale(inv);
        grad_logits.push(g);
    }
    let mut grads = model.zeros_like();
    model.backward(&cache, &grad_logits, &mut grads)?;
    opt.step(model, &grads)?;
    model.step += 1;
    Ok(total)
}

fn augment_stream(seed: u64, epoch: usize, index: usize) -> Rng {
    Rng::stream(seed, 1 << 62 | (epoch as u64) << 32 | index as u64)
}

/// Loss and bookkeeping for one pass over the training set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub skipped: usize,
    pub steps: usize,
}

/// Optimizer state carried across epochs.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub opt: Adam,
    pub epoch: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        if config.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        let mut opt = Adam::new(config.lr);
        opt.clip_norm = config.clip_norm;
        Ok(Trainer { config, opt, epoch: 0 })
    }

    /// One seeded shuffle of `train_set` in minibatches.
    pub fn run_epoch(&mut self, model: &mut Model, train_set: &[Sample]) -> Result<EpochStats> {
        check_scripts(model, train_set)?;
        self.epoch += 1;
        let (cfg, epoch) = (&self.config, self.epoch);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        Rng::stream(cfg.seed, epoch as u64).shuffle(&mut order);
        let (mut loss_sum, mut seen, mut skipped, mut steps) = (0.0, 0, 0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<usize> = chunk.iter().copied().filter(|&i| usable(model, &train_set[i])).collect();
            skipped += chunk.len() - batch.len();
            if batch.is_empty() {
                continue;
            }
            let images = parallel::map(batch.len(), |j| {
                let i = batch[j];
                let img = &train_set[i].image;
                Ok(if cfg.augment { augment(img, &mut augment_stream(cfg.seed, epoch, i)) } else { img.clone() })
            })?;
            let samples: Vec<&Sample> = batch.iter().map(|&i| &train_set[i]).collect();
            loss_sum += train_step(model, &mut self.opt, &samples, &images)?;
            seen += batch.len();
            steps += 1;
        }
        Ok(EpochStats { mean_loss: if seen == 0 { 0.0 } else { loss_sum / seen as f64 }, skipped, steps })
    }
}

/// Trains `model` in place. `on_epoch` sees each log record as soon as it
/// exists.
pub fn train(
    model: &mut Model,
    train_set: &[Sample],
    test_set: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainSummary> {
    let mut trainer = Trainer::new(cfg.clone())?;
    check_scripts(model, train_set)?;
    check_scripts(model, test_set)?;
    let mut records = Vec::new();
    let mut last_eval = None;
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let st = trainer.run_epoch(model, train_set)?;
        let due = cfg.eval_every > 0 && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs);
        let report = if due && !test_set.is_empty() { Some(evaluate(model, test_set)?) } else { None };
        let rec = EpochRecord {
            epoch,
            mean_loss: st.mean_loss,
            word_acc: report.as_ref().map(|r| r.accuracy),
            per_script_acc: report.as_ref().map(|r| r.per_script_accuracy.clone()),
            skipped: st.skipped,
            steps: st.steps,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&rec)?;
        records.push(rec);
        if report.is_some() {
            last_eval = report;
        }
    }
    let skipped = records.iter().map(|r| r.skipped).sum();
    Ok(TrainSummary { epochs: records, skipped, final_eval: last_eval })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ArchConfig;
    use crate::testutil::{numeric_grad, rel_err};

    fn scripts(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    #[test]
    fn ce_gradient_matches_finite_differences() {
        let mut rng = Rng::new(3);
        let logits = rng.normal_tensor(&[5, 4], 1.0).unwrap();
        let (_, g) = ce_loss_logits(&logits, 2).unwrap();
        let num = numeric_grad(&logits, |x| ce_loss_logits(x, 2).unwrap().0);
        assert!(rel_err(&g, &num) < 1e-7);
        for t in 0..5 {
            assert_eq!(g.data()[t * 4], 0.0);
        }
    }

    #[test]
    fn ce_value_is_pooled_probability() {
        // uniform script logits: p_bar = 1/3 whatever the blank does
        let mut logits = Tensor::zeros(&[3, 4]).unwrap();
        logits.data_mut()[0] = 7.0;
        let (l, _) = ce_loss_logits(&logits, 3).unwrap();
        assert!((l - 3f64.ln()).abs() < 1e-12);
        assert!(matches!(ce_loss_logits(&logits, 0), Err(Error::LabelRange { .. })));
        assert!(matches!(ce_loss_logits(&logits, 4), Err(Error::LabelRange { .. })));
    }

    fn toy_set(n: usize, seed: u64) -> Vec<Sample> {
        let mut rng = Rng::new(seed);
        (0..n)
            .map(|i| {
                let script = i % 2;
                let data = (0..24 * 20).map(|_| rng.uniform(0.0, 1.0)).collect();
                Sample { image: Tensor::from_vec(&[24, 20, 1], data).unwrap(), labels: vec![script + 1], script }
            })
            .collect()
    }

    #[test]
    fn one_epoch_takes_ceil_n_over_b_steps() {
        let mut m = Model::build(ArchConfig::tiny(scripts(2)), 1).unwrap();
        let set = toy_set(8, 1);
        let cfg = TrainConfig { epochs: 1, batch_size: 4, eval_every: 0, ..TrainConfig::default() };
        let s = train(&mut m, &set, &[], &cfg, |_| Ok(())).unwrap();
        assert_eq!(s.epochs[0].steps, 2);
        assert_eq!(m.step, 2);
        assert_eq!(s.skipped, 0);
    }

    #[test]
    fn infeasible_samples_are_counted() {
        let mut m = Model::build(ArchConfig::tiny(scripts(2)), 1).unwrap();
        let mut set = toy_set(6, 2);
        // width 20 gives 4 frames; five equal labels need 9
        set[1].labels = vec![2; 5];
        set[4].labels = vec![1; 5];
        let cfg = TrainConfig { epochs: 2, batch_size: 3, eval_every: 0, ..TrainConfig::default() };
        let s = train(&mut m, &set, &[], &cfg, |_| Ok(())).unwrap();
        assert_eq!(s.epochs[0].skipped, 2);
        assert_eq!(s.skipped, 4);
        assert_eq!(m.step, 4);
    }

    #[test]
    fn same_seed_same_model() {
        let run = |threads: usize| {
            parallel::set_threads(threads);
            let mut m = Model::build(ArchConfig::tiny(scripts(2)), 5).unwrap();
            let cfg = TrainConfig { epochs: 2, batch_size: 3, eval_every: 0, seed: 9, ..TrainConfig::default() };
            train(&mut m, &toy_set(7, 3), &[], &cfg, |_| Ok(())).unwrap();
            parallel::set_threads(1);
            m
        };
        let a = run(1);
        assert_eq!(a, run(1));
        assert_eq!(a, run(3));
    }

    /// Bright images are script 1, dark ones script 0.
    fn bright_dark(n: usize) -> Vec<Sample> {
        let mut rng = Rng::new(4);
        (0..n)
            .map(|i| {
                let script = i % 2;
                let base = if script == 1 { 0.8 } else { 0.2 };
                let data = (0..24 * 24).map(|_| base + 0.1 * rng.normal()).collect();
                Sample { image: Tensor::from_vec(&[24, 24, 1], data).unwrap(), labels: vec![script + 1], script }
            })
            .collect()
    }

    fn toy_run(loss: LossKind, epochs: usize) -> TrainSummary {
        let set = bright_dark(16);
        let mut arch = ArchConfig::tiny(scripts(2));
        arch.lstm_hidden = 8;
        arch.loss = loss;
        let mut m = Model::build(arch, 2).unwrap();
        let cfg = TrainConfig {
            epochs,
            batch_size: 4,
            augment: false,
            lr: 0.01,
            eval_every: epochs,
            ..TrainConfig::default()
        };
        train(&mut m, &set, &set, &cfg, |_| Ok(())).unwrap()
    }

    #[test]
    fn ctc_loss_goes_down_on_a_learnable_toy() {
        let s = toy_run(LossKind::Ctc, 8);
        let first = s.epochs[0].mean_loss;
        let last = s.epochs.last().unwrap().mean_loss;
        assert!(last < 0.7 * first, "{first} -> {last}");
    }

    #[test]
    fn ce_learns_a_learnable_toy() {
        let s = toy_run(LossKind::CrossEntropy, 8);
        assert!(s.epochs.last().unwrap().mean_loss < 0.2, "{:?}", s.epochs);
        assert_eq!(s.final_eval.unwrap().accuracy, 1.0);
    }

    #[test]
    fn mismatched_scripts_are_rejected() {
        let mut m = Model::build(ArchConfig::tiny(scripts(2)), 1).unwrap();
        let mut set = toy_set(2, 1);
        set[0].script = 2;
        let r = train(&mut m, &set, &[], &TrainConfig::default(), |_| Ok(()));
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
