//! Word-level evaluation by majority vote.

use serde::Serialize;

use crate::ctc::{ctc_loss_logits, greedy_decode, majority_vote, min_frames, BLANK};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::layers::activation::softmax;
use crate::model::Model;
use crate::parallel;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub scripts: Vec<String>,
    pub count: usize,
    pub accuracy: f64,
    pub per_script_accuracy: Vec<f64>,
    /// `confusion[truth][predicted]` over crops that got a prediction.
    pub confusion: Vec<Vec<usize>>,
    /// Crops per truth script whose frames were all blank.
    pub unassigned: Vec<usize>,
    /// Mean CTC loss over crops wide enough for their labels.
    pub mean_ctc_loss: f64,
    pub ctc_infeasible: usize,
    /// Share of frames whose argmax is blank.
    pub blank_rate: f64,
}

/// Per-crop outcome of an eval-mode forward.
#[derive(Debug, Clone, PartialEq)]
pub struct CropResult {
    pub predicted: Option<usize>,
    pub ctc_loss: Option<f64>,
    pub frames: usize,
    pub blank_frames: usize,
}

/// Eval-mode decision for one crop.
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    /// Zero-based script index, `None` when every frame is blank.
    pub script: Option<usize>,
    /// Non-blank argmax frames per script.
    pub counts: Vec<usize>,
    /// Per-frame argmax class.
    pub path: Vec<usize>,
    pub logits: Tensor,
}

impl Classification {
    /// One character per frame: `-` for blank, else the class number.
    pub fn path_string(&self) -> String {
        self.path
            .iter()
            .map(|&c| if c == BLANK { '-' } else { char::from_digit(c as u32, 36).unwrap_or('?') })
            .collect()
    }
}

pub fn classify(model: &Model, image: &Tensor) -> Result<Classification> {
    let (mut logits, _) = model.forward_eval(std::slice::from_ref(image))?;
    let logits = logits.pop().expect("one item");
    let y = softmax(&logits);
    let vote = majority_vote(&y)?;
    let (path, _) = greedy_decode(&y)?;
    Ok(Classification { script: vote.script.map(|c| c - 1), counts: vote.counts, path, logits })
}

pub fn evaluate_crop(model: &Model, sample: &Sample) -> Result<CropResult> {
    let c = classify(model, &sample.image)?;
    let frames = c.path.len();
    let blank_frames = c.path.iter().filter(|&&p| p == BLANK).count();
    let ctc_loss =
        if frames >= min_frames(&sample.labels) { Some(ctc_loss_logits(&c.logits, &sample.labels)?.0) } else { None };
    Ok(CropResult { predicted: c.script, ctc_loss, frames, blank_frames })
}

/// Scores every sample in eval mode. Samples must carry zero-based script
/// indices below the model's script count.
pub fn evaluate(model: &Model, samples: &[Sample]) -> Result<EvalReport> {
    let n = model.config.scripts.len();
    if let Some(s) = samples.iter().find(|s| s.script >= n) {
        return Err(Error::Config(format!("sample script {} outside a {n}-script model", s.script)));
    }
    let results = parallel::map(samples.len(), |i| evaluate_crop(model, &samples[i]))?;
    Ok(report(model.config.scripts.clone(), samples, &results))
}

pub fn report(scripts: Vec<String>, samples: &[Sample], results: &[CropResult]) -> EvalReport {
    let n = scripts.len();
    let mut confusion = vec![vec![0; n]; n];
    let mut unassigned = vec![0; n];
    let mut totals = vec![0; n];
    let (mut loss_sum, mut loss_n, mut frames, mut blanks) = (0.0, 0, 0, 0);
    for (s, r) in samples.iter().zip(results) {
        totals[s.script] += 1;
        match r.predicted {
            Some(p) => confusion[s.script][p] += 1,
            None => unassigned[s.script] += 1,
        }
        if let Some(l) = r.ctc_loss {
            loss_sum += l;
            loss_n += 1;
        }
        frames += r.frames;
        blanks += r.blank_frames;
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let correct: usize = (0..n).map(|i| confusion[i][i]).sum();
    EvalReport {
        per_script_accuracy: (0..n).map(|i| ratio(confusion[i][i], totals[i])).collect(),
        accuracy: ratio(correct, samples.len()),
        count: samples.len(),
        scripts,
        confusion,
        unassigned,
        mean_ctc_loss: if loss_n == 0 { 0.0 } else { loss_sum / loss_n as f64 },
        ctc_infeasible: samples.len() - loss_n,
        blank_rate: ratio(blanks, frames),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(script: usize) -> Sample {
        Sample { image: Tensor::zeros(&[24, 16, 1]).unwrap(), labels: vec![script + 1], script }
    }

    fn res(p: Option<usize>) -> CropResult {
        CropResult { predicted: p, ctc_loss: Some(1.0), frames: 4, blank_frames: 1 }
    }

    #[test]
    fn constant_predictor_scores_its_share() {
        let samples: Vec<Sample> = [0, 0, 0, 1, 2, 3, 3, 3].iter().map(|&s| sample(s)).collect();
        let results: Vec<CropResult> = samples.iter().map(|_| res(Some(0))).collect();
        let r = report((0..4).map(|i| format!("s{i}")).collect(), &samples, &results);
        assert_eq!(r.accuracy, 3.0 / 8.0);
        assert_eq!(r.per_script_accuracy, vec![1.0, 0.0, 0.0, 0.0]);
        for (i, row) in r.confusion.iter().enumerate() {
            let truth = samples.iter().filter(|s| s.script == i).count();
            assert_eq!(row.iter().sum::<usize>() + r.unassigned[i], truth);
        }
        assert_eq!(r.blank_rate, 0.25);
    }

    #[test]
    fn perfect_predictions_are_diagonal() {
        let samples: Vec<Sample> = (0..9).map(|i| sample(i % 3)).collect();
        let results: Vec<CropResult> = samples.iter().map(|s| res(Some(s.script))).collect();
        let r = report(vec!["a".into(), "b".into(), "c".into()], &samples, &results);
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.confusion, vec![vec![3, 0, 0], vec![0, 3, 0], vec![0, 0, 3]]);
    }

    #[test]
    fn blank_only_counts_as_unassigned() {
        let samples = vec![sample(0), sample(1)];
        let results = vec![res(None), res(Some(1))];
        let r = report(vec!["a".into(), "b".into()], &samples, &results);
        assert_eq!(r.unassigned, vec![1, 0]);
        assert_eq!(r.accuracy, 0.5);
    }
}
