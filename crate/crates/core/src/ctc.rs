//! Connectionist temporal classification over script classes.
//!
//! Class 0 is the blank; classes `1..=N` are scripts. A label sequence holds
//! one script class per glyph of the word.

use crate::error::{shape_err, Error, Result};
use crate::layers::activation::log_softmax;
use crate::tensor::Tensor;

pub const BLANK: usize = 0;

/// Ordered script names; class `k` (k >= 1) is `scripts[k - 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassAlphabet {
    scripts: Vec<String>,
}

impl ClassAlphabet {
    pub fn new(scripts: Vec<String>) -> Result<Self> {
        if scripts.len() < 2 {
            return Err(Error::Config(format!("need at least 2 scripts, got {}", scripts.len())));
        }
        for (i, s) in scripts.iter().enumerate() {
            if s.is_empty() || s.chars().any(|c| c.is_whitespace() || c == ',') {
                return Err(Error::Config(format!("bad script name {s:?}")));
            }
            if scripts[..i].contains(s) {
                return Err(Error::Config(format!("duplicate script name {s:?}")));
            }
        }
        Ok(ClassAlphabet { scripts })
    }

    pub fn scripts(&self) -> &[String] {
        &self.scripts
    }

    pub fn num_scripts(&self) -> usize {
        self.scripts.len()
    }

    /// |L'|, scripts plus blank.
    pub fn num_classes(&self) -> usize {
        self.scripts.len() + 1
    }

    pub fn class_of(&self, name: &str) -> Option<usize> {
        self.scripts.iter().position(|s| s == name).map(|i| i + 1)
    }

    pub fn name(&self, class: usize) -> Option<&str> {
        if class == BLANK {
            None
        } else {
            self.scripts.get(class - 1).map(String::as_str)
        }
    }
}

/// Merge adjacent repeats, then drop blanks.
pub fn collapse_beta(path: &[usize], num_classes: usize) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    let mut prev = None;
    for &k in path {
        if k >= num_classes {
            return Err(Error::LabelRange { label: k, lo: 0, hi: num_classes - 1 });
        }
        if Some(k) != prev && k != BLANK {
            out.push(k);
        }
        prev = Some(k);
    }
    Ok(out)
}

/// Fewest frames that can emit `labels`: one per label plus a blank between
/// each adjacent equal pair.
pub fn min_frames(labels: &[usize]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

fn lse(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn check_labels(labels: &[usize], num_classes: usize, frames: usize) -> Result<()> {
    for &l in labels {
        if l == BLANK || l >= num_classes {
            return Err(Error::LabelRange { label: l, lo: 1, hi: num_classes - 1 });
        }
    }
    let required = min_frames(labels);
    if frames < required {
        return Err(Error::InfeasibleAlignment { frames, required });
    }
    Ok(())
}

/// Negative log-likelihood and gradient with respect to logits, from
/// per-frame log-probabilities `lp` (`[T, K]` row-major).
fn ctc_core(lp: &[f64], probs: &[f64], t_len: usize, k: usize, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    check_labels(labels, k, t_len)?;
    let s_len = 2 * labels.len() + 1;
    let ext = |s: usize| if s % 2 == 0 { BLANK } else { labels[s / 2] };
    let can_skip = |s: usize| s >= 2 && ext(s) != BLANK && ext(s) != ext(s - 2);
    let ninf = f64::NEG_INFINITY;

    // alpha includes frame t; beta covers frames after t only
    let mut alpha = vec![ninf; t_len * s_len];
    alpha[0] = lp[ext(0)];
    if s_len > 1 {
        alpha[1] = lp[ext(1)];
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let prev = &alpha[(t - 1) * s_len..t * s_len];
            let mut a = prev[s];
            if s >= 1 {
                a = lse(a, prev[s - 1]);
            }
            if can_skip(s) {
                a = lse(a, prev[s - 2]);
            }
            alpha[t * s_len + s] = if a == ninf { ninf } else { a + lp[t * k + ext(s)] };
        }
    }
    let last = &alpha[(t_len - 1) * s_len..];
    let log_p = if s_len > 1 { lse(last[s_len - 1], last[s_len - 2]) } else { last[0] };
    if !log_p.is_finite() {
        return Err(Error::NonFiniteGradient("ctc log-likelihood underflow".into()));
    }

    let mut beta = vec![ninf; t_len * s_len];
    beta[(t_len - 1) * s_len + s_len - 1] = 0.0;
    if s_len > 1 {
        beta[(t_len - 1) * s_len + s_len - 2] = 0.0;
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let next = |s2: usize| beta[(t + 1) * s_len + s2] + lp[(t + 1) * k + ext(s2)];
            let mut b = next(s);
            if s + 1 < s_len {
                b = lse(b, next(s + 1));
            }
            if s + 2 < s_len && can_skip(s + 2) {
                b = lse(b, next(s + 2));
            }
            beta[t * s_len + s] = b;
        }
    }

    let mut grad = probs.to_vec();
    for t in 0..t_len {
        let mut post = vec![ninf; k];
        for s in 0..s_len {
            let c = ext(s);
            post[c] = lse(post[c], alpha[t * s_len + s] + beta[t * s_len + s]);
        }
        for c in 0..k {
            grad[t * k + c] -= (post[c] - log_p).exp();
        }
    }
    Ok((-log_p, grad))
}

fn frame_dims(y: &Tensor) -> Result<(usize, usize)> {
    match y.shape() {
        [t, k] if *k >= 2 => Ok((*t, *k)),
        s => shape_err(format!("frame distribution must be [T, K>=2], got {s:?}")),
    }
}

/// CTC loss from pre-softmax logits `[T, K]`. Returns `(-log p(l|y), d loss / d logits)`.
pub fn ctc_loss_logits(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (t_len, k) = frame_dims(logits)?;
    let mut lp = Vec::with_capacity(t_len * k);
    for row in logits.data().chunks_exact(k) {
        lp.extend(log_softmax(row));
    }
    let probs: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
    let (loss, g) = ctc_core(&lp, &probs, t_len, k, labels)?;
    Ok((loss, Tensor::from_vec(&[t_len, k], g)?))
}

/// CTC loss from softmax outputs `[T, K]`; the gradient is still with
/// respect to the logits that produced `y`.
pub fn ctc_loss(y: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (t_len, k) = frame_dims(y)?;
    let lp: Vec<f64> = y.data().iter().map(|v| v.ln()).collect();
    let (loss, g) = ctc_core(&lp, y.data(), t_len, k, labels)?;
    Ok((loss, Tensor::from_vec(&[t_len, k], g)?))
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Per-frame argmax (ties to the lowest index) and its collapsed labels.
pub fn greedy_decode(y: &Tensor) -> Result<(Vec<usize>, Vec<usize>)> {
    let (_, k) = frame_dims(y)?;
    let path: Vec<usize> = y.data().chunks_exact(k).map(argmax).collect();
    let collapsed = collapse_beta(&path, k)?;
    Ok((path, collapsed))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vote {
    /// Winning script class (>= 1), or `None` when every frame is blank.
    pub script: Option<usize>,
    /// Non-blank argmax counts, indexed by `class - 1`.
    pub counts: Vec<usize>,
}

/// Word-level script by majority over non-blank frame argmaxes.
///
/// Ties on count go to the larger total probability over all frames, then
/// to the lower class index.
pub fn majority_vote(y: &Tensor) -> Result<Vote> {
    let (_, k) = frame_dims(y)?;
    let mut counts = vec![0usize; k - 1];
    let mut mass = vec![0.0; k - 1];
    for row in y.data().chunks_exact(k) {
        let a = argmax(row);
        if a != BLANK {
            counts[a - 1] += 1;
        }
        for c in 1..k {
            mass[c - 1] += row[c];
        }
    }
    let mut best: Option<usize> = None;
    for c in 0..k - 1 {
        if counts[c] == 0 {
            continue;
        }
        best = match best {
            None => Some(c),
            Some(b) if counts[c] > counts[b] || (counts[c] == counts[b] && mass[c] > mass[b]) => Some(c),
            keep => keep,
        };
    }
    Ok(Vote { script: best.map(|c| c + 1), counts })
}
