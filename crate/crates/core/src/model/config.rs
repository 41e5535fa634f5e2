//! Architecture description and its `key=value` text form.

use std::fmt;
use std::str::FromStr;

use crate::attention::AttentionGate;
use crate::ctc::ClassAlphabet;
use crate::error::{Error, Result};
use crate::layers::MaxPool;

pub const INPUT_HEIGHT: usize = 24;
pub const DEFAULT_FILTERS: [usize; 7] = [32, 64, 96, 128, 164, 196, 256];
pub const DEFAULT_BN_CONVS: [usize; 2] = [3, 5];
pub const DEFAULT_ATTENTION_BIAS: f64 = 0.05;

/// Where a spatial attention block may sit. Each site is just before the
/// pool that follows the named stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AttentionSite {
    AfterConv,
    AfterRb1,
    AfterRb2,
    AfterRb3,
}

impl AttentionSite {
    pub const ALL: [AttentionSite; 4] =
        [AttentionSite::AfterConv, AttentionSite::AfterRb1, AttentionSite::AfterRb2, AttentionSite::AfterRb3];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            AttentionSite::AfterConv => "conv",
            AttentionSite::AfterRb1 => "rb1",
            AttentionSite::AfterRb2 => "rb2",
            AttentionSite::AfterRb3 => "rb3",
        }
    }
}

impl fmt::Display for AttentionSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttentionSite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttentionSite::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown attention site `{s}` (expected conv, rb1, rb2 or rb3)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Ctc,
    CrossEntropy,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Ctc => "ctc",
            LossKind::CrossEntropy => "ce",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ctc" => Ok(LossKind::Ctc),
            "ce" => Ok(LossKind::CrossEntropy),
            _ => Err(Error::Config(format!("unknown loss `{s}` (expected ctc or ce)"))),
        }
    }
}

/// Stride of the 3x3 pool after the input convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FirstPool {
    Stride2,
    Stride3,
}

impl fmt::Display for FirstPool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FirstPool::Stride2 => "3x3s2",
            FirstPool::Stride3 => "3x3s3",
        })
    }
}

impl FromStr for FirstPool {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "3x3s2" => Ok(FirstPool::Stride2),
            "3x3s3" => Ok(FirstPool::Stride3),
            _ => Err(Error::Config(format!("unknown first pool `{s}` (expected 3x3s2 or 3x3s3)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchConfig {
    pub input_height: usize,
    /// conv1, then (conv_a, conv_b) for each of the three residue blocks.
    pub conv_filters: [usize; 7],
    pub use_attention: bool,
    pub attention_sites: Vec<AttentionSite>,
    pub attention_gate: AttentionGate,
    /// Initial bias of every attention conv; weights start at zero.
    pub attention_bias: f64,
    pub use_residual: bool,
    /// 1-based conv numbers followed by batch norm. Only the second conv
    /// of a residue block (3, 5, 7) qualifies.
    pub bn_after_convs: Vec<usize>,
    pub lstm_hidden: usize,
    pub lstm_proj: usize,
    pub scripts: Vec<String>,
    pub loss: LossKind,
    pub first_pool: FirstPool,
}

impl ArchConfig {
    pub fn new(scripts: Vec<String>) -> Self {
        ArchConfig {
            input_height: INPUT_HEIGHT,
            conv_filters: DEFAULT_FILTERS,
            use_attention: true,
            attention_sites: vec![AttentionSite::AfterRb1, AttentionSite::AfterRb2],
            attention_gate: AttentionGate::ReluSigmoid,
            attention_bias: DEFAULT_ATTENTION_BIAS,
            use_residual: true,
            bn_after_convs: DEFAULT_BN_CONVS.to_vec(),
            lstm_hidden: 256,
            lstm_proj: 96,
            scripts,
            loss: LossKind::Ctc,
            first_pool: FirstPool::Stride2,
        }
    }

    /// Two-channel everything; for gradient checks and smoke tests.
    pub fn tiny(scripts: Vec<String>) -> Self {
        ArchConfig { conv_filters: [2; 7], lstm_hidden: 4, lstm_proj: 2, ..ArchConfig::new(scripts) }
    }

    pub fn without_attention(mut self) -> Self {
        self.use_attention = false;
        self.attention_sites.clear();
        self
    }

    pub fn alphabet(&self) -> Result<ClassAlphabet> {
        ClassAlphabet::new(self.scripts.clone())
    }

    pub fn num_classes(&self) -> usize {
        self.scripts.len() + 1
    }

    pub fn has_site(&self, site: AttentionSite) -> bool {
        self.use_attention && self.attention_sites.contains(&site)
    }

    /// Block `b` (0-based) normalizes the output of its second conv.
    pub fn block_has_bn(&self, b: usize) -> bool {
        self.bn_after_convs.contains(&(2 * b + 3))
    }

    /// Channel count entering each of the four pools.
    pub fn stage_channels(&self) -> [usize; 4] {
        let f = &self.conv_filters;
        [f[0], f[2], f[4], f[6]]
    }

    pub fn pool(&self, stage: usize) -> MaxPool {
        match stage {
            0 => match self.first_pool {
                FirstPool::Stride2 => MaxPool::new(3, 3, 2, 2),
                FirstPool::Stride3 => MaxPool::new(3, 3, 3, 3),
            },
            1 => MaxPool::new(2, 2, 2, 2),
            _ => MaxPool::new(2, 1, 2, 1),
        }
    }

    /// `(H, W)` after each of the four pools, or a shape error naming the
    /// first pool whose window does not fit.
    pub fn trace(&self, h: usize, w: usize) -> Result<[(usize, usize); 4]> {
        const STAGE: [&str; 4] = ["conv1", "RB1", "RB2", "RB3"];
        let mut dims = [(0, 0); 4];
        let (mut h, mut w) = (h, w);
        for (s, d) in dims.iter_mut().enumerate() {
            let p = self.pool(s);
            (h, w) = p.output_dims(h, w).map_err(|_| {
                Error::Shape(format!(
                    "crop too small: the {}x{} pool after {} needs at least {}x{}, got {h}x{w}",
                    p.pool_h, p.pool_w, STAGE[s], p.pool_h, p.pool_w
                ))
            })?;
            *d = (h, w);
        }
        Ok(dims)
    }

    /// Frame count `T` for a crop of width `w`.
    pub fn frames_for_width(&self, w: usize) -> Result<usize> {
        Ok(self.trace(self.input_height, w)?[3].1)
    }

    /// Feature size of one frame after map-to-sequence.
    pub fn frame_dim(&self) -> Result<usize> {
        let probe = self.min_width()?;
        Ok(self.trace(self.input_height, probe)?[3].0 * self.conv_filters[6])
    }

    /// Smallest crop width every pool accepts.
    pub fn min_width(&self) -> Result<usize> {
        (1..=64)
            .find(|&w| self.trace(self.input_height, w).is_ok())
            .ok_or_else(|| Error::Config(format!("input height {} cannot pass the pool chain", self.input_height)))
    }

    pub fn validate(&self) -> Result<()> {
        self.alphabet()?;
        if self.conv_filters.contains(&0) || self.lstm_hidden == 0 || self.lstm_proj == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        self.trace(self.input_height, 64)
            .map_err(|e| Error::Config(format!("input height {}: {e}", self.input_height)))?;
        if !self.use_attention && !self.attention_sites.is_empty() {
            return Err(Error::Config("attention sites configured but attention is disabled".into()));
        }
        if self.use_attention && self.attention_sites.is_empty() {
            return Err(Error::Config("attention enabled with no attention sites".into()));
        }
        for (i, s) in self.attention_sites.iter().enumerate() {
            if self.attention_sites[..i].contains(s) {
                return Err(Error::Config(format!("attention site {s} listed twice")));
            }
        }
        for &c in &self.bn_after_convs {
            if !matches!(c, 3 | 5 | 7) {
                return Err(Error::Config(format!(
                    "batch norm after conv #{c}: only the second conv of a residue block (3, 5, 7) supports it"
                )));
            }
        }
        if !self.attention_bias.is_finite() {
            return Err(Error::Config("attention bias must be finite".into()));
        }
        Ok(())
    }

    pub fn to_record(&self) -> String {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let sites: Vec<&str> = self.attention_sites.iter().map(|s| s.name()).collect();
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        kv("input_height", self.input_height.to_string());
        kv("conv_filters", join(&self.conv_filters));
        kv("use_attention", self.use_attention.to_string());
        kv("attention_sites", sites.join(","));
        kv("attention_gate", self.attention_gate.to_string());
        kv("attention_bias", self.attention_bias.to_string());
        kv("use_residual", self.use_residual.to_string());
        kv("bn_after_convs", join(&self.bn_after_convs));
        kv("lstm_hidden", self.lstm_hidden.to_string());
        kv("lstm_proj", self.lstm_proj.to_string());
        kv("scripts", self.scripts.join(","));
        kv("loss", self.loss.to_string());
        kv("first_pool", self.first_pool.to_string());
        out
    }

    /// Parses [`ArchConfig::to_record`] output. Unknown keys are rejected;
    /// every key must be present.
    pub fn from_record(text: &str) -> Result<Self> {
        let mut cfg = ArchConfig::new(Vec::new());
        let mut seen = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) =
                line.split_once('=').ok_or_else(|| Error::Config(format!("config line without `=`: {line:?}")))?;
            let bad = |what: &str| Error::Config(format!("bad value for {k}: {v:?} ({what})"));
            let num = |s: &str| s.parse::<usize>().map_err(|_| bad("integer"));
            let list = |s: &str| -> Result<Vec<usize>> {
                if s.is_empty() {
                    Ok(Vec::new())
                } else {
                    s.split(',').map(num).collect()
                }
            };
            let flag = |s: &str| s.parse::<bool>().map_err(|_| bad("bool"));
            match k {
                "input_height" => cfg.input_height = num(v)?,
                "conv_filters" => {
                    cfg.conv_filters = list(v)?.try_into().map_err(|_| bad("exactly 7 entries"))?;
                }
                "use_attention" => cfg.use_attention = flag(v)?,
                "attention_sites" => {
                    cfg.attention_sites =
                        if v.is_empty() { Vec::new() } else { v.split(',').map(str::parse).collect::<Result<_>>()? };
                }
                "attention_gate" => cfg.attention_gate = v.parse()?,
                "attention_bias" => cfg.attention_bias = v.parse().map_err(|_| bad("float"))?,
                "use_residual" => cfg.use_residual = flag(v)?,
                "bn_after_convs" => cfg.bn_after_convs = list(v)?,
                "lstm_hidden" => cfg.lstm_hidden = num(v)?,
                "lstm_proj" => cfg.lstm_proj = num(v)?,
                "scripts" => cfg.scripts = v.split(',').map(String::from).collect(),
                "loss" => cfg.loss = v.parse()?,
                "first_pool" => cfg.first_pool = v.parse()?,
                _ => return Err(Error::Config(format!("unknown config key `{k}`"))),
            }
            seen.push(k.to_string());
        }
        for key in [
            "input_height",
            "conv_filters",
            "use_attention",
            "attention_sites",
            "attention_gate",
            "attention_bias",
            "use_residual",
            "bn_after_convs",
            "lstm_hidden",
            "lstm_proj",
            "scripts",
            "loss",
            "first_pool",
        ] {
            if !seen.iter().any(|s| s == key) {
                return Err(Error::Config(format!("config record is missing `{key}`")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
