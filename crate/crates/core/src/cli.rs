//! Command-line front end. JSON results go to stdout, progress to stderr.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::data::{self, pgm, Split, SynthConfig};
use crate::error::{Error, Result};
use crate::layers::Parameters;
use crate::model::{checkpoint, ArchConfig, AttentionSite, LossKind, Model};
use crate::tensor::Tensor;
use crate::train::{self, eval::classify, TrainConfig};

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  2  usage error (bad flags, refused overwrite)
  3  i/o error
  4  malformed file (checkpoint, PGM, manifest)
  5  configuration error (incompatible model and data, bad settings)
  6  numerical failure (shape mismatch, non-finite gradient)

SEQSCRIPT_THREADS caps worker threads (default 1).";

#[derive(Parser, Debug)]
#[command(name = "seqscript", version, about = "Script identification for cropped text words", after_help = EXIT_CODES)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset tree.
    GenData(GenDataArgs),
    /// Train a model and write a checkpoint plus a JSON-lines run log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Classify one PGM crop.
    Infer(InferArgs),
    /// Dump attention maps and channel means for one crop as PGM images.
    InspectAttention(InspectArgs),
    /// Print configuration and parameter breakdown.
    Info(InfoArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub scripts: usize,
    /// `C,D` (D words always hold a D-only glyph), `auto` for the last two
    /// scripts, or `none`.
    #[arg(long, default_value = "auto")]
    pub shared_pair: String,
    #[arg(long, default_value_t = 2000)]
    pub train: usize,
    #[arg(long, default_value_t = 400)]
    pub test: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write into a non-empty directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "ctc")]
    pub loss: LossKind,
    #[arg(long)]
    pub no_attention: bool,
    #[arg(long)]
    pub no_residual: bool,
    /// Comma-separated attention sites from conv, rb1, rb2, rb3.
    #[arg(long)]
    pub attention_pos: Option<String>,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = train::adam::DEFAULT_LR)]
    pub lr: f64,
    #[arg(long)]
    pub no_augment: bool,
    /// Evaluate on the test split every N epochs (0 disables).
    #[arg(long, default_value_t = 1)]
    pub eval_every: usize,
    /// Smallest layer widths; for smoke tests.
    #[arg(long)]
    pub tiny: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct InfoArgs {
    #[arg(long, required_unless_present = "arch")]
    pub model: Option<PathBuf>,
    /// Describe an unbuilt `default` or `tiny` architecture instead.
    #[arg(long, conflicts_with = "model")]
    pub arch: Option<String>,
    /// Script count for --arch.
    #[arg(long, default_value_t = 4)]
    pub scripts: usize,
}

/// Runs one parsed invocation, writing the JSON result to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let value = match cli.command {
        Command::GenData(a) => gen_data(a)?,
        Command::Train(a) => train_cmd(a)?,
        Command::Eval(a) => eval_cmd(a)?,
        Command::Infer(a) => infer_cmd(a)?,
        Command::InspectAttention(a) => inspect_cmd(a)?,
        Command::Info(a) => info_cmd(a)?,
    };
    let text = serde_json::to_string_pretty(&value).expect("json values serialize");
    writeln!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
}

fn parse_pair(s: &str, n: usize) -> Result<Option<(usize, usize)>> {
    match s {
        "none" => Ok(None),
        "auto" => Ok(Some((n - 2, n - 1))),
        _ => {
            let p = s.split_once(',').and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)));
            p.map(Some).ok_or_else(|| Error::Usage(format!("--shared-pair expects C,D, auto or none, got `{s}`")))
        }
    }
}

fn gen_data(a: GenDataArgs) -> Result<serde_json::Value> {
    if a.scripts < 2 {
        return Err(Error::Config(format!("need at least 2 scripts, got {}", a.scripts)));
    }
    if let Ok(mut it) = fs::read_dir(&a.out) {
        if it.next().is_some() && !a.force {
            return Err(Error::Usage(format!("{} is not empty; pass --force to write into it", a.out.display())));
        }
    }
    let config = SynthConfig {
        shared_pair: parse_pair(&a.shared_pair, a.scripts)?,
        n_train: a.train,
        n_test: a.test,
        ..SynthConfig::new(a.scripts, a.seed)
    };
    let w = data::write_dataset(&a.out, config)?;
    eprintln!("wrote {} train and {} test crops to {}", a.train, a.test, a.out.display());
    Ok(json!({
        "out": a.out,
        "scripts": w.meta.scripts,
        "shared_pair": w.meta.config.shared_pair,
        "train_per_script": w.train_per_script,
        "test_per_script": w.test_per_script,
        "files": a.train + a.test,
        "c_words_shared_only": w.meta.ceiling.c_shared_only,
    }))
}

fn arch_for(a: &TrainArgs, scripts: Vec<String>) -> Result<ArchConfig> {
    let mut cfg = if a.tiny { ArchConfig::tiny(scripts) } else { ArchConfig::new(scripts) };
    cfg.loss = a.loss;
    cfg.use_residual = !a.no_residual;
    if let Some(pos) = &a.attention_pos {
        if a.no_attention {
            return Err(Error::Usage("--attention-pos and --no-attention are exclusive".into()));
        }
        let mut sites = Vec::new();
        for p in pos.split(',').filter(|p| !p.is_empty()) {
            let s: AttentionSite = p.trim().parse()?;
            if !sites.contains(&s) {
                sites.push(s);
            }
        }
        sites.sort_by_key(|s| s.index());
        cfg.attention_sites = sites;
        cfg.use_attention = !cfg.attention_sites.is_empty();
    }
    if a.no_attention {
        cfg = cfg.without_attention();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// `model.ssid` logs to `model.ssid.log.jsonl`.
pub fn log_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".log.jsonl");
    PathBuf::from(s)
}

fn train_cmd(a: TrainArgs) -> Result<serde_json::Value> {
    let train_split = data::load_split(&a.data, Split::Train)?;
    let test_split = data::load_split(&a.data, Split::Test)?;
    let cfg = arch_for(&a, train_split.scripts.clone())?;
    let mut model = Model::build(cfg, a.seed)?;
    let tc = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        augment: !a.no_augment,
        seed: a.seed,
        lr: a.lr,
        eval_every: a.eval_every,
        ..TrainConfig::default()
    };
    let log = log_path(&a.out);
    let mut log_file = fs::File::create(&log).map_err(|e| Error::io(&log, e))?;
    let summary = train::train(&mut model, &train_split.samples, &test_split.samples, &tc, |rec| {
        let line = serde_json::to_string(rec).expect("record serializes");
        eprintln!("{line}");
        writeln!(log_file, "{line}").map_err(|e| Error::io(&log, e))
    })?;
    checkpoint::save(&model, &a.out)?;
    Ok(json!({
        "checkpoint": a.out,
        "log": log,
        "param_count": model.param_count(),
        "epochs": a.epochs,
        "steps": model.step,
        "skipped": summary.skipped,
        "final_mean_loss": summary.epochs.last().map(|r| r.mean_loss),
        "final_accuracy": summary.final_eval.map(|r| r.accuracy),
    }))
}

fn model_matches_data(model: &Model, scripts: &[String]) -> Result<()> {
    if model.config.scripts != scripts {
        return Err(Error::Config(format!(
            "model knows scripts [{}] but the dataset has [{}]",
            model.config.scripts.join(","),
            scripts.join(",")
        )));
    }
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<serde_json::Value> {
    let split = match a.split.as_str() {
        "train" => Split::Train,
        "test" => Split::Test,
        s => return Err(Error::Usage(format!("--split must be train or test, got `{s}`"))),
    };
    let model = checkpoint::load(&a.model)?;
    let meta = data::load_meta(&a.data)?;
    model_matches_data(&model, &meta.scripts)?;
    let loaded = data::load_split(&a.data, split)?;
    let report = train::evaluate(&model, &loaded.samples)?;
    eprintln!("accuracy {:.4} over {} crops", report.accuracy, report.count);
    Ok(serde_json::to_value(report).expect("report serializes"))
}

fn read_image(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    pgm::read_pgm(&bytes)
}

#[derive(Serialize)]
struct FrameCount<'a> {
    script: &'a str,
    frames: usize,
}

fn infer_cmd(a: InferArgs) -> Result<serde_json::Value> {
    let model = checkpoint::load(&a.model)?;
    let image = read_image(&a.image)?;
    let c = classify(&model, &image)?;
    let names = &model.config.scripts;
    let counts: Vec<FrameCount> =
        names.iter().zip(&c.counts).map(|(s, &frames)| FrameCount { script: s, frames }).collect();
    let script = c.script.map_or("none", |s| names[s].as_str());
    eprintln!("{script}");
    Ok(json!({ "script": script, "counts": counts, "frames": c.path_string() }))
}

/// `[0.5, 1)` to `[0, 255]`.
fn gate_to_gray(t: &Tensor) -> Tensor {
    t.map(|v| ((v - 0.5) * 2.0).clamp(0.0, 1.0))
}

fn min_max_normalized(t: &Tensor) -> Tensor {
    let lo = t.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = t.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 1e-12 {
        t.map(|_| 0.5)
    } else {
        t.map(|v| (v - lo) / (hi - lo))
    }
}

fn inspect_cmd(a: InspectArgs) -> Result<serde_json::Value> {
    let model = checkpoint::load(&a.model)?;
    if model.config.attention_sites.is_empty() {
        return Err(Error::Config("no attention blocks present in this model".into()));
    }
    let image = read_image(&a.image)?;
    let (_, cache) = model.forward_eval(std::slice::from_ref(&image))?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let write = |name: String, t: &Tensor| -> Result<PathBuf> {
        let p = a.out.join(name);
        fs::write(&p, pgm::write_pgm(t)?).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    };
    let mut maps = Vec::new();
    for &site in &model.config.attention_sites {
        let ac = &cache.attention(site)[0];
        let t = ac.map();
        // the gate scales every channel alike, so the post mean is s * T
        let post = ac.descriptor().mul(t)?;
        let n = t.len() as f64;
        maps.push(json!({
            "site": site.name(),
            "shape": t.shape(),
            "map": write(format!("attention_{}.pgm", site.name()), &gate_to_gray(t))?,
            "pre_mean": write(format!("pre_{}.pgm", site.name()), &min_max_normalized(ac.descriptor()))?,
            "post_mean": write(format!("post_{}.pgm", site.name()), &min_max_normalized(&post))?,
            "min": t.data().iter().copied().fold(f64::INFINITY, f64::min),
            "max": t.data().iter().copied().fold(f64::NEG_INFINITY, f64::max),
            "mean": t.sum() / n,
        }));
    }
    Ok(json!({ "maps": maps }))
}

fn info_cmd(a: InfoArgs) -> Result<serde_json::Value> {
    let model = match (&a.model, a.arch.as_deref()) {
        (Some(p), _) => checkpoint::load(p)?,
        (None, Some(kind)) => {
            let scripts: Vec<String> =
                crate::data::glyph::FAMILIES.iter().cycle().take(a.scripts).map(|s| s.to_string()).collect();
            let cfg = match kind {
                "default" => ArchConfig::new(scripts),
                "tiny" => ArchConfig::tiny(scripts),
                k => return Err(Error::Usage(format!("--arch must be default or tiny, got `{k}`"))),
            };
            Model::build(cfg, 0)?
        }
        (None, None) => return Err(Error::Usage("pass --model or --arch".into())),
    };
    let breakdown: Vec<serde_json::Value> =
        model.param_breakdown().into_iter().map(|(layer, count)| json!({ "layer": layer, "params": count })).collect();
    let config: serde_json::Map<String, serde_json::Value> = model
        .config
        .to_record()
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), json!(v)))
        .collect();
    let total = model.param_count();
    eprintln!("{total} parameters");
    Ok(json!({
        "config": config,
        "seed": model.seed,
        "step": model.step,
        "breakdown": breakdown,
        "total": total,
    }))
}
