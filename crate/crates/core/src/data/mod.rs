//! Synthetic script dataset: generation, on-disk layout and loading.
//!
//! A dataset directory looks like
//!
//! ```text
//! DIR/meta.txt            key=value lines
//! DIR/train.tsv           file <TAB> script class <TAB> comma-separated labels
//! DIR/test.tsv
//! DIR/train/00000.pgm ...
//! DIR/test/00000.pgm ...
//! ```
//!
//! Classes in the manifests are 1-based (0 is the CTC blank).

pub mod augment;
pub mod glyph;
pub mod pgm;
pub mod synth;

use std::fs;
use std::path::{Path, PathBuf};

pub use synth::{CeilingStats, Generator, GlyphSource, Split, SynthConfig, WordCrop};

use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::Tensor;

/// One training or test example held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub labels: Vec<usize>,
    /// Zero-based script index.
    pub script: usize,
}

impl From<WordCrop> for Sample {
    fn from(w: WordCrop) -> Self {
        Sample { image: w.image, labels: w.labels, script: w.script }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Relative to the dataset root.
    pub file: String,
    /// 1-based script class.
    pub script_class: usize,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

/// Parses a TSV manifest whose images live under the manifest's directory.
/// Classes must lie in `1..=num_scripts` and every file must exist.
pub fn load_manifest(path: &Path, num_scripts: usize) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let bad = |line: usize, msg: String| Error::Manifest { path: path.to_path_buf(), line, msg };
    let class = |line: usize, field: &str| -> Result<usize> {
        let v: usize = field.trim().parse().map_err(|_| bad(line, format!("`{field}` is not a class index")))?;
        if !(1..=num_scripts).contains(&v) {
            return Err(bad(line, format!("class {v} outside 1..={num_scripts}")));
        }
        Ok(v)
    };
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        let [file, script, labels] = fields[..] else {
            return Err(bad(line, format!("expected 3 tab-separated fields, got {}", fields.len())));
        };
        let script_class = class(line, script)?;
        let labels = labels.split(',').map(|l| class(line, l)).collect::<Result<Vec<_>>>()?;
        if !root.join(file).is_file() {
            return Err(bad(line, format!("image `{file}` not found")));
        }
        entries.push(ManifestEntry { file: file.to_string(), script_class, labels });
    }
    Ok(Manifest { root, entries })
}

/// Contents of `meta.txt`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub config: SynthConfig,
    pub scripts: Vec<String>,
    pub ceiling: CeilingStats,
}

impl DatasetMeta {
    pub fn to_text(&self) -> String {
        let c = &self.config;
        let pair = c.shared_pair.map_or("none".to_string(), |(a, b)| format!("{a},{b}"));
        let s = &self.ceiling;
        format!(
            "num_scripts={}\nscripts={}\nshared_pair={pair}\nn_train={}\nn_test={}\nseed={}\n\
             exclusive_per_script={}\nshared_count={}\nc_words_shared_only={}\n\
             d_words_shared_only={}\nc_shared_glyph_share={}\nd_shared_glyph_share={}\n",
            c.num_scripts,
            self.scripts.join(","),
            c.n_train,
            c.n_test,
            c.seed,
            c.exclusive_per_script,
            c.shared_count,
            s.c_shared_only,
            s.d_shared_only,
            s.c_shared_glyphs,
            s.d_shared_glyphs,
        )
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |line: usize, msg: String| Error::Manifest { path: path.to_path_buf(), line, msg };
        let mut kv = std::collections::HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            let (k, v) = raw.split_once('=').ok_or_else(|| bad(i + 1, "expected key=value".into()))?;
            kv.insert(k.trim().to_string(), (i + 1, v.trim().to_string()));
        }
        let get = |k: &str| kv.get(k).ok_or_else(|| bad(0, format!("missing key `{k}`")));
        let num = |k: &str| -> Result<u64> {
            let (line, v) = get(k)?;
            v.parse().map_err(|_| bad(*line, format!("`{k}` is not a number")))
        };
        let frac = |k: &str| -> Result<f64> {
            let (line, v) = get(k)?;
            v.parse().map_err(|_| bad(*line, format!("`{k}` is not a number")))
        };
        let scripts: Vec<String> = get("scripts")?.1.split(',').map(str::to_string).collect();
        let (pair_line, pair_text) = get("shared_pair")?;
        let shared_pair = match pair_text.as_str() {
            "none" => None,
            p => {
                let parsed = p.split_once(',').and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)));
                Some(parsed.ok_or_else(|| bad(*pair_line, format!("bad shared_pair `{p}`")))?)
            }
        };
        let config = SynthConfig {
            num_scripts: num("num_scripts")? as usize,
            shared_pair,
            n_train: num("n_train")? as usize,
            n_test: num("n_test")? as usize,
            seed: num("seed")?,
            exclusive_per_script: num("exclusive_per_script")? as usize,
            shared_count: num("shared_count")? as usize,
        };
        if scripts.len() != config.num_scripts {
            return Err(bad(get("scripts")?.0, format!("{} names for {} scripts", scripts.len(), config.num_scripts)));
        }
        let ceiling = CeilingStats {
            c_shared_only: frac("c_words_shared_only")?,
            d_shared_only: frac("d_words_shared_only")?,
            c_shared_glyphs: frac("c_shared_glyph_share")?,
            d_shared_glyphs: frac("d_shared_glyph_share")?,
        };
        Ok(DatasetMeta { config, scripts, ceiling })
    }
}

pub fn load_meta(dir: &Path) -> Result<DatasetMeta> {
    let path = dir.join("meta.txt");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    DatasetMeta::parse(&text, &path)
}

/// Summary of a written dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct WrittenDataset {
    pub meta: DatasetMeta,
    pub train_per_script: Vec<usize>,
    pub test_per_script: Vec<usize>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Generates both splits and writes them under `dir`, which is created if
/// needed. The caller decides whether an existing directory may be reused.
pub fn write_dataset(dir: &Path, config: SynthConfig) -> Result<WrittenDataset> {
    let gen = Generator::new(config)?;
    let n = gen.config.num_scripts;
    let mut all = Vec::new();
    let mut per_split = Vec::new();
    for split in [Split::Train, Split::Test] {
        let sub = dir.join(split.name());
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        let count = gen.config.count(split);
        let digits = count.saturating_sub(1).to_string().len().max(5);
        let rows = parallel::map(count, |i| {
            let crop = gen.crop(split, i);
            let file = format!("{}/{i:0digits$}.pgm", split.name());
            write_file(&dir.join(&file), &pgm::write_pgm(&crop.image)?)?;
            let labels: Vec<String> = crop.labels.iter().map(usize::to_string).collect();
            let row = format!("{file}\t{}\t{}\n", crop.script + 1, labels.join(","));
            Ok((row, crop))
        })?;
        let mut tsv = String::new();
        let mut counts = vec![0; n];
        for (row, crop) in rows {
            tsv.push_str(&row);
            counts[crop.script] += 1;
            all.push(crop);
        }
        write_file(&dir.join(format!("{}.tsv", split.name())), tsv.as_bytes())?;
        per_split.push(counts);
    }
    let meta =
        DatasetMeta { ceiling: gen.ceiling_stats(&all), scripts: gen.script_names(), config: gen.config.clone() };
    write_file(&dir.join("meta.txt"), meta.to_text().as_bytes())?;
    let test_per_script = per_split.pop().expect("two splits");
    let train_per_script = per_split.pop().expect("two splits");
    Ok(WrittenDataset { meta, train_per_script, test_per_script })
}

/// A split read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedSplit {
    pub scripts: Vec<String>,
    pub files: Vec<PathBuf>,
    pub samples: Vec<Sample>,
}

pub fn load_split(dir: &Path, split: Split) -> Result<LoadedSplit> {
    let meta = load_meta(dir)?;
    let manifest = load_manifest(&dir.join(format!("{}.tsv", split.name())), meta.scripts.len())?;
    let files: Vec<PathBuf> = manifest.entries.iter().map(|e| manifest.root.join(&e.file)).collect();
    let samples = parallel::map(files.len(), |i| {
        let path = &files[i];
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let e = &manifest.entries[i];
        Ok(Sample { image: pgm::read_pgm(&bytes)?, labels: e.labels.clone(), script: e.script_class - 1 })
    })?;
    Ok(LoadedSplit { scripts: meta.scripts, files, samples })
}
