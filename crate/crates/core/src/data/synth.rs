//! Word-crop generator over a procedural script inventory.

use super::glyph::{self, Glyph, Placement, ScriptGlyphs};
use crate::error::{Error, Result};
use crate::model::INPUT_HEIGHT;
use crate::parallel;
use crate::tensor::{Rng, Tensor};

/// Words are laid out on a taller canvas and scaled down to the model height.
pub const CANVAS_HEIGHT: f64 = 32.0;
pub const CANVAS_SCALE: f64 = INPUT_HEIGHT as f64 / CANVAS_HEIGHT;
pub const GLYPH_WIDTH: (f64, f64) = (12.0, 18.0);
pub const SPACING: (f64, f64) = (0.0, 3.0);
pub const MARGIN: f64 = 3.0;
pub const GLYPHS_PER_WORD: (usize, usize) = (3, 10);
pub const DEFAULT_EXCLUSIVE: usize = 8;
pub const DEFAULT_SHARED: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    fn stream_tag(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_scripts: usize,
    /// `(C, D)`: D's words always contain a D-only glyph.
    pub shared_pair: Option<(usize, usize)>,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub exclusive_per_script: usize,
    pub shared_count: usize,
}

impl SynthConfig {
    /// Four scripts, the last two sharing glyphs, 2000/400 words.
    pub fn desk(seed: u64) -> Self {
        SynthConfig::new(4, seed)
    }

    pub fn new(num_scripts: usize, seed: u64) -> Self {
        SynthConfig {
            num_scripts,
            shared_pair: (num_scripts >= 2).then(|| (num_scripts - 2, num_scripts - 1)),
            n_train: 2000,
            n_test: 400,
            seed,
            exclusive_per_script: DEFAULT_EXCLUSIVE,
            shared_count: DEFAULT_SHARED,
        }
    }

    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.n_train,
            Split::Test => self.n_test,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_scripts;
        if !(2..=glyph::MAX_SCRIPTS).contains(&n) {
            return Err(Error::Config(format!("script count must be in 2..={}, got {n}", glyph::MAX_SCRIPTS)));
        }
        if self.n_train < n || self.n_test < n {
            return Err(Error::Config(format!(
                "need at least {n} words per split, got {}/{}",
                self.n_train, self.n_test
            )));
        }
        if self.shared_pair.is_some() && self.shared_count == 0 {
            return Err(Error::Config("a shared pair needs at least one shared glyph".into()));
        }
        Ok(())
    }
}

/// Where a placed glyph came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlyphSource {
    Exclusive { script: usize, index: usize },
    Shared { index: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordCrop {
    /// `[24, W, 1]`, values in [0, 1].
    pub image: Tensor,
    /// Ink coverage per pixel, `[24, W]` row-major.
    pub coverage: Vec<f64>,
    /// One class per glyph (script index + 1).
    pub labels: Vec<usize>,
    /// Zero-based script index.
    pub script: usize,
    pub glyphs: Vec<GlyphSource>,
}

impl WordCrop {
    pub fn width(&self) -> usize {
        self.image.dim(1)
    }

    pub fn shared_only(&self) -> bool {
        self.glyphs.iter().all(|g| matches!(g, GlyphSource::Shared { .. }))
    }
}

pub struct Generator {
    pub config: SynthConfig,
    pub scripts: Vec<ScriptGlyphs>,
    pub shared: Vec<Glyph>,
}

impl Generator {
    pub fn new(config: SynthConfig) -> Result<Self> {
        config.validate()?;
        let (scripts, shared) = glyph::make_inventory(
            config.num_scripts,
            config.exclusive_per_script,
            config.shared_pair,
            config.shared_count,
            config.seed,
        )?;
        Ok(Generator { config, scripts, shared })
    }

    pub fn script_names(&self) -> Vec<String> {
        self.scripts.iter().map(|s| s.name.clone()).collect()
    }

    fn in_pair(&self, s: usize) -> bool {
        self.config.shared_pair.is_some_and(|(c, d)| s == c || s == d)
    }

    fn pick_glyphs(&self, script: usize, n: usize, rng: &mut Rng) -> Vec<GlyphSource> {
        let excl = self.scripts[script].exclusive.len();
        let pool = excl + if self.in_pair(script) { self.shared.len() } else { 0 };
        let pick = |k: usize| {
            if k < excl {
                GlyphSource::Exclusive { script, index: k }
            } else {
                GlyphSource::Shared { index: k - excl }
            }
        };
        let mut out: Vec<GlyphSource> = (0..n).map(|_| pick(rng.below(pool))).collect();
        let must_have_exclusive = self.config.shared_pair.is_some_and(|(_, d)| d == script);
        if must_have_exclusive && out.iter().all(|g| matches!(g, GlyphSource::Shared { .. })) {
            let slot = rng.below(n);
            out[slot] = pick(rng.below(excl));
        }
        out
    }

    fn glyph(&self, src: GlyphSource) -> &Glyph {
        match src {
            GlyphSource::Exclusive { script, index } => &self.scripts[script].exclusive[index],
            GlyphSource::Shared { index } => &self.shared[index],
        }
    }

    /// Crop `index` of `split`. Depends only on the config and its arguments.
    pub fn crop(&self, split: Split, index: usize) -> WordCrop {
        let mut rng = Rng::stream(self.config.seed, split.stream_tag() << 32 | index as u64);
        let script = index % self.config.num_scripts;
        let n = rng.int_in(GLYPHS_PER_WORD.0, GLYPHS_PER_WORD.1);
        let glyphs = self.pick_glyphs(script, n, &mut rng);

        let mut x = MARGIN;
        let mut placed = Vec::with_capacity(n);
        for (k, &src) in glyphs.iter().enumerate() {
            if k > 0 {
                x += rng.uniform(SPACING.0, SPACING.1);
            }
            let w = rng.uniform(GLYPH_WIDTH.0, GLYPH_WIDTH.1);
            let h = rng.uniform(19.0, 23.0);
            let y = (CANVAS_HEIGHT - h) / 2.0 + rng.uniform(-2.0, 2.0);
            placed.push((self.glyph(src), Placement { x, y, w, h }));
            x += w;
        }
        let width = ((x + MARGIN) * CANVAS_SCALE).ceil() as usize;
        let pen = rng.uniform(0.9, 1.4);
        let coverage = glyph::render(&placed, INPUT_HEIGHT, width, CANVAS_SCALE, pen);

        let bg = rng.uniform(0.05, 0.25);
        let ink = rng.uniform(0.7, 0.95);
        let data = coverage.iter().map(|c| bg + (ink - bg) * c).collect();
        let image = Tensor::from_vec(&[INPUT_HEIGHT, width, 1], data).expect("positive dims");
        WordCrop { image, coverage, labels: vec![script + 1; n], script, glyphs }
    }

    pub fn split(&self, split: Split) -> Result<Vec<WordCrop>> {
        parallel::map(self.config.count(split), |i| Ok(self.crop(split, i)))
    }

    /// Inventory statistics behind the shared-pair ambiguity.
    pub fn ceiling_stats(&self, crops: &[WordCrop]) -> CeilingStats {
        let Some((c, d)) = self.config.shared_pair else {
            return CeilingStats::default();
        };
        let frac = |s: usize| {
            let words: Vec<&WordCrop> = crops.iter().filter(|w| w.script == s).collect();
            let only = words.iter().filter(|w| w.shared_only()).count();
            let glyphs: usize = words.iter().map(|w| w.glyphs.len()).sum();
            let shared: usize =
                words.iter().map(|w| w.glyphs.iter().filter(|g| matches!(g, GlyphSource::Shared { .. })).count()).sum();
            (ratio(only, words.len()), ratio(shared, glyphs))
        };
        let (c_only, c_glyphs) = frac(c);
        let (d_only, d_glyphs) = frac(d);
        CeilingStats {
            c_shared_only: c_only,
            d_shared_only: d_only,
            c_shared_glyphs: c_glyphs,
            d_shared_glyphs: d_glyphs,
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CeilingStats {
    /// Fraction of C words made only of shared glyphs.
    pub c_shared_only: f64,
    /// Same for D; zero by construction.
    pub d_shared_only: f64,
    pub c_shared_glyphs: f64,
    pub d_shared_glyphs: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ArchConfig;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig { n_train: 120, n_test: 40, ..SynthConfig::desk(seed) }
    }

    #[test]
    fn balanced_per_script() {
        let g = Generator::new(SynthConfig { n_train: 2000, n_test: 400, ..SynthConfig::desk(7) }).unwrap();
        for split in [Split::Train, Split::Test] {
            let n = g.config.count(split);
            let mut counts = [0usize; 4];
            for i in 0..n {
                counts[i % 4] += 1;
            }
            assert!(counts.iter().all(|&c| c.abs_diff(n / 4) <= 1));
            // script assignment matches
            for i in (0..n).step_by(97) {
                assert_eq!(g.crop(split, i).script, i % 4);
            }
        }
    }

    #[test]
    fn crops_satisfy_invariants() {
        let g = Generator::new(small(3)).unwrap();
        let cfg = ArchConfig::new(g.script_names());
        for w in g.split(Split::Train).unwrap() {
            assert_eq!(w.image.shape()[0], 24);
            assert_eq!(w.image.shape()[2], 1);
            assert!((3..=10).contains(&w.labels.len()));
            assert_eq!(w.labels.len(), w.glyphs.len());
            assert!(w.labels.iter().all(|&l| l == w.script + 1));
            assert!(w.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
            let t = cfg.frames_for_width(w.width()).unwrap();
            assert!(t >= 2 * w.labels.len() - 1, "T={t} for {} glyphs", w.labels.len());
        }
    }

    #[test]
    fn d_words_always_have_exclusive_glyph() {
        let g = Generator::new(SynthConfig { n_train: 2000, ..small(11) }).unwrap();
        let (c, d) = g.config.shared_pair.unwrap();
        let words = g.split(Split::Train).unwrap();
        assert!(words.iter().filter(|w| w.script == d).all(|w| !w.shared_only()));
        // C does draw shared glyphs, others never do
        assert!(words
            .iter()
            .filter(|w| w.script == c)
            .any(|w| w.glyphs.iter().any(|s| matches!(s, GlyphSource::Shared { .. }))));
        assert!(words
            .iter()
            .filter(|w| w.script != c && w.script != d)
            .all(|w| w.glyphs.iter().all(|s| matches!(s, GlyphSource::Exclusive { .. }))));
        let st = g.ceiling_stats(&words);
        assert_eq!(st.d_shared_only, 0.0);
        assert!(st.c_shared_only > 0.0 && st.c_shared_only < 0.1);
    }

    #[test]
    fn seeded_and_order_free() {
        let a = Generator::new(small(5)).unwrap();
        let b = Generator::new(small(5)).unwrap();
        assert_eq!(a.crop(Split::Test, 9), b.crop(Split::Test, 9));
        assert_ne!(a.crop(Split::Test, 9), a.crop(Split::Train, 9));
        let all = a.split(Split::Test).unwrap();
        assert_eq!(all[13], b.crop(Split::Test, 13));
    }

    #[test]
    fn coverage_marks_ink() {
        let g = Generator::new(small(2)).unwrap();
        let w = g.crop(Split::Train, 0);
        let inked = w.coverage.iter().filter(|&&c| c > 0.5).count();
        assert!(inked > 20);
        assert!(w.coverage.iter().filter(|&&c| c == 0.0).count() > inked);
    }

    #[test]
    fn bad_configs() {
        assert!(Generator::new(SynthConfig::new(1, 0)).is_err());
        assert!(Generator::new(SynthConfig { n_test: 3, ..SynthConfig::desk(0) }).is_err());
        assert!(Generator::new(SynthConfig { shared_count: 0, ..SynthConfig::desk(0) }).is_err());
    }
}
