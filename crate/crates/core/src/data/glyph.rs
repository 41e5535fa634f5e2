//! Procedural glyphs: stroke primitives on a 16x16 design grid, grouped into
//! per-script families with disjoint primitive kinds.

use crate::error::{Error, Result};
use crate::tensor::Rng;

pub const GRID: f64 = 16.0;

/// Family names double as script names. Each family draws its exclusive
/// glyphs from one primitive kind only.
pub const FAMILIES: [&str; 7] = ["boxy", "angular", "round", "dotted", "looped", "wavy", "zigzag"];

pub const MAX_SCRIPTS: usize = FAMILIES.len();

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Primitive {
    AxisLine,
    Diagonal,
    Arc,
    Dot,
    Circle,
    Wave,
    Zigzag,
}

impl Primitive {
    fn of_family(f: usize) -> Primitive {
        [
            Primitive::AxisLine,
            Primitive::Diagonal,
            Primitive::Arc,
            Primitive::Dot,
            Primitive::Circle,
            Primitive::Wave,
            Primitive::Zigzag,
        ][f]
    }
}

/// A stroke as a polyline in design-grid units, plus its primitive kind.
/// Dots are single-point polylines rendered with a larger radius.
#[derive(Debug, Clone, PartialEq)]
pub struct Stroke {
    pub kind: Primitive,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Glyph {
    pub strokes: Vec<Stroke>,
}

impl Glyph {
    /// Sorted, de-duplicated primitive kinds used.
    pub fn signature(&self) -> Vec<Primitive> {
        let mut v: Vec<Primitive> = self.strokes.iter().map(|s| s.kind).collect();
        v.sort_by_key(|p| *p as u8);
        v.dedup();
        v
    }
}

const LATTICE: [f64; 4] = [2.0, 6.0, 10.0, 14.0];

fn lat(rng: &mut Rng) -> f64 {
    LATTICE[rng.below(4)]
}

fn arc_points(cx: f64, cy: f64, r: f64, a0: f64, span: f64) -> Vec<(f64, f64)> {
    let n = ((span.abs() * r / 1.5).ceil() as usize).max(4);
    (0..=n)
        .map(|i| {
            let a = a0 + span * i as f64 / n as f64;
            (cx + r * a.cos(), cy + r * a.sin())
        })
        .collect()
}

fn stroke(kind: Primitive, rng: &mut Rng) -> Stroke {
    use std::f64::consts::PI;
    let points = match kind {
        Primitive::AxisLine => {
            let (a, b, c) = (lat(rng), lat(rng), lat(rng));
            let b = if a == b {
                if b < 10.0 {
                    b + 8.0
                } else {
                    b - 8.0
                }
            } else {
                b
            };
            if rng.chance(0.5) {
                vec![(a, c), (b, c)]
            } else {
                vec![(c, a), (c, b)]
            }
        }
        Primitive::Diagonal => {
            let (x0, y0) = (lat(rng), lat(rng));
            let dx = [-8.0, 8.0, -12.0, 12.0][rng.below(4)];
            let dy = [-8.0, 8.0, -12.0, 12.0][rng.below(4)];
            let x1 = (x0 + dx).clamp(1.0, 15.0);
            let y1 = (y0 + dy).clamp(1.0, 15.0);
            if (x1 - x0).abs() < 3.0 || (y1 - y0).abs() < 3.0 {
                vec![(2.0, 2.0 + y0 / 4.0), (14.0, 14.0 - y0 / 4.0)]
            } else {
                vec![(x0, y0), (x1, y1)]
            }
        }
        Primitive::Arc => {
            let (cx, cy) = (rng.uniform(5.0, 11.0), rng.uniform(5.0, 11.0));
            let r = rng.uniform(3.0, 5.5);
            arc_points(cx, cy, r, rng.uniform(0.0, 2.0 * PI), rng.uniform(0.6 * PI, 1.4 * PI))
        }
        Primitive::Dot => vec![(rng.uniform(3.0, 13.0), rng.uniform(3.0, 13.0))],
        Primitive::Circle => {
            let r = rng.uniform(2.0, 3.5);
            let (cx, cy) = (rng.uniform(1.5 + r, 14.5 - r), rng.uniform(1.5 + r, 14.5 - r));
            arc_points(cx, cy, r, 0.0, 2.0 * PI)
        }
        Primitive::Wave => {
            let y = rng.uniform(4.0, 12.0);
            let amp = rng.uniform(1.5, 2.5);
            let phase = rng.uniform(0.0, 2.0 * PI);
            let vertical = rng.chance(0.3);
            (0..=16)
                .map(|i| {
                    let t = 1.5 + 13.0 * i as f64 / 16.0;
                    let d = y + amp * (phase + t * 0.9).sin();
                    if vertical {
                        (d, t)
                    } else {
                        (t, d)
                    }
                })
                .collect()
        }
        Primitive::Zigzag => {
            let n = 3 + rng.below(3);
            let (lo, hi) = (rng.uniform(2.0, 6.0), rng.uniform(10.0, 14.0));
            (0..=n)
                .map(|i| {
                    let x = 2.0 + 12.0 * i as f64 / n as f64;
                    (x, if i % 2 == 0 { lo } else { hi })
                })
                .collect()
        }
    };
    Stroke { kind, points }
}

fn strokes_per_glyph(kind: Primitive, rng: &mut Rng) -> usize {
    match kind {
        Primitive::Dot => 3 + rng.below(3),
        Primitive::Circle | Primitive::Wave | Primitive::Zigzag => 1 + rng.below(2),
        _ => 2 + rng.below(2),
    }
}

fn glyph_of(kinds: &[Primitive], rng: &mut Rng) -> Glyph {
    let mut strokes = Vec::new();
    for &k in kinds {
        let n = if kinds.len() > 1 { 1 } else { strokes_per_glyph(k, rng) };
        for _ in 0..n {
            strokes.push(stroke(k, rng));
        }
    }
    Glyph { strokes }
}

fn distinct_glyphs(kinds: &[Primitive], count: usize, rng: &mut Rng, avoid: &[Glyph]) -> Result<Vec<Glyph>> {
    let mut out: Vec<Glyph> = Vec::with_capacity(count);
    let mut tries = 0;
    while out.len() < count {
        tries += 1;
        if tries > 1000 * count {
            return Err(Error::Config(format!("could not draw {count} distinct glyphs")));
        }
        let g = glyph_of(kinds, rng);
        if !out.contains(&g) && !avoid.contains(&g) {
            out.push(g);
        }
    }
    Ok(out)
}

/// One script's glyph inventory. Exclusive glyphs use only the family's
/// primitive; shared glyphs (if any) are common to a pair of scripts.
#[derive(Debug, Clone)]
pub struct ScriptGlyphs {
    pub name: String,
    pub exclusive: Vec<Glyph>,
}

/// Exclusive glyphs for each of `n` scripts, and the shared set for a pair.
/// Shared glyphs mix one primitive from each family of the pair.
pub fn make_inventory(
    n: usize,
    exclusive_per_script: usize,
    shared_pair: Option<(usize, usize)>,
    shared_count: usize,
    seed: u64,
) -> Result<(Vec<ScriptGlyphs>, Vec<Glyph>)> {
    if !(2..=MAX_SCRIPTS).contains(&n) {
        return Err(Error::Config(format!("script count must be in 2..={MAX_SCRIPTS}, got {n}")));
    }
    if exclusive_per_script < 6 {
        return Err(Error::Config("each script needs at least 6 glyphs".into()));
    }
    let mut scripts = Vec::with_capacity(n);
    for s in 0..n {
        let mut rng = Rng::stream(seed, 1_000 + s as u64);
        let exclusive = distinct_glyphs(&[Primitive::of_family(s)], exclusive_per_script, &mut rng, &[])?;
        scripts.push(ScriptGlyphs { name: FAMILIES[s].to_string(), exclusive });
    }
    let shared = match shared_pair {
        None => Vec::new(),
        Some((c, d)) => {
            if c == d || c >= n || d >= n {
                return Err(Error::Config(format!("bad shared pair ({c}, {d}) for {n} scripts")));
            }
            let mut rng = Rng::stream(seed, 2_000);
            let kinds = [Primitive::of_family(c), Primitive::of_family(d)];
            let avoid: Vec<Glyph> = scripts.iter().flat_map(|s| s.exclusive.clone()).collect();
            distinct_glyphs(&kinds, shared_count, &mut rng, &avoid)?
        }
    };
    Ok((scripts, shared))
}

/// One glyph placed on the pre-scale canvas.
#[derive(Debug, Clone, Copy)]
pub struct Placement {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

fn seg_dist(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let (wx, wy) = (p.0 - a.0, p.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 == 0.0 { 0.0 } else { ((wx * vx + wy * vy) / len2).clamp(0.0, 1.0) };
    let (dx, dy) = (wx - t * vx, wy - t * vy);
    (dx * dx + dy * dy).sqrt()
}

/// Ink coverage in [0, 1] of glyphs on a `height x width` output raster.
/// `scale` maps pre-scale canvas units to output pixels; `pen` is the stroke
/// half-width in pre-scale units.
pub fn render(glyphs: &[(&Glyph, Placement)], height: usize, width: usize, scale: f64, pen: f64) -> Vec<f64> {
    let mut cov = vec![0.0f64; height * width];
    for (g, pl) in glyphs {
        let map = |(u, v): (f64, f64)| (pl.x + u / GRID * pl.w, pl.y + v / GRID * pl.h);
        let polys: Vec<(Primitive, Vec<(f64, f64)>)> =
            g.strokes.iter().map(|s| (s.kind, s.points.iter().copied().map(map).collect())).collect();
        let reach = pen + 2.5;
        let x_lo = (((pl.x - reach) * scale).floor().max(0.0)) as usize;
        let x_hi = ((((pl.x + pl.w + reach) * scale).ceil()) as usize).min(width);
        for oy in 0..height {
            for ox in x_lo..x_hi {
                let p = ((ox as f64 + 0.5) / scale, (oy as f64 + 0.5) / scale);
                let mut best = f64::INFINITY;
                for (kind, pts) in &polys {
                    let d = if pts.len() == 1 {
                        let r = if *kind == Primitive::Dot { 1.2 } else { 0.0 };
                        seg_dist(p, pts[0], pts[0]) - r
                    } else {
                        pts.windows(2).map(|w| seg_dist(p, w[0], w[1])).fold(f64::INFINITY, f64::min)
                    };
                    best = best.min(d);
                }
                // one output pixel spans 1/scale pre-scale units
                let c = ((pen - best) * scale + 0.5).clamp(0.0, 1.0);
                let slot = &mut cov[oy * width + ox];
                *slot = slot.max(c);
            }
        }
    }
    cov
}
