//! Photometric and geometric augmentation for training crops.

use crate::tensor::{Rng, Tensor};

pub const APPLY_PROB: f64 = 0.5;
pub const CONTRAST_RANGE: (f64, f64) = (0.5, 1.5);
pub const MAX_NOISE: f64 = 0.08;
/// Largest corner displacement as a fraction of each dimension.
pub const MAX_WARP: f64 = 0.08;

/// One concrete draw of the augmentation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentDraw {
    pub contrast: Option<f64>,
    pub noise_sigma: Option<f64>,
    /// Corner offsets `(dx, dy)` in pixels, clockwise from top-left.
    pub warp: Option<[(f64, f64); 4]>,
}

impl AugmentDraw {
    pub fn identity() -> Self {
        AugmentDraw { contrast: None, noise_sigma: None, warp: None }
    }

    pub fn sample(h: usize, w: usize, rng: &mut Rng) -> Self {
        let contrast = rng.chance(APPLY_PROB).then(|| rng.uniform(CONTRAST_RANGE.0, CONTRAST_RANGE.1));
        let noise_sigma = rng.chance(APPLY_PROB).then(|| rng.uniform(0.0, MAX_NOISE));
        let warp = rng.chance(APPLY_PROB).then(|| {
            let (mx, my) = (MAX_WARP * w as f64, MAX_WARP * h as f64);
            [(); 4].map(|_| (rng.uniform(-mx, mx), rng.uniform(-my, my)))
        });
        AugmentDraw { contrast, noise_sigma, warp }
    }
}

/// Randomly augments an `[H, W, 1]` image. Shape is preserved and values
/// stay in [0, 1].
pub fn augment(image: &Tensor, rng: &mut Rng) -> Tensor {
    let draw = AugmentDraw::sample(image.dim(0), image.dim(1), rng);
    apply(image, &draw, rng)
}

/// Applies `draw`; `rng` feeds the noise only.
pub fn apply(image: &Tensor, draw: &AugmentDraw, rng: &mut Rng) -> Tensor {
    let (h, w) = (image.dim(0), image.dim(1));
    let mut out = image.clone();
    if let Some(c) = draw.contrast {
        let mean = out.sum() / out.len() as f64;
        out = out.map(|v| mean + c * (v - mean));
    }
    if let Some(s) = draw.noise_sigma {
        for v in out.data_mut() {
            *v += s * rng.normal();
        }
    }
    if let Some(offsets) = draw.warp {
        out = warp(&out, h, w, &offsets);
    }
    out.map(|v| v.clamp(0.0, 1.0))
}

/// Solves `a x = b` (n x n, row-major) by Gaussian elimination with
/// partial pivoting. Returns `None` when singular.
pub fn solve(mut a: Vec<f64>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if a[piv * n + col].abs() < 1e-12 {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
            }
            b.swap(piv, col);
        }
        for r in col + 1..n {
            let f = a[r * n + col] / a[col * n + col];
            for k in col..n {
                a[r * n + k] -= f * a[col * n + k];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r * n + k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r * n + r];
    }
    Some(x)
}

/// Homography (h33 = 1) taking each `src[i]` to `dst[i]`.
pub fn homography(src: &[(f64, f64); 4], dst: &[(f64, f64); 4]) -> Option<[f64; 9]> {
    let mut a = Vec::with_capacity(64);
    let mut b = Vec::with_capacity(8);
    for (&(x, y), &(u, v)) in src.iter().zip(dst) {
        a.extend([x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]);
        b.push(u);
        a.extend([0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]);
        b.push(v);
    }
    let s = solve(a, b)?;
    Some([s[0], s[1], s[2], s[3], s[4], s[5], s[6], s[7], 1.0])
}

fn apply_h(m: &[f64; 9], x: f64, y: f64) -> (f64, f64) {
    let z = m[6] * x + m[7] * y + m[8];
    ((m[0] * x + m[1] * y + m[2]) / z, (m[3] * x + m[4] * y + m[5]) / z)
}

fn bilinear(img: &Tensor, h: usize, w: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let d = img.data();
    let p = |yy: usize, xx: usize| d[yy * w + xx];
    (1.0 - fy) * ((1.0 - fx) * p(y0, x0) + fx * p(y0, x1)) + fy * ((1.0 - fx) * p(y1, x0) + fx * p(y1, x1))
}

/// Perspective warp moving the image corners by `offsets`, resampled
/// bilinearly with edge clamping.
pub fn warp(img: &Tensor, h: usize, w: usize, offsets: &[(f64, f64); 4]) -> Tensor {
    let (wf, hf) = ((w - 1) as f64, (h - 1) as f64);
    let corners = [(0.0, 0.0), (wf, 0.0), (wf, hf), (0.0, hf)];
    let moved: [(f64, f64); 4] = std::array::from_fn(|i| (corners[i].0 + offsets[i].0, corners[i].1 + offsets[i].1));
    // inverse map: output pixel -> source position
    let Some(m) = homography(&moved, &corners) else {
        return img.clone();
    };
    let mut out = img.zeros_like();
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = apply_h(&m, x as f64, y as f64);
            out.data_mut()[y * w + x] = bilinear(img, h, w, sx, sy);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Tensor {
        let data = (0..h * w).map(|i| (i % w) as f64 / w as f64 * 0.8 + 0.1).collect();
        Tensor::from_vec(&[h, w, 1], data).unwrap()
    }

    #[test]
    fn identity_draw_is_noop() {
        let img = ramp(24, 40);
        let mut rng = Rng::new(1);
        assert_eq!(apply(&img, &AugmentDraw::identity(), &mut rng), img);
        let neutral = AugmentDraw { contrast: Some(1.0), noise_sigma: Some(0.0), warp: None };
        let out = apply(&img, &neutral, &mut rng);
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-15);
        }
        let zero_warp = AugmentDraw { warp: Some([(0.0, 0.0); 4]), ..AugmentDraw::identity() };
        let out = apply(&img, &zero_warp, &mut rng);
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn noise_statistics() {
        let img = Tensor::new(&[24, 200, 1], 0.5).unwrap();
        let draw = AugmentDraw { noise_sigma: Some(0.08), ..AugmentDraw::identity() };
        let out = apply(&img, &draw, &mut Rng::new(2));
        let n = out.len() as f64;
        let mean = out.sum() / n;
        let sd = (out.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((0.06..=0.10).contains(&sd), "{sd}");
    }

    #[test]
    fn contrast_scales_about_mean() {
        let img = ramp(4, 10);
        let mean = img.sum() / img.len() as f64;
        let draw = AugmentDraw { contrast: Some(0.5), ..AugmentDraw::identity() };
        let out = apply(&img, &draw, &mut Rng::new(3));
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - (mean + 0.5 * (b - mean))).abs() < 1e-12);
        }
    }

    #[test]
    fn homography_maps_corners() {
        let src = [(0.0, 0.0), (10.0, 0.0), (10.0, 5.0), (0.0, 5.0)];
        let dst = [(1.0, 0.5), (9.0, -0.3), (10.5, 5.2), (-0.4, 4.6)];
        let m = homography(&src, &dst).unwrap();
        for (s, d) in src.iter().zip(&dst) {
            let (u, v) = apply_h(&m, s.0, s.1);
            assert!((u - d.0).abs() < 1e-9 && (v - d.1).abs() < 1e-9);
        }
        assert!(solve(vec![1.0, 2.0, 2.0, 4.0], vec![1.0, 2.0]).is_none());
    }

    #[test]
    fn augment_keeps_shape_and_range() {
        let img = ramp(24, 33);
        let mut rng = Rng::new(4);
        for _ in 0..50 {
            let out = augment(&img, &mut rng);
            assert_eq!(out.shape(), img.shape());
            assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
