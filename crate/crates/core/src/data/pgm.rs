//! Binary greyscale PGM (P5), 8-bit.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Largest accepted pixel count; anything bigger is treated as corrupt.
pub const MAX_PIXELS: usize = 1 << 26;

/// Encodes an `[H, W]` or `[H, W, 1]` image with values in [0, 1].
pub fn write_pgm(image: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = match image.shape() {
        &[h, w] | &[h, w, 1] => (h, w),
        s => return Err(Error::Shape(format!("pgm image must be [H, W] or [H, W, 1], got {s:?}"))),
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(image.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::PgmHeader(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| Error::PgmHeader(format!("{what} does not fit in usize")))
    }
}

/// Decodes a P5 file to `[H, W, 1]` with values in [0, 1].
pub fn read_pgm(bytes: &[u8]) -> Result<Tensor> {
    if !bytes.starts_with(b"P5") {
        return Err(Error::PgmHeader("missing P5 magic".into()));
    }
    let mut hd = Header { bytes, pos: 2 };
    let w = hd.number("width")?;
    let h = hd.number("height")?;
    let maxval = hd.number("maxval")?;
    if !(1..=255).contains(&maxval) {
        return Err(Error::PgmHeader(format!("maxval {maxval} unsupported (need 1..=255)")));
    }
    match bytes.get(hd.pos) {
        Some(b) if b.is_ascii_whitespace() => hd.pos += 1,
        _ => return Err(Error::PgmHeader("no whitespace after maxval".into())),
    }
    let n =
        w.checked_mul(h).filter(|&n| n > 0 && n <= MAX_PIXELS).ok_or(Error::PgmDimensions { width: w, height: h })?;
    let payload = &bytes[hd.pos..];
    if payload.len() < n {
        return Err(Error::PgmTruncated { expected: n, found: payload.len() });
    }
    let scale = maxval as f64;
    let data = payload[..n].iter().map(|&b| (b as f64 / scale).min(1.0)).collect();
    Tensor::from_vec(&[h, w, 1], data)
}
