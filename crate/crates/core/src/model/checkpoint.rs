//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! "SSID"  u32 version
//! u32 record length, record bytes (UTF-8 key=value lines)
//! u32 tensor count
//! per tensor: u16 name length, name, u8 rank, rank x u32 dims, f64 data
//! ```
//!
//! The record holds the architecture plus `seed` and `step`, so a file
//! fully describes the model it came from.

use std::fs;
use std::path::Path;

use super::{ArchConfig, Model};
use crate::error::{Error, Result};
use crate::layers::Parameters;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"SSID";
pub const VERSION: u32 = 1;

fn all_tensors(m: &Model) -> Vec<(String, &Tensor)> {
    let mut v = Vec::new();
    m.collect("", &mut v);
    m.collect_state(&mut v);
    v
}

pub fn to_bytes(m: &Model) -> Vec<u8> {
    let record = format!("{}seed={}\nstep={}\n", m.config.to_record(), m.seed, m.step);
    let tensors = all_tensors(m);
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(record.len() as u32).to_le_bytes());
    out.extend_from_slice(record.as_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(Error::Truncated(what))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u16(&mut self, what: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }
}

fn split_record(text: &str) -> Result<(String, u64, u64)> {
    let mut arch = String::new();
    let (mut seed, mut step) = (None, None);
    for line in text.lines() {
        let num = |v: &str| v.parse::<u64>().map_err(|_| Error::Config(format!("bad value in {line:?}")));
        if let Some(v) = line.strip_prefix("seed=") {
            seed = Some(num(v)?);
        } else if let Some(v) = line.strip_prefix("step=") {
            step = Some(num(v)?);
        } else {
            arch.push_str(line);
            arch.push('\n');
        }
    }
    match (seed, step) {
        (Some(a), Some(b)) => Ok((arch, a, b)),
        _ => Err(Error::Config("checkpoint record lacks seed or step".into())),
    }
}

fn read_tensors(r: &mut Reader<'_>, slots: Vec<(String, &mut Tensor)>) -> Result<()> {
    for (expected_name, slot) in slots {
        let n = r.u16("tensor name length")? as usize;
        let name = String::from_utf8_lossy(r.take(n, "tensor name")?).into_owned();
        if name != expected_name {
            return Err(Error::ShapeTable(format!("expected tensor `{expected_name}`, found `{name}`")));
        }
        let rank = r.take(1, "tensor rank")?[0] as usize;
        let dims = (0..rank).map(|_| r.u32("tensor dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if dims != slot.shape() {
            return Err(Error::ShapeTable(format!(
                "tensor `{name}` has shape {dims:?}, config implies {:?}",
                slot.shape()
            )));
        }
        let raw = r.take(8 * slot.len(), "tensor data")?;
        for (v, c) in slot.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(c.try_into().expect("8 bytes"));
        }
    }
    Ok(())
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::VersionMismatch { found: version, expected: VERSION });
    }
    let len = r.u32("config record length")? as usize;
    let record = std::str::from_utf8(r.take(len, "config record")?)
        .map_err(|_| Error::Config("config record is not UTF-8".into()))?;
    let (arch, seed, step) = split_record(record)?;
    let config = ArchConfig::from_record(&arch)?;
    let mut model = Model::build(config, seed)?;
    model.step = step;

    let count = r.u32("tensor count")? as usize;
    let expected = all_tensors(&model).len();
    if count != expected {
        return Err(Error::ShapeTable(format!("file has {count} tensors, config implies {expected}")));
    }
    let mut slots = Vec::new();
    model.collect_mut("", &mut slots);
    read_tensors(&mut r, slots)?;
    let mut slots = Vec::new();
    model.collect_state_mut(&mut slots);
    read_tensors(&mut r, slots)?;
    if r.pos != bytes.len() {
        return Err(Error::ShapeTable(format!("{} trailing bytes after the tensor table", bytes.len() - r.pos)));
    }
    Ok(model)
}

pub fn save(m: &Model, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(m)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Mode;
    use crate::tensor::Rng;

    fn scripts(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    fn trained_ish(cfg: ArchConfig) -> Model {
        let mut m = Model::build(cfg, 9).unwrap();
        let mut rng = Rng::new(1);
        let xs: Vec<Tensor> = (0..3).map(|_| rng.normal_tensor(&[24, 16, 1], 1.0).unwrap()).collect();
        m.forward_batch(&xs, Mode::Train).unwrap();
        m.step = 17;
        m
    }

    #[test]
    fn default_round_trip_is_bit_exact() {
        let m = trained_ish(ArchConfig::new(scripts(4)));
        let bytes = to_bytes(&m);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(to_bytes(&back), bytes);
        // running statistics travel too
        assert!(back.norms[0].as_ref().unwrap().running_var.data().iter().any(|&v| v != 1.0));
    }

    #[test]
    fn config_travels_with_the_file() {
        let mut cfg = ArchConfig::tiny(scripts(3)).without_attention();
        cfg.use_residual = false;
        let m = trained_ish(cfg.clone());
        assert_eq!(from_bytes(&to_bytes(&m)).unwrap().config, cfg);
    }

    #[test]
    fn corruption_is_typed() {
        let m = trained_ish(ArchConfig::tiny(scripts(2)));
        let good = to_bytes(&m);

        let mut b = good.clone();
        b[0] = b'X';
        assert!(matches!(from_bytes(&b), Err(Error::BadMagic(_))));

        let mut b = good.clone();
        b[4] = 2;
        assert!(matches!(from_bytes(&b), Err(Error::VersionMismatch { found: 2, expected: 1 })));

        for cut in [0, 3, 7, 20, good.len() / 2, good.len() - 1] {
            assert!(matches!(from_bytes(&good[..cut]), Err(Error::Truncated(_))), "cut at {cut}");
        }

        let mut b = good.clone();
        b.push(0);
        assert!(matches!(from_bytes(&b), Err(Error::ShapeTable(_))));

        // swap one tensor name's first byte
        let name_at = good.windows(11).position(|w| w == b"conv1.weigh").unwrap();
        let mut b = good.clone();
        b[name_at] = b'x';
        assert!(matches!(from_bytes(&b), Err(Error::ShapeTable(_))));

        // change a dimension
        let dim_at = name_at + "conv1.weight".len() + 1;
        let mut b = good.clone();
        b[dim_at] = 5;
        assert!(matches!(from_bytes(&b), Err(Error::ShapeTable(_))));

        // garbage in the config record
        let rec_at = 12;
        let mut b = good;
        b[rec_at..rec_at + 5].copy_from_slice(b"zzzzz");
        assert!(matches!(from_bytes(&b), Err(Error::Config(_))));
    }

    #[test]
    fn save_and_load_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ssid");
        let m = trained_ish(ArchConfig::tiny(scripts(2)));
        save(&m, &p).unwrap();
        assert_eq!(load(&p).unwrap(), m);
        assert!(matches!(load(&dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
