//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "AWCK" | u32 version | stage tag (u32 len + utf8)
//! u64 config hash | u64 step
//! u32 scalar count | { name (u32+utf8), u64 value }*
//! u32 block count  | { name (u32+utf8), u32 ndims, u64 dims*, f64 values* }*
//! u64 fnv-1a checksum of everything above
//! ```
//!
//! Scalars hold step counters and RNG states; blocks hold parameters and
//! optimizer moments. Loading restores training continuation bit-for-bit.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::hash::fnv1a64;
use crate::tensor::{Adam, Param};

const MAGIC: &[u8; 4] = b"AWCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub stage: String,
    pub config_hash: u64,
    pub step: u64,
    pub scalars: Vec<(String, u64)>,
    pub blocks: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl Checkpoint {
    pub fn new(stage: &str, config_hash: u64, step: u64) -> Checkpoint {
        Checkpoint {
            stage: stage.into(),
            config_hash,
            step,
            ..Checkpoint::default()
        }
    }

    pub fn put_scalar(&mut self, name: &str, value: u64) {
        self.scalars.push((name.into(), value));
    }

    pub fn scalar(&self, name: &str) -> Option<u64> {
        self.scalars.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn put_block(&mut self, name: &str, shape: &[usize], values: Vec<f64>) {
        self.blocks.push((name.into(), shape.to_vec(), values));
    }

    pub fn block(&self, name: &str) -> Option<(&[usize], &[f64])> {
        self.blocks
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, s, v)| (s.as_slice(), v.as_slice()))
    }

    /// Store a parameter list under each parameter's own name.
    pub fn put_params(&mut self, params: &[&Param]) {
        for p in params {
            self.put_block(p.name(), p.tensor().shape(), p.tensor().to_vec());
        }
    }

    /// Restore a parameter list; every parameter must be present with a
    /// matching shape.
    pub fn restore_params(&self, path: &Path, params: &[&Param]) -> Result<()> {
        for p in params {
            let (shape, values) = self.block(p.name()).ok_or_else(|| Error::Checkpoint {
                path: path.to_path_buf(),
                details: format!("missing parameter block `{}`", p.name()),
            })?;
            if shape != p.tensor().shape() {
                return Err(Error::Checkpoint {
                    path: path.to_path_buf(),
                    details: format!(
                        "parameter `{}` has shape {:?}, checkpoint holds {:?}",
                        p.name(),
                        p.tensor().shape(),
                        shape
                    ),
                });
            }
            p.set(values);
        }
        Ok(())
    }

    /// Store optimizer state under `<label>.t` / `<label>.{m,v}.<param>`.
    pub fn put_adam(&mut self, label: &str, adam: &Adam, params: &[&Param]) {
        let (t, m, v) = adam.export_state();
        self.put_scalar(&format!("{label}.t"), t);
        for (i, p) in params.iter().enumerate() {
            self.put_block(&format!("{label}.m.{}", p.name()), p.tensor().shape(), m[i].clone());
            self.put_block(&format!("{label}.v.{}", p.name()), p.tensor().shape(), v[i].clone());
        }
    }

    pub fn restore_adam(&self, path: &Path, label: &str, adam: &mut Adam, params: &[&Param]) -> Result<()> {
        let t = self.scalar(&format!("{label}.t")).ok_or_else(|| Error::Checkpoint {
            path: path.to_path_buf(),
            details: format!("missing optimizer counter `{label}.t`"),
        })?;
        let mut m = Vec::with_capacity(params.len());
        let mut v = Vec::with_capacity(params.len());
        for p in params {
            for (slot, kind) in [(&mut m, "m"), (&mut v, "v")] {
                let name = format!("{label}.{kind}.{}", p.name());
                let (_, values) = self.block(&name).ok_or_else(|| Error::Checkpoint {
                    path: path.to_path_buf(),
                    details: format!("missing optimizer block `{name}`"),
                })?;
                slot.push(values.to_vec());
            }
        }
        adam.restore_state(t, m, v)
    }

    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        push_string(&mut out, &self.stage);
        out.extend_from_slice(&self.config_hash.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.scalars.len() as u32).to_le_bytes());
        for (name, value) in &self.scalars {
            push_string(&mut out, name);
            out.extend_from_slice(&value.to_le_bytes());
        }
        out.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for (name, shape, values) in &self.blocks {
            push_string(&mut out, name);
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let checksum = fnv1a64(&out);
        out.extend_from_slice(&checksum.to_le_bytes());
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Checkpoint> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let fail = |details: &str| Error::Checkpoint {
            path: path.to_path_buf(),
            details: details.into(),
        };
        if bytes.len() < 8 + MAGIC.len() {
            return Err(fail("file too short"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().unwrap());
        let actual = fnv1a64(body);
        if stored != actual {
            return Err(fail(&format!(
                "checksum mismatch: trailer {stored:016x}, content {actual:016x}"
            )));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(fail("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(fail(&format!("unsupported version {version}")));
        }
        let stage = r.string()?;
        let config_hash = r.u64()?;
        let step = r.u64()?;
        let n_scalars = r.u32()? as usize;
        let mut scalars = Vec::with_capacity(n_scalars);
        for _ in 0..n_scalars {
            let name = r.string()?;
            scalars.push((name, r.u64()?));
        }
        let n_blocks = r.u32()? as usize;
        let mut blocks = Vec::with_capacity(n_blocks);
        for _ in 0..n_blocks {
            let name = r.string()?;
            let ndims = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndims);
            for _ in 0..ndims {
                shape.push(r.u64()? as usize);
            }
            let count: usize = shape.iter().product();
            let mut values = Vec::with_capacity(count);
            for _ in 0..count {
                values.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
            }
            blocks.push((name, shape, values));
        }
        if r.pos != body.len() {
            return Err(fail("trailing bytes after blocks"));
        }
        Ok(Checkpoint {
            stage,
            config_hash,
            step,
            scalars,
            blocks,
        })
    }

    /// Checksum of the encoded checkpoint, for provenance logging.
    pub fn content_hash(&self) -> u64 {
        fnv1a64(&self.encode())
    }
}

fn push_string(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint {
                path: "<memory>".into(),
                details: "unexpected end of file".into(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Checkpoint {
            path: "<memory>".into(),
            details: "non-utf8 name".into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test.awck");
        let mut ck = Checkpoint::new("stage1", 0xdeadbeef, 42);
        ck.put_scalar("rng.train", 12345);
        ck.put_block("w", &[2, 3], vec![1.0, -2.5, 3.25, 0.0, f64::MIN_POSITIVE, 6.0]);
        ck.write(&path).unwrap();
        let back = Checkpoint::read(&path).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn corrupt_byte_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test.awck");
        let mut ck = Checkpoint::new("stage1", 1, 0);
        ck.put_block("w", &[1], vec![1.0]);
        ck.write(&path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        fs::write(&path, bytes).unwrap();
        let err = Checkpoint::read(&path).unwrap_err();
        assert!(err.to_string().contains("checksum"));
    }

    #[test]
    fn params_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.awck");
        let p = Param::new("net.w", &[3], vec![0.5, -0.5, 0.25]).unwrap();
        let mut ck = Checkpoint::new("s", 0, 0);
        ck.put_params(&[&p]);
        ck.write(&path).unwrap();
        let back = Checkpoint::read(&path).unwrap();
        let q = Param::new("net.w", &[3], vec![0.0; 3]).unwrap();
        back.restore_params(&path, &[&q]).unwrap();
        assert_eq!(q.tensor().to_vec(), vec![0.5, -0.5, 0.25]);
    }
}
