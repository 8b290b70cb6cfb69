//! Checkpoint persistence.
//!
//! Format `TDNAV1`, little-endian throughout:
//!
//! ```text
//! magic          6 bytes "TDNAV1"
//! version        u8 = 1
//! n_branch_keys  u32, then per key: len u32 + utf8 bytes
//! n_blocks       u32, then per block: name (len u32 + utf8),
//!                out_dim u32, in_dim u32
//! data           per block in header order: weights row-major then bias,
//!                f32 bits as u32
//! ```
//!
//! Round-trips are bit-exact: floats travel as raw bits.

use std::fs;
use std::path::Path;

use super::{NumericsError, OptimConfig, ParamBlock, ParamStore, UpdateMode};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"TDNAV1";
const CHECKPOINT_VERSION: u8 = 1;

/// Deserialized checkpoint: branch keys plus every parameter block in
/// file order (sorted by name at save time).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub branch_keys: Vec<String>,
    pub blocks: Vec<ParamBlock>,
}

/// Saves every block of `store` (sorted by name) with the given
/// scene-branch key list.
pub fn save_checkpoint(
    store: &ParamStore,
    branch_keys: &[String],
    path: &Path,
) -> Result<(), NumericsError> {
    let blocks = store.snapshot_all();
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.push(CHECKPOINT_VERSION);
    buf.extend_from_slice(&(branch_keys.len() as u32).to_le_bytes());
    for key in branch_keys {
        write_str(&mut buf, key);
    }
    buf.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for b in &blocks {
        write_str(&mut buf, &b.name);
        buf.extend_from_slice(&(b.out_dim as u32).to_le_bytes());
        buf.extend_from_slice(&(b.in_dim as u32).to_le_bytes());
    }
    for b in &blocks {
        for v in b.weights.iter().chain(&b.bias) {
            buf.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

fn write_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

/// Loads a checkpoint file.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, NumericsError> {
    let bytes = fs::read(path)?;
    let mut c = Cursor { bytes: &bytes, at: 0, path };
    if c.take(CHECKPOINT_MAGIC.len(), "magic")? != CHECKPOINT_MAGIC {
        return Err(c.bad("bad magic, not a TDNAV1 file"));
    }
    let version = c.take(1, "version")?[0];
    if version != CHECKPOINT_VERSION {
        return Err(c.bad(&format!("unsupported version {version}")));
    }
    let n_keys = c.u32("n_branch_keys")? as usize;
    let mut branch_keys = Vec::with_capacity(n_keys);
    for _ in 0..n_keys {
        branch_keys.push(c.string("branch key")?);
    }
    let n_blocks = c.u32("n_blocks")? as usize;
    let mut headers = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        let name = c.string("block name")?;
        let out_dim = c.u32("out_dim")? as usize;
        let in_dim = c.u32("in_dim")? as usize;
        headers.push((name, out_dim, in_dim));
    }
    let mut blocks = Vec::with_capacity(n_blocks);
    for (name, out_dim, in_dim) in headers {
        let mut read_f32s = |n: usize, what: &str| -> Result<Vec<f32>, NumericsError> {
            let raw = c.take(n * 4, what)?;
            Ok(raw
                .chunks_exact(4)
                .map(|b| f32::from_bits(u32::from_le_bytes(b.try_into().unwrap())))
                .collect())
        };
        let weights = read_f32s(out_dim * in_dim, "weights")?;
        let bias = read_f32s(out_dim, "bias")?;
        blocks.push(ParamBlock { name, out_dim, in_dim, weights, bias });
    }
    if c.at != bytes.len() {
        return Err(c.bad("trailing bytes after parameter data"));
    }
    Ok(Checkpoint { branch_keys, blocks })
}

/// Builds a fresh store (zeroed optimizer statistics) holding the
/// checkpoint's blocks.
pub fn store_from_checkpoint(
    ckpt: &Checkpoint,
    mode: UpdateMode,
    optim: OptimConfig,
) -> Result<ParamStore, NumericsError> {
    let store = ParamStore::new(mode, optim);
    for block in &ckpt.blocks {
        store.insert(block.clone())?;
    }
    Ok(store)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], NumericsError> {
        if self.at + n > self.bytes.len() {
            return Err(self.bad(&format!("truncated reading {what}")));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, NumericsError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String, NumericsError> {
        let len = self.u32(what)? as usize;
        if len > 4096 {
            return Err(self.bad(&format!("{what} length {len} is implausible")));
        }
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.bad(&format!("{what} is not utf8")))
    }

    fn bad(&self, reason: &str) -> NumericsError {
        NumericsError::Format {
            path: self.path.display().to_string(),
            reason: reason.to_string(),
        }
    }
}
