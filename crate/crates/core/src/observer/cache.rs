//! On-disk cache for kernel banks.
//!
//! Files are named `<key>.kern` where `key` is the hex SHA-256 of the grid
//! bounds and sizes, the growth-rate samples and the gain list (all as
//! little-endian `f64`/`u64`). Layout, all integers and floats little-endian:
//!
//! ```text
//! magic    8 bytes   "CSDKERN1"
//! key     32 bytes   SHA-256 digest, must match the file name
//! p        u64       number of gains
//! n_t      u64
//! n_x      u64
//! lambdas  p x f64
//! values   p x n_t x n_x f64, gain-major then time then size
//! ```
//!
//! Any change of grid, growth or gains changes the key, so stale entries are
//! never read. A file whose header does not match is recomputed and replaced.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{KernelBank, LambdaBank};
use crate::error::Result;
use crate::grid::{Grid, Signal};

const MAGIC: &[u8; 8] = b"CSDKERN1";

#[derive(Debug, Clone)]
pub struct KernelCache {
    dir: PathBuf,
}

impl KernelCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        KernelCache { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key(lambdas: &LambdaBank, rate: &Signal, grid: &Grid) -> [u8; 32] {
        let mut h = Sha256::new();
        for v in [grid.x_min, grid.x_max, grid.t0, grid.t1] {
            h.update(v.to_le_bytes());
        }
        h.update((grid.n_x as u64).to_le_bytes());
        h.update((grid.n_t as u64).to_le_bytes());
        h.update((rate.len() as u64).to_le_bytes());
        for (&t, &g) in rate.times().iter().zip(rate.values()) {
            h.update(t.to_le_bytes());
            h.update(g.to_le_bytes());
        }
        h.update((lambdas.len() as u64).to_le_bytes());
        for l in lambdas.values() {
            h.update(l.to_le_bytes());
        }
        h.finalize().into()
    }

    pub fn path_for(&self, key: &[u8; 32]) -> PathBuf {
        let name: String = key.iter().map(|b| format!("{b:02x}")).collect();
        self.dir.join(format!("{name}.kern"))
    }

    /// Returns the cached bank or computes and stores it. The flag is `true`
    /// on a cache hit.
    pub fn load_or_compute(&self, lambdas: &LambdaBank, rate: &Signal, grid: &Grid) -> Result<(KernelBank, bool)> {
        let key = Self::key(lambdas, rate, grid);
        let path = self.path_for(&key);
        if let Some(values) = read_entry(&path, &key, lambdas, grid) {
            let bank = KernelBank::from_parts(*grid, lambdas.clone(), rate.clone(), values)?;
            return Ok((bank, true));
        }
        let bank = KernelBank::compute(lambdas, rate, grid)?;
        fs::create_dir_all(&self.dir)?;
        write_entry(&path, &key, &bank)?;
        Ok((bank, false))
    }
}

fn write_entry(path: &Path, key: &[u8; 32], bank: &KernelBank) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(key)?;
        let g = bank.grid();
        for n in [bank.len(), g.n_t, g.n_x] {
            w.write_all(&(n as u64).to_le_bytes())?;
        }
        for l in bank.lambdas().values() {
            w.write_all(&l.to_le_bytes())?;
        }
        for v in bank.values() {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

fn read_entry(path: &Path, key: &[u8; 32], lambdas: &LambdaBank, grid: &Grid) -> Option<Vec<f64>> {
    let bytes = fs::read(path).ok()?;
    let (p, n_t, n_x) = (lambdas.len(), grid.n_t, grid.n_x);
    let header = 8 + 32 + 24 + 8 * p;
    if bytes.len() != header + 8 * p * n_t * n_x || &bytes[..8] != MAGIC || &bytes[8..40] != key {
        return None;
    }
    let word = |i: usize| -> [u8; 8] { bytes[i..i + 8].try_into().unwrap() };
    let dims: Vec<usize> = (0..3).map(|d| u64::from_le_bytes(word(40 + 8 * d)) as usize).collect();
    if dims != [p, n_t, n_x] {
        return None;
    }
    let stored = (0..p).map(|i| f64::from_le_bytes(word(64 + 8 * i)));
    if !stored.zip(lambdas.values()).all(|(a, &b)| a == b) {
        return None;
    }
    Some(bytes[header..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}
