//! Channel knowledge map: grid index to representative quasi-static paths.
//!
//! Tables are stored as JSON; the cached inverse Gram matrices go into an
//! optional binary sidecar (`CKMG`, u16 version, u32 entry count, then per
//! entry u32 grid id, u32 size and the row-major complex matrix as
//! little-endian interleaved `f64`).

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{ArrayDims, PathParams};
use crate::CMatrix;

pub const GRAM_MAGIC: &[u8; 4] = b"CKMG";
pub const GRAM_VERSION: u16 = 1;

/// One path of a table entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CkmRow {
    pub tau: f64,
    pub theta: f64,
    pub phi: f64,
    pub rho: f64,
}

impl CkmRow {
    pub fn params(&self) -> PathParams {
        PathParams::new(self.tau, self.theta, self.phi)
    }
}

/// Paths of one grid plus the optional cached `(A(0)^H A(0))^{-1}` over all
/// subcarriers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CkmEntry {
    pub grid_id: usize,
    pub l_s: usize,
    pub rows: Vec<CkmRow>,
    #[serde(skip)]
    pub gram_inverse: Option<CMatrix>,
}

impl CkmEntry {
    pub fn paths(&self) -> Vec<PathParams> {
        self.rows.iter().map(CkmRow::params).collect()
    }

    pub fn powers(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.rho).collect()
    }

    /// Entry without a cached Gram inverse.
    pub fn from_paths(grid_id: usize, paths: &[PathParams], powers: &[f64]) -> Self {
        let rows: Vec<CkmRow> = paths
            .iter()
            .zip(powers)
            .map(|(p, &rho)| CkmRow {
                tau: p.tau,
                theta: p.theta,
                phi: p.phi,
                rho,
            })
            .collect();
        CkmEntry {
            grid_id,
            l_s: rows.len(),
            rows,
            gram_inverse: None,
        }
    }

    pub fn empty(grid_id: usize) -> Self {
        CkmEntry {
            grid_id,
            l_s: 0,
            rows: Vec::new(),
            gram_inverse: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CkmTable {
    pub dims: ArrayDims,
    pub grids: Vec<CkmEntry>,
}

impl CkmTable {
    pub fn new(dims: ArrayDims) -> Self {
        CkmTable {
            dims,
            grids: Vec::new(),
        }
    }

    pub fn entry(&self, grid_id: usize) -> Option<&CkmEntry> {
        self.grids.iter().find(|e| e.grid_id == grid_id)
    }

    /// Inserts or replaces the entry of a grid, keeping grids sorted.
    pub fn insert(&mut self, entry: CkmEntry) {
        self.grids.retain(|e| e.grid_id != entry.grid_id);
        self.grids.push(entry);
        self.grids.sort_by_key(|e| e.grid_id);
    }
}

/// Sidecar path holding cached Gram inverses.
pub fn gram_sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".gram");
    PathBuf::from(s)
}

fn gram_bytes(table: &CkmTable) -> Vec<u8> {
    let cached: Vec<&CkmEntry> = table.grids.iter().filter(|e| e.gram_inverse.is_some()).collect();
    let mut out = Vec::new();
    out.extend_from_slice(GRAM_MAGIC);
    out.extend_from_slice(&GRAM_VERSION.to_le_bytes());
    out.extend_from_slice(&(cached.len() as u32).to_le_bytes());
    for e in cached {
        let g = e.gram_inverse.as_ref().expect("filtered");
        out.extend_from_slice(&(e.grid_id as u32).to_le_bytes());
        out.extend_from_slice(&(g.nrows() as u32).to_le_bytes());
        for r in 0..g.nrows() {
            for c in 0..g.ncols() {
                out.extend_from_slice(&g[(r, c)].re.to_le_bytes());
                out.extend_from_slice(&g[(r, c)].im.to_le_bytes());
            }
        }
    }
    out
}

fn read_grams(bytes: &[u8], table: &mut CkmTable) -> Result<()> {
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if pos + n > bytes.len() {
            return Err(Error::Truncated { needed: pos + n });
        }
        let s = &bytes[pos..pos + n];
        pos += n;
        Ok(s)
    };
    if take(4)? != GRAM_MAGIC {
        return Err(Error::Format("bad Gram sidecar magic (expected CKMG)".into()));
    }
    let version = u16::from_le_bytes(take(2)?.try_into().expect("2 bytes"));
    if version != GRAM_VERSION {
        return Err(Error::Version {
            found: version,
            expected: GRAM_VERSION,
        });
    }
    let count = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
    for _ in 0..count {
        let grid = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let n = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let mut g = CMatrix::zeros(n, n);
        for r in 0..n {
            for c in 0..n {
                let re = f64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
                let im = f64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
                g[(r, c)] = Complex64::new(re, im);
            }
        }
        let entry = table
            .grids
            .iter_mut()
            .find(|e| e.grid_id == grid)
            .ok_or_else(|| Error::Format(format!("Gram sidecar names unknown grid {grid}")))?;
        if n != entry.rows.len() {
            return Err(Error::Dimension(format!(
                "grid {grid}: cached Gram is {n}x{n} but the entry has {} paths",
                entry.rows.len()
            )));
        }
        entry.gram_inverse = Some(g);
    }
    Ok(())
}

/// Writes the JSON table and, if any entry caches a Gram inverse, the
/// binary sidecar.
pub fn write_table(path: &Path, table: &CkmTable) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(table)?)?;
    let side = gram_sidecar_path(path);
    if table.grids.iter().any(|e| e.gram_inverse.is_some()) {
        fs::write(side, gram_bytes(table))?;
    } else if side.exists() {
        fs::remove_file(side)?;
    }
    Ok(())
}

/// Reads a table and its sidecar when present.
pub fn read_table(path: &Path) -> Result<CkmTable> {
    let mut table: CkmTable = serde_json::from_str(&fs::read_to_string(path)?)?;
    for e in &table.grids {
        if e.l_s != e.rows.len() {
            return Err(Error::Format(format!(
                "grid {}: l_s = {} but {} rows",
                e.grid_id,
                e.l_s,
                e.rows.len()
            )));
        }
    }
    let side = gram_sidecar_path(path);
    if side.exists() {
        read_grams(&fs::read(side)?, &mut table)?;
    }
    Ok(table)
}
