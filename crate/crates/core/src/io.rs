//! Binary field dumps and CSV/JSON run artifacts.
//!
//! Dump layout, all little-endian:
//!
//! ```text
//! [0..8)   magic  b"CCHFIELD"
//! [8..12)  u32    format version (1)
//! [12..16) u32    reserved (0)
//! u32 kind (0 bulk, 1 pair), u32 nx, u32 ny, f64 Lx, f64 Ly, f64 t
//! nx*ny f64 bulk values, row-major (x fastest)
//! pairs only: nx f64 bottom wall, then nx f64 top wall
//! ```

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::analysis::StepDiagnostics;
use crate::control::OptResult;
use crate::error::{Error, Result};
use crate::grid::{FieldPair, Grid};

pub const MAGIC: [u8; 8] = *b"CCHFIELD";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16 + 4 * 3 + 8 * 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DumpKind {
    Bulk = 0,
    Pair = 1,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DumpHeader {
    pub kind: DumpKind,
    pub nx: u32,
    pub ny: u32,
    pub lx: f64,
    pub ly: f64,
    pub t: f64,
}

impl DumpHeader {
    fn payload_len(&self) -> usize {
        let (nx, ny) = (self.nx as usize, self.ny as usize);
        8 * match self.kind {
            DumpKind::Bulk => nx * ny,
            DumpKind::Pair => nx * ny + 2 * nx,
        }
    }
}

/// A dumped field; `bdry` is empty for bulk dumps.
#[derive(Debug, Clone, PartialEq)]
pub struct Dump {
    pub header: DumpHeader,
    pub bulk: Vec<f64>,
    pub bdry: Vec<f64>,
}

impl Dump {
    pub fn pair(&self) -> Option<FieldPair> {
        (self.header.kind == DumpKind::Pair).then(|| FieldPair {
            bulk: self.bulk.clone(),
            bdry: self.bdry.clone(),
        })
    }

    /// Checks the dump was written on a grid of the same shape as `g`.
    pub fn matches(&self, g: &Grid) -> bool {
        self.header.nx as usize == g.nx()
            && self.header.ny as usize == g.ny()
            && self.header.lx == g.lx()
            && self.header.ly == g.ly()
    }
}

fn encode(g: &Grid, t: f64, kind: DumpKind, bulk: &[f64], bdry: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * (bulk.len() + bdry.len()));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&(kind as u32).to_le_bytes());
    out.extend_from_slice(&(g.nx() as u32).to_le_bytes());
    out.extend_from_slice(&(g.ny() as u32).to_le_bytes());
    for v in [g.lx(), g.ly(), t] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in bulk.iter().chain(bdry) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn dump_bulk(g: &Grid, field: &[f64], t: f64, path: impl AsRef<Path>) -> Result<()> {
    crate::error::check_len("bulk field", g.n_bulk(), field.len())?;
    std::fs::write(path, encode(g, t, DumpKind::Bulk, field, &[]))?;
    Ok(())
}

/// Boundary values are stored bottom wall then top wall, which is the
/// boundary ordering of [`Grid`].
pub fn dump_pair(g: &Grid, field: &FieldPair, t: f64, path: impl AsRef<Path>) -> Result<()> {
    crate::error::check_len("bulk field", g.n_bulk(), field.bulk.len())?;
    crate::error::check_len("boundary field", g.n_bdry(), field.bdry.len())?;
    std::fs::write(path, encode(g, t, DumpKind::Pair, &field.bulk, &field.bdry))?;
    Ok(())
}

pub fn decode(bytes: &[u8]) -> Result<Dump> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "truncated header: expected {HEADER_LEN} bytes, got {}",
            bytes.len()
        )));
    }
    if bytes[..8] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let version = u32_at(8);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let kind = match u32_at(16) {
        0 => DumpKind::Bulk,
        1 => DumpKind::Pair,
        k => return Err(Error::Format(format!("unknown kind {k}"))),
    };
    let header = DumpHeader {
        kind,
        nx: u32_at(20),
        ny: u32_at(24),
        lx: f64_at(28),
        ly: f64_at(36),
        t: f64_at(44),
    };
    let expected = HEADER_LEN + header.payload_len();
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "length mismatch: expected {expected} bytes, got {}",
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let n_bulk = header.nx as usize * header.ny as usize;
    Ok(Dump {
        header,
        bulk: values[..n_bulk].to_vec(),
        bdry: values[n_bulk..].to_vec(),
    })
}

pub fn read_dump(path: impl AsRef<Path>) -> Result<Dump> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

pub fn write_diagnostics(rows: &[StepDiagnostics], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRow {
    pub iter: usize,
    #[serde(rename = "J")]
    pub j: f64,
    pub grad_norm: f64,
    pub step: f64,
    pub vi_residual: f64,
}

pub fn iteration_rows(res: &OptResult) -> Vec<IterationRow> {
    (0..res.j_history.len())
        .map(|k| IterationRow {
            iter: k,
            j: res.j_history[k],
            grad_norm: res.grad_norm_history[k],
            step: res.step_history[k],
            vi_residual: res.vi_history[k],
        })
        .collect()
}

pub fn write_iterations(res: &OptResult, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in iteration_rows(res) {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(std::io::Error::other)?;
    w.write_all(b"\n")?;
    Ok(())
}
