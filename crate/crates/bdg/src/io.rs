//! CSV tables and JSON records.
//!
//! CSV files follow RFC 4180 with a header row and fixed column order. JSON records
//! carry the command that produced them, so a record can be replayed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use bdg_core::oide::SolutionGrid;
use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const GRID_COLUMNS: [&str; 3] = ["t", "U", "analytic_floor"];
pub const SURFACE_COLUMNS: [&str; 5] = ["t", "b", "bstar", "U", "H"];
pub const DENSITY_COLUMNS: [&str; 3] = ["s", "f_h", "g"];

/// A JSON output: what was run and what it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record<C, R> {
    pub tool: String,
    pub version: String,
    pub command: C,
    pub result: R,
}

impl<C, R> Record<C, R> {
    pub fn new(command: C, result: R) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command,
            result,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceRow {
    pub t: f64,
    pub b: f64,
    pub bstar: f64,
    #[serde(rename = "U")]
    pub u: f64,
    #[serde(rename = "H")]
    pub h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityRow {
    pub s: f64,
    pub f_h: f64,
    pub g: f64,
}

fn write_rows<W: Write, const N: usize>(out: W, header: [&str; N], rows: impl Iterator<Item = [f64; N]>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|x| format!("{x:e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Rows `t, U, t^{p/2} - C` in increasing `t`.
pub fn write_grid_csv<W: Write>(out: W, grid: &SolutionGrid) -> Result<()> {
    write_rows(out, GRID_COLUMNS, grid.rows().map(|(t, u, f)| [t, u, f]))
}

pub fn write_surface_csv<W: Write>(out: W, rows: &[SurfaceRow]) -> Result<()> {
    write_rows(out, SURFACE_COLUMNS, rows.iter().map(|r| [r.t, r.b, r.bstar, r.u, r.h]))
}

pub fn write_density_csv<W: Write>(out: W, rows: &[DensityRow]) -> Result<()> {
    write_rows(out, DENSITY_COLUMNS, rows.iter().map(|r| [r.s, r.f_h, r.g]))
}

/// Reads a CSV written by one of the writers above back into rows of numbers.
pub fn read_table<P: AsRef<Path>>(path: P) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|x| x.parse::<f64>().map_err(|e| crate::Error::Config(format!("bad number {x:?}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

pub fn write_json<W: Write, T: Serialize>(mut out: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// Buffered file, or stdout for `None`.
pub fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}
