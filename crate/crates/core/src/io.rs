//! Text file formats for systems, datasets and estimates.
//!
//! Files are TOML documents with named fields. Matrices are arrays of rows
//! and every float is written with 17 significant digits, so a write/read
//! cycle reproduces values bit for bit.
//!
//! ```toml
//! format_version = 1
//! d = 2
//! d_u = 1
//! A = [
//!   [1.0000000000000000e0, 1.0000000000000000e0],
//!   [0.0000000000000000e0, 5.0000000000000000e-1],
//! ]
//! # B, Q, R likewise; an optional [blocks] table lists block1..block3
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::estimators::{Dataset, ThresholdedModel};
use crate::linalg::Mat;
use crate::lqr::LqSystem;
use crate::structure::SparsityBlocks;

pub const FORMAT_VERSION: u32 = 1;

/// Float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn push_matrix(out: &mut String, name: &str, m: &Mat) {
    let _ = writeln!(out, "{name} = [");
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|&v| fmt_f64(v)).collect();
        let _ = writeln!(out, "  [{}],", row.join(", "));
    }
    let _ = writeln!(out, "]");
}

fn push_list(out: &mut String, name: &str, items: &[usize]) {
    let items: Vec<String> = items.iter().map(|i| i.to_string()).collect();
    let _ = writeln!(out, "{name} = [{}]", items.join(", "));
}

fn to_matrix(rows: &[Vec<f64>], nrows: usize, ncols: usize, name: &str) -> std::result::Result<Mat, String> {
    if rows.len() != nrows {
        return Err(format!("{name} has {} rows, expected {nrows}", rows.len()));
    }
    let mut data = Vec::with_capacity(nrows * ncols);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != ncols {
            return Err(format!("{name} row {i} has {} entries, expected {ncols}", r.len()));
        }
        data.extend_from_slice(r);
    }
    Mat::new(nrows, ncols, data).map_err(|e| format!("{name}: {e}"))
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn check_version(path: &Path, version: u32) -> Result<()> {
    if version != FORMAT_VERSION {
        return Err(format_err(path, format!("unsupported format_version {version}")));
    }
    Ok(())
}

#[derive(Deserialize)]
struct BlocksFile {
    block1: Vec<usize>,
    block2: Vec<usize>,
    block3: Vec<usize>,
}

#[derive(Deserialize)]
#[allow(non_snake_case)]
struct SystemFile {
    format_version: u32,
    d: usize,
    d_u: usize,
    A: Vec<Vec<f64>>,
    B: Vec<Vec<f64>>,
    Q: Vec<Vec<f64>>,
    R: Vec<Vec<f64>>,
    blocks: Option<BlocksFile>,
}

/// A system file: the LQ problem and, when known, its block labels.
#[derive(Clone, Debug)]
pub struct SystemRecord {
    pub system: LqSystem,
    pub blocks: Option<SparsityBlocks>,
}

pub fn system_to_string(sys: &LqSystem, blocks: Option<&SparsityBlocks>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "format_version = {FORMAT_VERSION}");
    let _ = writeln!(out, "d = {}", sys.d());
    let _ = writeln!(out, "d_u = {}", sys.du());
    push_matrix(&mut out, "A", sys.a());
    push_matrix(&mut out, "B", sys.b());
    push_matrix(&mut out, "Q", sys.q());
    push_matrix(&mut out, "R", sys.r());
    if let Some(b) = blocks {
        let _ = writeln!(out, "\n[blocks]");
        push_list(&mut out, "block1", &b.block1);
        push_list(&mut out, "block2", &b.block2);
        push_list(&mut out, "block3", &b.block3);
    }
    out
}

pub fn parse_system(text: &str, path: &Path) -> Result<SystemRecord> {
    let file: SystemFile = toml::from_str(text).map_err(|e| format_err(path, e.to_string()))?;
    check_version(path, file.format_version)?;
    let (d, du) = (file.d, file.d_u);
    let a = to_matrix(&file.A, d, d, "A").map_err(|m| format_err(path, m))?;
    let b = to_matrix(&file.B, d, du, "B").map_err(|m| format_err(path, m))?;
    let q = to_matrix(&file.Q, d, d, "Q").map_err(|m| format_err(path, m))?;
    let r = to_matrix(&file.R, du, du, "R").map_err(|m| format_err(path, m))?;
    let system = LqSystem::new(a, b, q, r).map_err(|e| format_err(path, e.to_string()))?;
    let blocks = file
        .blocks
        .map(|b| SparsityBlocks::new(d, b.block1, b.block2, b.block3))
        .transpose()
        .map_err(|e| format_err(path, e.to_string()))?;
    Ok(SystemRecord { system, blocks })
}

pub fn write_system(path: &Path, sys: &LqSystem, blocks: Option<&SparsityBlocks>) -> Result<()> {
    write_text(path, &system_to_string(sys, blocks))
}

pub fn read_system(path: &Path) -> Result<SystemRecord> {
    parse_system(&read_text(path)?, path)
}

#[derive(Deserialize)]
#[allow(non_snake_case)]
struct DatasetFile {
    format_version: u32,
    N: usize,
    d: usize,
    d_u: usize,
    sigma0: f64,
    X0: Vec<Vec<f64>>,
    U0: Vec<Vec<f64>>,
    X1: Vec<Vec<f64>>,
}

pub fn dataset_to_string(ds: &Dataset) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "format_version = {FORMAT_VERSION}");
    let _ = writeln!(out, "N = {}", ds.n());
    let _ = writeln!(out, "d = {}", ds.d());
    let _ = writeln!(out, "d_u = {}", ds.du());
    let _ = writeln!(out, "sigma0 = {}", fmt_f64(ds.sigma0()));
    push_matrix(&mut out, "X0", ds.x0());
    push_matrix(&mut out, "U0", ds.u0());
    push_matrix(&mut out, "X1", ds.x1());
    out
}

pub fn parse_dataset(text: &str, path: &Path) -> Result<Dataset> {
    let file: DatasetFile = toml::from_str(text).map_err(|e| format_err(path, e.to_string()))?;
    check_version(path, file.format_version)?;
    let (n, d, du) = (file.N, file.d, file.d_u);
    let x0 = to_matrix(&file.X0, n, d, "X0").map_err(|m| format_err(path, m))?;
    let u0 = to_matrix(&file.U0, n, du, "U0").map_err(|m| format_err(path, m))?;
    let x1 = to_matrix(&file.X1, n, d, "X1").map_err(|m| format_err(path, m))?;
    Dataset::new(x0, u0, x1, file.sigma0).map_err(|e| format_err(path, e.to_string()))
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    write_text(path, &dataset_to_string(ds))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    parse_dataset(&read_text(path)?, path)
}

/// Estimate file: thresholded model as `A`, `B`, raw estimate as
/// `A_raw`, `B_raw`.
pub fn estimate_to_string(model: &ThresholdedModel, eps: f64) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "format_version = {FORMAT_VERSION}");
    let _ = writeln!(out, "estimator = \"{}\"", model.raw.kind.name());
    let _ = writeln!(out, "eps = {}", fmt_f64(eps));
    let _ = writeln!(out, "d = {}", model.a_bar.rows());
    let _ = writeln!(out, "d_u = {}", model.b_bar.cols());
    let _ = writeln!(out, "failed_entries = {}", model.raw.failed_entries);
    push_matrix(&mut out, "A", &model.a_bar);
    push_matrix(&mut out, "B", &model.b_bar);
    push_matrix(&mut out, "A_raw", &model.raw.a_hat);
    push_matrix(&mut out, "B_raw", &model.raw.b_hat);
    out
}
