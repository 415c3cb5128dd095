//! Minimal CSV emission and strict parsing.
//!
//! All emitted tables go through [`write_csv`] so float formatting is
//! uniform (shortest round-trip form) and bodies are byte-identical across
//! reruns with equal seeds. [`read_strict`] is the reader the test suite
//! holds every artifact to: declared header, no ragged rows.

use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

/// Formats a float the way every artifact in this crate does.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else {
        format!("{x}")
    }
}

/// One emitted cell: either preformatted text or a float.
#[derive(Debug, Clone)]
pub enum Cell {
    Text(String),
    Int(u64),
    Float(f64),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Text(s) => {
                debug_assert!(!s.contains(',') && !s.contains('\n'));
                s.clone()
            }
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => fmt_f64(*v),
        }
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}
impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}
impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}
impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}
impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

/// Renders header + rows; every row must match the header width.
pub fn render_csv(header: &[&str], rows: &[Vec<Cell>]) -> Result<String> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for (i, row) in rows.iter().enumerate() {
        if row.len() != header.len() {
            return Err(Error::Mismatch(format!(
                "csv row {} has {} cells, header has {}",
                i,
                row.len(),
                header.len()
            )));
        }
        let line: Vec<String> = row.iter().map(Cell::render).collect();
        let _ = writeln!(out, "{}", line.join(","));
    }
    Ok(out)
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<Cell>]) -> Result<()> {
    let body = render_csv(header, rows)?;
    std::fs::write(path, body)?;
    Ok(())
}

/// Parses CSV text, requiring the exact expected header and rectangular rows.
pub fn read_strict(text: &str, expected_header: &[&str]) -> Result<Vec<Vec<String>>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty csv".to_string(),
    })?;
    let got: Vec<&str> = header.split(',').collect();
    if got != expected_header {
        return Err(Error::Parse {
            line: 1,
            message: format!("header mismatch: expected {expected_header:?}, got {got:?}"),
        });
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<String> = line.split(',').map(str::to_string).collect();
        if cells.len() != expected_header.len() {
            return Err(Error::Parse {
                line: idx + 1,
                message: format!("ragged row: {} cells, expected {}", cells.len(), expected_header.len()),
            });
        }
        rows.push(cells);
    }
    Ok(rows)
}
