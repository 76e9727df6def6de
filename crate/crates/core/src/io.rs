//! Plain-text exchange formats.
//!
//! Matrix: a header line `rows cols`, then one whitespace-separated row per
//! line. Tensor: a header line `I J L`, then `I` rows of `J·L` entries, the
//! entry `(i, j, l)` at position `j + J·l` of row `i`. Labels: one integer
//! per line. Reals are written in shortest round-trip form, so a write/read
//! cycle is exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::clustering::Assignment;
use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, Mode, Tensor3};
use crate::synth::GroundTruth;

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn format_err(what: &'static str, line: usize, detail: impl Into<String>) -> Error {
    Error::Format {
        what,
        line,
        detail: detail.into(),
    }
}

/// Non-blank lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(n, l)| (n + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn parse_fields<T: std::str::FromStr>(what: &'static str, line: usize, s: &str) -> Result<Vec<T>> {
    s.split_whitespace()
        .map(|tok| {
            tok.parse::<T>()
                .map_err(|_| format_err(what, line, format!("cannot parse {tok:?}")))
        })
        .collect()
}

fn rows_to_text(
    header: &str,
    rows: usize,
    cols: usize,
    get: impl Fn(usize, usize) -> f64,
) -> String {
    let mut out = String::with_capacity(rows * cols * 12 + header.len() + 1);
    out.push_str(header);
    out.push('\n');
    for r in 0..rows {
        for c in 0..cols {
            if c > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{:?}", get(r, c));
        }
        out.push('\n');
    }
    out
}

/// Parses `dims.len()` header counts followed by `rows` rows of `cols` reals.
fn parse_rows(
    what: &'static str,
    text: &str,
    header_len: usize,
    shape: impl Fn(&[usize]) -> (usize, usize),
) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let mut lines = content_lines(text);
    let (hl, header) = lines
        .next()
        .ok_or_else(|| format_err(what, 1, "missing header"))?;
    let dims: Vec<usize> = parse_fields(what, hl, header)?;
    if dims.len() != header_len {
        return Err(format_err(
            what,
            hl,
            format!("header needs {header_len} counts, got {}", dims.len()),
        ));
    }
    let (rows, cols) = shape(&dims);
    let mut data = Vec::with_capacity(rows);
    for (n, line) in lines {
        let row: Vec<f64> = parse_fields(what, n, line)?;
        if row.len() != cols {
            return Err(format_err(
                what,
                n,
                format!("expected {cols} entries, got {}", row.len()),
            ));
        }
        if data.len() == rows {
            return Err(format_err(what, n, format!("more than {rows} rows")));
        }
        data.push(row);
    }
    if data.len() != rows {
        return Err(format_err(
            what,
            0,
            format!("expected {rows} rows, got {}", data.len()),
        ));
    }
    Ok((dims, data))
}

pub fn matrix_to_string(m: &DenseMatrix) -> String {
    rows_to_text(
        &format!("{} {}", m.nrows(), m.ncols()),
        m.nrows(),
        m.ncols(),
        |r, c| m[(r, c)],
    )
}

pub fn matrix_from_str(text: &str) -> Result<DenseMatrix> {
    let (dims, rows) = parse_rows("matrix", text, 2, |d| (d[0], d[1]))?;
    Ok(DenseMatrix::from_fn(dims[0], dims[1], |r, c| rows[r][c]))
}

pub fn tensor_to_string(t: &Tensor3) -> String {
    let (ni, nj, nl) = t.dims();
    let x1 = t.unfold(Mode::One);
    rows_to_text(&format!("{ni} {nj} {nl}"), ni, nj * nl, |i, c| x1[(c, i)])
}

pub fn tensor_from_str(text: &str) -> Result<Tensor3> {
    let (dims, rows) = parse_rows("tensor", text, 3, |d| (d[0], d[1] * d[2]))?;
    let (ni, nj, nl) = (dims[0], dims[1], dims[2]);
    Ok(Tensor3::from_fn(ni, nj, nl, |i, j, l| rows[i][j + nj * l]))
}

pub fn labels_to_string(labels: &[usize]) -> String {
    labels.iter().map(|l| format!("{l}\n")).collect()
}

pub fn labels_from_str(text: &str) -> Result<Vec<usize>> {
    content_lines(text)
        .map(|(n, line)| {
            line.parse::<usize>()
                .map_err(|_| format_err("labels", n, format!("cannot parse {line:?}")))
        })
        .collect()
}

pub fn write_matrix(path: &Path, m: &DenseMatrix) -> Result<()> {
    write(path, &matrix_to_string(m))
}

pub fn read_matrix(path: &Path) -> Result<DenseMatrix> {
    matrix_from_str(&read(path)?)
}

pub fn write_tensor(path: &Path, t: &Tensor3) -> Result<()> {
    write(path, &tensor_to_string(t))
}

pub fn read_tensor(path: &Path) -> Result<Tensor3> {
    tensor_from_str(&read(path)?)
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    write(path, &labels_to_string(labels))
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    labels_from_str(&read(path)?)
}

/// Labels as an [`Assignment`] with `K = max + 1`.
pub fn read_assignment(path: &Path) -> Result<Assignment> {
    let labels = read_labels(path)?;
    let k = labels.iter().max().map_or(0, |m| m + 1);
    Assignment::new(labels, k.max(1))
}

/// Writes the data, latent factors, labels and outlier mask of an instance
/// into `dir` (created if missing). Returns the file names written.
pub fn write_ground_truth(dir: &Path, truth: &GroundTruth) -> Result<Vec<&'static str>> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut written = Vec::new();
    let mut put_m = |name: &'static str, m: &DenseMatrix| -> Result<()> {
        write_matrix(&dir.join(name), m)?;
        written.push(name);
        Ok(())
    };
    let excluded: Vec<usize>;
    match truth {
        GroundTruth::Matrix(t) => {
            put_m("X.txt", &t.x)?;
            put_m("W.txt", &t.w)?;
            put_m("H.txt", &t.h)?;
            put_m("M.txt", &t.m)?;
            excluded = t.outlier_mask.iter().map(|&o| o as usize).collect();
        }
        GroundTruth::Tensor(t) => {
            put_m("A.txt", &t.a)?;
            put_m("B.txt", &t.b)?;
            put_m("C.txt", &t.c)?;
            put_m("M.txt", &t.m)?;
            write_tensor(&dir.join("X.txt"), &t.x)?;
            written.push("X.txt");
            excluded = t.outlier_slabs.iter().map(|&o| o as usize).collect();
        }
    }
    write_labels(&dir.join("labels.txt"), truth.labels().labels())?;
    written.push("labels.txt");
    let excluded_name = match truth {
        GroundTruth::Matrix(_) => "outliers.txt",
        GroundTruth::Tensor(_) => "outlier_slabs.txt",
    };
    write_labels(&dir.join(excluded_name), &excluded)?;
    written.push(excluded_name);
    Ok(written)
}
