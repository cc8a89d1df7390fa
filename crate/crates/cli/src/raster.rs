//! Label rasters on disk: PGM (`P2` ASCII, `P5` binary) or CSV of integers.

use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed PGM: {0}")]
    Pgm(String),
    #[error("row {row}, column {col}: `{token}` is not a non-negative integer")]
    Token { row: usize, col: usize, token: String },
    #[error("row {row} has {found} values, expected {expected}")]
    Ragged { row: usize, expected: usize, found: usize },
    #[error("empty raster")]
    Empty,
    #[error("row {row}, column {col}: label {label} exceeds the declared {num_classes} classes")]
    LabelOutOfRange { row: usize, col: usize, label: usize, num_classes: usize },
}

/// Row-major class raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelRaster {
    pub rows: usize,
    pub cols: usize,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

/// Loads a PGM or CSV raster. `K` is `max label + 1` unless `declared`.
pub fn load_label_raster(path: &Path, declared: Option<usize>) -> Result<LabelRaster, RasterError> {
    let bytes = fs::read(path).map_err(|source| RasterError::Io { path: path.to_path_buf(), source })?;
    parse_label_raster(&bytes, declared)
}

pub fn parse_label_raster(bytes: &[u8], declared: Option<usize>) -> Result<LabelRaster, RasterError> {
    let (rows, cols, labels) = if bytes.starts_with(b"P2") || bytes.starts_with(b"P5") {
        parse_pgm(bytes)?
    } else {
        parse_csv(&String::from_utf8_lossy(bytes))?
    };
    if labels.is_empty() {
        return Err(RasterError::Empty);
    }
    let max = labels.iter().copied().max().unwrap_or(0);
    let num_classes = declared.unwrap_or(max + 1);
    if let Some(i) = labels.iter().position(|&l| l >= num_classes) {
        return Err(RasterError::LabelOutOfRange { row: i / cols + 1, col: i % cols + 1, label: labels[i], num_classes });
    }
    Ok(LabelRaster { rows, cols, labels, num_classes })
}

fn parse_csv(text: &str) -> Result<(usize, usize, Vec<usize>), RasterError> {
    let mut labels = vec![];
    let mut cols = None;
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = i + 1;
        let mut found = 0;
        for (j, token) in line.split(',').enumerate() {
            let t = token.trim();
            let v = t.parse().map_err(|_| RasterError::Token { row, col: j + 1, token: t.to_string() })?;
            labels.push(v);
            found += 1;
        }
        let expected = *cols.get_or_insert(found);
        if found != expected {
            return Err(RasterError::Ragged { row, expected, found });
        }
        rows += 1;
    }
    Ok((rows, cols.unwrap_or(0), labels))
}

/// Header tokens and the offset just past the last one.
fn pgm_header(bytes: &[u8]) -> Result<(Vec<String>, usize), RasterError> {
    let mut tokens = vec![];
    let mut i = 0;
    while tokens.len() < 4 {
        match bytes.get(i) {
            None => return Err(RasterError::Pgm("truncated header".into())),
            Some(b'#') => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            Some(c) if c.is_ascii_whitespace() => i += 1,
            Some(_) => {
                let start = i;
                while i < bytes.len() && !bytes[i].is_ascii_whitespace() && bytes[i] != b'#' {
                    i += 1;
                }
                tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
            }
        }
    }
    Ok((tokens, i))
}

fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<usize>), RasterError> {
    let (header, end) = pgm_header(bytes)?;
    let number = |s: &str, what: &str| {
        s.parse::<usize>().map_err(|_| RasterError::Pgm(format!("bad {what} `{s}`")))
    };
    let cols = number(&header[1], "width")?;
    let rows = number(&header[2], "height")?;
    let maxval = number(&header[3], "maxval")?;
    if !(1..=65535).contains(&maxval) {
        return Err(RasterError::Pgm(format!("maxval {maxval} outside 1..=65535")));
    }
    let n = rows * cols;
    let mut labels = Vec::with_capacity(n);
    if header[0] == "P5" {
        let data = bytes.get(end + 1..).unwrap_or_default();
        let width = if maxval < 256 { 1 } else { 2 };
        if data.len() < n * width {
            return Err(RasterError::Pgm(format!("expected {} data bytes, found {}", n * width, data.len())));
        }
        labels.extend(data[..n * width].chunks_exact(width).map(|c| match c {
            [b] => *b as usize,
            [hi, lo] => ((*hi as usize) << 8) | *lo as usize,
            _ => unreachable!(),
        }));
    } else {
        let text = String::from_utf8_lossy(&bytes[end..]);
        for (k, t) in text.split_ascii_whitespace().enumerate() {
            if k == n {
                return Err(RasterError::Pgm(format!("more than {n} samples")));
            }
            let v = t.parse().map_err(|_| RasterError::Token { row: k / cols + 1, col: k % cols + 1, token: t.into() })?;
            labels.push(v);
        }
        if labels.len() != n {
            return Err(RasterError::Pgm(format!("expected {n} samples, found {}", labels.len())));
        }
    }
    if let Some(i) = labels.iter().position(|&v| v > maxval) {
        return Err(RasterError::Pgm(format!("sample {} at row {}, column {} exceeds maxval {maxval}", labels[i], i / cols + 1, i % cols + 1)));
    }
    Ok((rows, cols, labels))
}

fn create(path: &Path) -> Result<fs::File, RasterError> {
    fs::File::create(path).map_err(|source| RasterError::Io { path: path.to_path_buf(), source })
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> RasterError + '_ {
    move |source| RasterError::Io { path: path.to_path_buf(), source }
}

/// Writes a PGM with the smallest sufficient maxval.
pub fn write_pgm(path: &Path, rows: usize, cols: usize, values: &[usize], binary: bool) -> Result<(), RasterError> {
    assert_eq!(values.len(), rows * cols, "raster size");
    let maxval = values.iter().copied().max().unwrap_or(0).max(1);
    if maxval > 65535 {
        return Err(RasterError::Pgm(format!("value {maxval} does not fit 16 bits")));
    }
    let mut out = vec![];
    if binary {
        write!(out, "P5\n{cols} {rows}\n{maxval}\n").expect("in-memory write");
        for &v in values {
            if maxval < 256 {
                out.push(v as u8);
            } else {
                out.extend_from_slice(&(v as u16).to_be_bytes());
            }
        }
    } else {
        write!(out, "P2\n{cols} {rows}\n{maxval}\n").expect("in-memory write");
        for row in values.chunks(cols) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", line.join(" ")).expect("in-memory write");
        }
    }
    create(path)?.write_all(&out).map_err(io(path))
}

/// Writes one CSV line per raster row.
pub fn write_csv<T: Display>(path: &Path, cols: usize, values: &[T]) -> Result<(), RasterError> {
    let mut out = String::new();
    for row in values.chunks(cols) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    create(path)?.write_all(out.as_bytes()).map_err(io(path))
}
