//! Dense matrix files.
//!
//! DMAT layout, all little-endian: the 4-byte magic `DMAT`, `rows: u64`,
//! `cols: u64`, then `rows * cols` `f64` values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::{Error, Mat, Result};

const MAGIC: &[u8; 4] = b"DMAT";

pub fn write_dmat<W: Write>(mut w: W, m: &Mat) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            w.write_all(&m[(i, j)].to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_dmat(path: &Path, m: &Mat) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_dmat(&mut w, m).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dmat<R: Read>(mut r: R, path: &Path) -> Result<Mat> {
    let mut head = [0u8; 20];
    r.read_exact(&mut head)
        .map_err(|_| Error::format(path, "truncated DMAT header"))?;
    if &head[..4] != MAGIC {
        return Err(Error::format(path, "missing DMAT magic"));
    }
    let rows = u64::from_le_bytes(head[4..12].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(head[12..20].try_into().unwrap()) as usize;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::format(path, "DMAT dimensions overflow"))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() != count * 8 {
        return Err(Error::format(
            path,
            format!(
                "expected {} payload bytes for {rows}x{cols}, found {}",
                count * 8,
                bytes.len()
            ),
        ));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Mat::from_row_slice(rows, cols, &values))
}

pub fn load_dmat(path: &Path) -> Result<Mat> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dmat(BufReader::new(f), path)
}

/// Numeric CSV with one matrix row per line; `header` skips the first line.
pub fn load_csv(path: &Path, header: bool) -> Result<Mat> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::format(path, format!("{other:?}")),
        })?;
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0usize;
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        let lineno = line + 1 + header as usize;
        match cols {
            None => cols = Some(rec.len()),
            Some(c) if c != rec.len() => {
                return Err(Error::format(
                    path,
                    format!("line {lineno}: expected {c} fields, found {}", rec.len()),
                ))
            }
            _ => {}
        }
        for (k, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                Error::format(
                    path,
                    format!("line {lineno}, column {}: not a number: {field:?}", k + 1),
                )
            })?;
            values.push(v);
        }
        rows += 1;
    }
    let cols = cols.unwrap_or(0);
    if rows == 0 || cols == 0 {
        return Err(Error::format(path, "no data rows"));
    }
    Ok(Mat::from_row_slice(rows, cols, &values))
}

/// Dispatches on the extension: `.dmat` is binary, anything else is CSV.
pub fn load_matrix(path: &Path, header: bool) -> Result<Mat> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("dmat") => load_dmat(path),
        _ => load_csv(path, header),
    }
}
