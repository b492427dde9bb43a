//! Trace and audit writers.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use stiefel_dgt_core::diagnostics::{TraceRecord, TraceSink};

use crate::config::TraceFormat;

/// Writes `trace.csv` and/or `trace.jsonl` and keeps the records in memory.
pub struct TraceWriter {
    csv: Option<csv::Writer<File>>,
    jsonl: Option<BufWriter<File>>,
    zero_wall_time: bool,
    dir: PathBuf,
    pub records: Vec<TraceRecord>,
}

impl TraceWriter {
    pub fn create(dir: &Path, format: TraceFormat, zero_wall_time: bool) -> Result<Self> {
        let csv = match format {
            TraceFormat::Csv | TraceFormat::Both => {
                let path = dir.join("trace.csv");
                Some(
                    csv::Writer::from_path(&path)
                        .with_context(|| format!("cannot create {}", path.display()))?,
                )
            }
            TraceFormat::Jsonl => None,
        };
        let jsonl = match format {
            TraceFormat::Jsonl | TraceFormat::Both => Some(create(&dir.join("trace.jsonl"))?),
            TraceFormat::Csv => None,
        };
        Ok(Self {
            csv,
            jsonl,
            zero_wall_time,
            dir: dir.to_path_buf(),
            records: Vec::new(),
        })
    }

    pub fn finish(mut self) -> Result<Vec<TraceRecord>> {
        if let Some(w) = self.csv.as_mut() {
            w.flush()?;
        }
        if let Some(w) = self.jsonl.as_mut() {
            w.flush()?;
        }
        Ok(self.records)
    }
}

fn io_error(dir: &Path, msg: String) -> stiefel_dgt_core::Error {
    stiefel_dgt_core::Error::Io {
        path: dir.to_path_buf(),
        source: std::io::Error::other(msg),
    }
}

impl TraceSink for TraceWriter {
    fn push(&mut self, rec: &TraceRecord) -> stiefel_dgt_core::Result<()> {
        let mut rec = *rec;
        if self.zero_wall_time {
            rec.wall_time_s = 0.0;
        }
        if let Some(w) = self.csv.as_mut() {
            w.serialize(rec)
                .map_err(|e| io_error(&self.dir, e.to_string()))?;
        }
        if let Some(w) = self.jsonl.as_mut() {
            serde_json::to_writer(&mut *w, &rec).map_err(|e| io_error(&self.dir, e.to_string()))?;
            w.write_all(b"\n")
                .map_err(|e| io_error(&self.dir, e.to_string()))?;
        }
        self.records.push(rec);
        Ok(())
    }
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| {
        format!("cannot create {}", path.display())
    })?))
}

/// Appends one JSON object per line.
pub struct JsonLines {
    w: BufWriter<File>,
}

impl JsonLines {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self { w: create(path)? })
    }

    pub fn write<T: Serialize>(&mut self, value: &T) -> Result<()> {
        serde_json::to_writer(&mut self.w, value)?;
        self.w.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.w.flush()?;
        Ok(())
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Reads a `trace.csv` back.
pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRecord>> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}
