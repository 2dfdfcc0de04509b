//! Newline-delimited JSON draw files and the diagnostics document.

use super::{Diagnostics, Draw};
use crate::error::{Error, Result};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// One JSON object per line.
pub fn write_draws(path: &Path, draws: &[Draw]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for d in draws {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_draws(path: &Path) -> Result<Vec<Draw>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let d = serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        out.push(d);
    }
    Ok(out)
}

pub fn write_diagnostics(path: &Path, diag: &Diagnostics) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, diag)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
