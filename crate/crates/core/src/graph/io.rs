//! Line-delimited JSON datasets: one system per line.

use crate::error::{Error, Result};
use crate::graph::AtomicSystem;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// Parses systems from a reader, validating each record.
pub fn read_systems<R: BufRead>(reader: R) -> Result<Vec<AtomicSystem>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: AtomicSystem = serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        s.validate().map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        out.push(s);
    }
    Ok(out)
}

pub fn write_systems<W: Write>(mut writer: W, systems: &[AtomicSystem]) -> Result<()> {
    for s in systems {
        serde_json::to_writer(&mut writer, s)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<AtomicSystem>> {
    read_systems(BufReader::new(File::open(path)?))
}

pub fn write_dataset(path: &Path, systems: &[AtomicSystem]) -> Result<()> {
    write_systems(BufWriter::new(File::create(path)?), systems)
}
