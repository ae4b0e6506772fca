//! CSV and JSON artifact writers. Every CSV starts with a
//! `# config_hash=<hex>` comment line followed by the header row.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

pub fn write_csv(
    path: impl AsRef<Path>,
    config_hash: &str,
    header: &str,
    rows: impl IntoIterator<Item = String>,
) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "# config_hash={config_hash}")?;
    writeln!(out, "{header}")?;
    for row in rows {
        writeln!(out, "{row}")?;
    }
    out.flush()
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> anyhow::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// Read back a hash-stamped CSV: returns (config_hash, header, data rows).
pub fn read_csv(path: impl AsRef<Path>) -> anyhow::Result<(String, String, Vec<String>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let hash_line = lines.next().unwrap_or_default();
    let hash = hash_line
        .strip_prefix("# config_hash=")
        .unwrap_or_default()
        .to_string();
    let header = lines.next().unwrap_or_default().to_string();
    Ok((hash, header, lines.map(String::from).collect()))
}
