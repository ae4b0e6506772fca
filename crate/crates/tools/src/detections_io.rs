//! Detections as JSON lines:
//! `{"image_id":..,"cx":..,"cy":..,"w":..,"h":..,"score":..,"component":..|null}`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use conf_core::rescore::Detection;

use crate::dataset_io::DatasetIoError;

pub fn save_detections(dets: &[Detection], path: impl AsRef<Path>) -> Result<(), DatasetIoError> {
    let mut out = BufWriter::new(File::create(path)?);
    for (idx, det) in dets.iter().enumerate() {
        serde_json::to_writer(&mut out, det)
            .map_err(|source| DatasetIoError::Parse { line: idx + 1, source })?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_detections(path: impl AsRef<Path>) -> Result<Vec<Detection>, DatasetIoError> {
    let reader = BufReader::new(File::open(path)?);
    let mut dets = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        dets.push(
            serde_json::from_str(&line)
                .map_err(|source| DatasetIoError::Parse { line: idx + 1, source })?,
        );
    }
    Ok(dets)
}
