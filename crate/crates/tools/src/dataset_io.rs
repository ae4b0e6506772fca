//! JSON-lines dataset files and the generator-truth sidecar.
//!
//! Layout: the first line is a header object `{"d_glob": .., "d_app": ..}`;
//! every following line is one image
//! `{"id": .., "phi": [..], "boxes": [{"cx":..,"cy":..,"w":..,"h":..,"app":[..],"component":..|null}]}`.
//! Numbers round-trip exactly (shortest representation that parses back to
//! the same f64), so `save(load(f))` reproduces `save`'s output byte for
//! byte.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use conf_core::dataset::{Dataset, ImageRecord, SynthTruth};

#[derive(Debug, Error)]
pub enum DatasetIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("missing header line")]
    MissingHeader,
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("line {line}: {source}")]
    Record {
        line: usize,
        source: conf_core::Error,
    },
    #[error("line {line}: duplicate image id {id}")]
    DuplicateId { line: usize, id: u64 },
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    d_glob: usize,
    d_app: usize,
}

/// Load a dataset, validating every record against the header and naming
/// the offending line and field on failure.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, DatasetIoError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header_line = lines.next().ok_or(DatasetIoError::MissingHeader)??;
    let header: Header = serde_json::from_str(&header_line)
        .map_err(|source| DatasetIoError::Parse { line: 1, source })?;

    let mut images = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let img: ImageRecord = serde_json::from_str(&line)
            .map_err(|source| DatasetIoError::Parse { line: line_no, source })?;
        if !seen.insert(img.id) {
            return Err(DatasetIoError::DuplicateId {
                line: line_no,
                id: img.id,
            });
        }
        if img.global_features.len() != header.d_glob {
            return Err(DatasetIoError::Record {
                line: line_no,
                source: conf_core::Error::DimensionMismatch {
                    expected: header.d_glob,
                    got: img.global_features.len(),
                },
            });
        }
        if img.global_features.iter().any(|v| !v.is_finite()) {
            return Err(DatasetIoError::Record {
                line: line_no,
                source: conf_core::Error::InvalidRecord {
                    image_id: img.id,
                    field: "phi",
                    detail: "global features contain a non-finite entry".into(),
                },
            });
        }
        for b in &img.boxes {
            b.validate(img.id, header.d_app)
                .map_err(|source| DatasetIoError::Record { line: line_no, source })?;
        }
        images.push(img);
    }
    Ok(Dataset {
        images,
        d_glob: header.d_glob,
        d_app: header.d_app,
    })
}

/// Save a dataset in the JSON-lines layout.
pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), DatasetIoError> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(
        &mut out,
        &Header {
            d_glob: ds.d_glob,
            d_app: ds.d_app,
        },
    )
    .map_err(|source| DatasetIoError::Parse { line: 1, source })?;
    out.write_all(b"\n")?;
    for (idx, img) in ds.images.iter().enumerate() {
        serde_json::to_writer(&mut out, img)
            .map_err(|source| DatasetIoError::Parse { line: idx + 2, source })?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Generator truth written next to synthetic datasets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthSidecar {
    pub config_hash: String,
    pub truth: SynthTruth,
}

pub fn save_truth(sidecar: &TruthSidecar, path: impl AsRef<Path>) -> Result<(), DatasetIoError> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, sidecar)
        .map_err(|source| DatasetIoError::Parse { line: 1, source })?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn load_truth(path: impl AsRef<Path>) -> Result<TruthSidecar, DatasetIoError> {
    let reader = BufReader::new(File::open(path)?);
    serde_json::from_reader(reader).map_err(|source| DatasetIoError::Parse { line: 1, source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use conf_core::dataset::{synth_generate, SynthConfig};

    fn sample() -> Dataset {
        synth_generate(&SynthConfig {
            num_scene_types: 2,
            num_components: 3,
            images_per_scene: 4,
            boxes_per_image: (0, 2),
            d_glob: 4,
            d_app: 3,
            noise_global: 0.2,
            noise_app: 0.1,
            noise_pos: 0.1,
            seed: 11,
        })
        .unwrap()
    }

    #[test]
    fn empty_dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        let ds = Dataset {
            images: vec![],
            d_glob: 4,
            d_app: 2,
        };
        save_dataset(&ds, &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert!(loaded.images.is_empty());
        assert_eq!(loaded.d_glob, 4);
        assert_eq!(loaded.d_app, 2);
    }

    #[test]
    fn readback_preserves_counts_and_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.jsonl");
        let ds = sample();
        save_dataset(&ds, &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded, ds);
        let ids: Vec<u64> = loaded.images.iter().map(|i| i.id).collect();
        let orig: Vec<u64> = ds.images.iter().map(|i| i.id).collect();
        assert_eq!(ids, orig);
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        let ds = sample();
        save_dataset(&ds, &a).unwrap();
        let loaded = load_dataset(&a).unwrap();
        save_dataset(&loaded, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn malformed_record_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(
            &path,
            "{\"d_glob\":2,\"d_app\":1}\n{\"id\":0,\"phi\":[0.1,0.2],\"boxes\":[]}\n{\"id\":1,\"phi\":[0.1,0.2],\"boxes\":\n",
        )
        .unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(matches!(err, DatasetIoError::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn dimension_mismatch_names_both_dimensions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dims.jsonl");
        std::fs::write(
            &path,
            "{\"d_glob\":3,\"d_app\":1}\n{\"id\":0,\"phi\":[0.1,0.2],\"boxes\":[]}\n",
        )
        .unwrap();
        let err = load_dataset(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains('3') && msg.contains('2'), "{msg}");
    }

    #[test]
    fn invalid_field_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.jsonl");
        std::fs::write(
            &path,
            "{\"d_glob\":1,\"d_app\":1}\n{\"id\":4,\"phi\":[0.5],\"boxes\":[{\"cx\":1.4,\"cy\":0.5,\"w\":0.2,\"h\":0.2,\"app\":[0.0],\"component\":null}]}\n",
        )
        .unwrap();
        let err = load_dataset(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2") && msg.contains("cx"), "{msg}");
    }

    #[test]
    fn duplicate_ids_are_rejected_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dup.jsonl");
        std::fs::write(
            &path,
            "{\"d_glob\":1,\"d_app\":1}\n{\"id\":0,\"phi\":[0.5],\"boxes\":[]}\n{\"id\":0,\"phi\":[0.5],\"boxes\":[]}\n",
        )
        .unwrap();
        assert!(matches!(
            load_dataset(&path).unwrap_err(),
            DatasetIoError::DuplicateId { line: 3, id: 0 }
        ));
    }
}
