//! Versioned binary forest files.
//!
//! Layout (all integers little-endian, doubles IEEE-754 binary64):
//!
//! ```text
//! magic          4 bytes  "CONF"
//! version        u16      currently 1
//! kind           u8       0 appearance, 1 position, 2 scale
//! sigma          f64
//! sigma_degen    u8       1 when the epsilon floor was substituted
//! sigma_k_nn     u32
//! d_glob         u32
//! k_retrieval    u32
//! num_trees      u32      configured
//! cand_splits    u32
//! min_leaf       u32
//! max_depth      u32
//! cfg_sigma_k_nn u32
//! seed           u64
//! tree_count     u32      trees actually stored
//! trees          tree_count pre-order node streams
//! ```
//!
//! Node stream, pre-order: tag `u8` (0 internal, 1 leaf); internal nodes
//! carry `feature u32, threshold f64` followed by the left then right
//! subtree; leaves carry `count u32` and `count` image ids (`u64`).

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use conf_core::forest::{Forest, SplitParams, TrainConfig, TreeNode};
use conf_core::metrics::{PropertyKind, SigmaParams};

pub const MAGIC: [u8; 4] = *b"CONF";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum ForestIoError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a forest file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported forest format version {0} (expected {FORMAT_VERSION})")]
    UnsupportedVersion(u16),
    #[error("truncated forest file")]
    Truncated,
    #[error("trailing bytes after the last tree")]
    TrailingData,
    #[error("corrupt forest file: {0}")]
    Corrupt(String),
}

fn kind_code(kind: PropertyKind) -> u8 {
    match kind {
        PropertyKind::Appearance => 0,
        PropertyKind::Position => 1,
        PropertyKind::Scale => 2,
    }
}

fn kind_from_code(code: u8) -> Result<PropertyKind, ForestIoError> {
    match code {
        0 => Ok(PropertyKind::Appearance),
        1 => Ok(PropertyKind::Position),
        2 => Ok(PropertyKind::Scale),
        other => Err(ForestIoError::Corrupt(format!(
            "unknown property kind code {other}"
        ))),
    }
}

pub fn save_forest(forest: &Forest, path: impl AsRef<Path>) -> Result<(), ForestIoError> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&[kind_code(forest.kind)])?;
    out.write_all(&forest.sigma.sigma.to_le_bytes())?;
    out.write_all(&[forest.sigma.degenerate as u8])?;
    out.write_all(&(forest.sigma.k_nn as u32).to_le_bytes())?;
    out.write_all(&(forest.d_glob as u32).to_le_bytes())?;
    out.write_all(&(forest.k_retrieval as u32).to_le_bytes())?;
    let cfg = &forest.config;
    out.write_all(&(cfg.num_trees as u32).to_le_bytes())?;
    out.write_all(&(cfg.candidate_splits_per_node as u32).to_le_bytes())?;
    out.write_all(&(cfg.min_images_per_leaf as u32).to_le_bytes())?;
    out.write_all(&(cfg.max_depth as u32).to_le_bytes())?;
    out.write_all(&(cfg.sigma_k_nn as u32).to_le_bytes())?;
    out.write_all(&cfg.seed.to_le_bytes())?;
    out.write_all(&(forest.trees.len() as u32).to_le_bytes())?;
    for tree in &forest.trees {
        write_node(&mut out, tree)?;
    }
    out.flush()?;
    Ok(())
}

fn write_node(out: &mut impl Write, node: &TreeNode) -> Result<(), ForestIoError> {
    match node {
        TreeNode::Internal { split, left, right } => {
            out.write_all(&[0u8])?;
            out.write_all(&(split.feature_index as u32).to_le_bytes())?;
            out.write_all(&split.threshold.to_le_bytes())?;
            write_node(out, left)?;
            write_node(out, right)
        }
        TreeNode::Leaf { image_ids } => {
            out.write_all(&[1u8])?;
            out.write_all(&(image_ids.len() as u32).to_le_bytes())?;
            for &id in image_ids {
                out.write_all(&id.to_le_bytes())?;
            }
            Ok(())
        }
    }
}

pub fn load_forest(path: impl AsRef<Path>) -> Result<Forest, ForestIoError> {
    let mut input = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut input, &mut magic)?;
    if magic != MAGIC {
        return Err(ForestIoError::BadMagic);
    }
    let version = read_u16(&mut input)?;
    if version != FORMAT_VERSION {
        return Err(ForestIoError::UnsupportedVersion(version));
    }
    let kind = kind_from_code(read_u8(&mut input)?)?;
    let sigma_value = read_f64(&mut input)?;
    let degenerate = read_u8(&mut input)? != 0;
    let sigma_k_nn = read_u32(&mut input)? as usize;
    let d_glob = read_u32(&mut input)? as usize;
    let k_retrieval = read_u32(&mut input)? as usize;
    let config = TrainConfig {
        num_trees: read_u32(&mut input)? as usize,
        candidate_splits_per_node: read_u32(&mut input)? as usize,
        min_images_per_leaf: read_u32(&mut input)? as usize,
        max_depth: read_u32(&mut input)? as usize,
        sigma_k_nn: read_u32(&mut input)? as usize,
        seed: read_u64(&mut input)?,
    };
    let tree_count = read_u32(&mut input)? as usize;
    let max_depth = config.max_depth;
    let mut trees = Vec::with_capacity(tree_count);
    for _ in 0..tree_count {
        trees.push(read_node(&mut input, 0, max_depth)?);
    }
    let mut probe = [0u8; 1];
    match input.read(&mut probe)? {
        0 => {}
        _ => return Err(ForestIoError::TrailingData),
    }
    if !(sigma_value.is_finite() && sigma_value > 0.0) {
        return Err(ForestIoError::Corrupt(format!(
            "stored sigma {sigma_value} is not positive"
        )));
    }
    Ok(Forest {
        trees,
        kind,
        sigma: SigmaParams {
            sigma: sigma_value,
            kind,
            k_nn: sigma_k_nn,
            degenerate,
        },
        d_glob,
        k_retrieval,
        config,
    })
}

fn read_node(
    input: &mut impl Read,
    depth: usize,
    max_depth: usize,
) -> Result<TreeNode, ForestIoError> {
    if depth > max_depth {
        return Err(ForestIoError::Corrupt(format!(
            "tree exceeds declared max depth {max_depth}"
        )));
    }
    match read_u8(input)? {
        0 => {
            let feature_index = read_u32(input)? as usize;
            let threshold = read_f64(input)?;
            let left = Box::new(read_node(input, depth + 1, max_depth)?);
            let right = Box::new(read_node(input, depth + 1, max_depth)?);
            Ok(TreeNode::Internal {
                split: SplitParams {
                    feature_index,
                    threshold,
                },
                left,
                right,
            })
        }
        1 => {
            let count = read_u32(input)? as usize;
            let mut image_ids = Vec::with_capacity(count.min(1 << 20));
            for _ in 0..count {
                image_ids.push(read_u64(input)?);
            }
            if image_ids.is_empty() {
                return Err(ForestIoError::Corrupt("empty leaf".into()));
            }
            Ok(TreeNode::Leaf { image_ids })
        }
        other => Err(ForestIoError::Corrupt(format!("unknown node tag {other}"))),
    }
}

fn read_exact(input: &mut impl Read, buf: &mut [u8]) -> Result<(), ForestIoError> {
    input.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            ForestIoError::Truncated
        } else {
            ForestIoError::Io(e)
        }
    })
}

macro_rules! reader_fn {
    ($name:ident, $ty:ty) => {
        fn $name(input: &mut impl Read) -> Result<$ty, ForestIoError> {
            let mut buf = [0u8; core::mem::size_of::<$ty>()];
            read_exact(input, &mut buf)?;
            Ok(<$ty>::from_le_bytes(buf))
        }
    };
}

reader_fn!(read_u16, u16);
reader_fn!(read_u32, u32);
reader_fn!(read_u64, u64);
reader_fn!(read_f64, f64);

fn read_u8(input: &mut impl Read) -> Result<u8, ForestIoError> {
    let mut buf = [0u8; 1];
    read_exact(input, &mut buf)?;
    Ok(buf[0])
}
