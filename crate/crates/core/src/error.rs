use alloc::string::String;
use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

/// Errors shared by all modules of the core crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("need at least {needed} boxes, got {got}")]
    TooFewBoxes { needed: usize, got: usize },
    #[error("box list is empty")]
    EmptyBoxes,
    #[error("feature index {index} out of range for {dim}-dimensional features")]
    FeatureIndexOutOfRange { index: usize, dim: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("image {image_id}: invalid {field}: {detail}")]
    InvalidRecord {
        image_id: u64,
        field: &'static str,
        detail: String,
    },
    #[error("image {image_id} has a box without a component id")]
    MissingComponentId { image_id: u64 },
    #[error("component id {id} out of range (model has {num_components} components)")]
    UnknownComponent { id: u32, num_components: u32 },
    #[error("image {0} not found")]
    ImageNotFound(u64),
    #[error("retrieval set is empty")]
    EmptyRetrievalSet,
    #[error("no retrieval-set member carries labelled boxes")]
    NoLabeledBoxes,
    #[error("weight grid is empty")]
    EmptyGrid,
    #[error("fraction {0} must lie strictly between 0 and 1")]
    InvalidFraction(f64),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("gamma {0} must lie in [0, 1]")]
    InvalidGamma(f64),
}
