//! IO formats, parallel training, the experiment harness and the CLI for
//! the context-forest library.

pub mod cli;
pub mod dataset_io;
pub mod detections_io;
pub mod forest_io;
pub mod harness;
pub mod parallel;
pub mod report;
