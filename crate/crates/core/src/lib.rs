//! Context-forest retrieval.
//!
//! A context forest is an ensemble of extremely randomized decision trees
//! over global image feature vectors. Trees are grown to maximize a
//! kernel-density compactness objective over the *object* properties
//! (appearance, position or scale) of the images routed to each side of a
//! split, so a leaf groups training images whose objects look, sit or size
//! alike. Querying the forest with a test image's global features yields a
//! retrieval set of training images with (predicted) similar objects, which
//! downstream code uses to pick detector components worth running and to
//! rescore detections by likely object location and scale.
//!
//! This crate is the algorithmic core: data model, synthetic scene
//! generator, distances and KDE scores, forest training/querying, the
//! brute-force kNN baseline, component selection, detection rescoring and a
//! mock multi-component detector with AP evaluation. It is `no_std`
//! compatible (requires `alloc`); file formats, parallel training and the
//! command-line interface live in the companion `conf-tools` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod baseline;
pub mod dataset;
pub mod error;
pub mod forest;
pub mod metrics;
pub mod mockdet;
pub mod rescore;
pub mod selection;

pub use error::{Error, Result};
