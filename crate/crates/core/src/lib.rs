//! Incremental (data-patch) training of task-oriented semantic parsers.
//!
//! The crate is `no_std` (with `alloc`): it holds the tree format, the
//! tree-path metrics, split generation, old-data sampling, the move-norm and
//! EWC penalties, a small tagger model with hand-written gradients, and the
//! experiment logic that ties them together. File formats and the CLI live in
//! the `patchtune` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod datagen;
pub mod dataset;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod regularizers;
pub mod sampling;
pub mod seed;
pub mod treebank;

pub use treebank::{classes_of, parse_top, serialize, Child, Node, NodeKind, ParseError, ParseTree};
