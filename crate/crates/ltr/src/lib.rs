//! Command-line front end and file formats for `ltr-core`: LIBSVM and JSONL
//! readers, vocabularies, binary checkpoints, asynchronous multi-worker
//! training and a synthetic data generator.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod parallel;
pub mod synth;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use config::{Command, Overrides, RunConfig};
pub use error::{LtrError, Result};
pub use parallel::{shard_data, train_async, train_async_with, AsyncOptions, AsyncOutcome, WorkerReport};
