//! Voxelwise encoding-model toolkit.
//!
//! The pipeline runs stimulus features through temporal alignment
//! ([`temporal`]), fits per-voxel ridge models ([`ridge`]), combines feature
//! spaces with convex per-voxel weights ([`stacker`]), normalizes scores by
//! the repeat-based noise ceiling ([`ceiling`]) and fits log-linear scaling
//! curves ([`scaling`]). [`synth`] generates datasets with known ground truth
//! for checking all of the above, and [`cli`] wires the stages into file-based
//! subcommands.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ceiling;
pub mod cli;
pub mod error;
pub mod io;
mod linalg;
pub mod pipeline;
pub mod preprocess;
pub mod ridge;
pub mod scaling;
pub mod schedule;
pub mod stacker;
pub mod stats;
pub mod synth;
pub mod temporal;

pub use error::{Error, Result};
