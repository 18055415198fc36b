//! Word-level adversarial attacks on a toy text classifier, embedding-space
//! residue analysis, and a zoo of adversarial-example detectors.

#![allow(clippy::needless_range_loop)]

pub mod analysis;
pub mod attacks;
pub mod checkpoint;
pub mod detectors;
pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod workbench;

pub use error::{Error, Result};
