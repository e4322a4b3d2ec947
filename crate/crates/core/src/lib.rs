//! Text morphing toolkit.
//!
//! Mines morphing sequences (chains of lexically close sentences) from a
//! corpus, trains an edit-vector morphing network on them, generates morphing
//! paths between arbitrary sentence pairs and scores paths for fluency and
//! smoothness.

pub mod cli;
pub mod error;
pub mod metrics;
pub mod miner;
pub mod morphnet;
pub mod simindex;
pub mod synth;
pub mod tensorcore;
pub mod textcore;

pub use error::{Error, Result};
