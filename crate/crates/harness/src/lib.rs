//! Experiment harness: dataset plumbing, synthetic corpus generation,
//! training, checkpointing, and transfer evaluation around `duet-core`.

pub mod ablate;
pub mod checkpoint;
pub mod datamodel;
pub mod eval;
pub mod reports;
pub mod synthgen;
pub mod train;
pub mod tasks;
