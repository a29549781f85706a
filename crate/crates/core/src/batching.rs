//! Seed-deterministic epoch batching over sample indices.

use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::rng::{mix_seed, SeedRng};

/// Shuffled index batches for one epoch. Every index in 0..n appears exactly
/// once; the final short batch is kept.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(invalid("batch_size must be >= 1"));
    }
    let mut rng = SeedRng::new(mix_seed(seed, 0x6261_7463 ^ epoch));
    let perm = rng.permutation(n);
    Ok(perm.chunks(batch_size).map(|c| c.to_vec()).collect())
}
