//! Deterministic sub-seed derivation.
//!
//! Every job (split, trial, grid point) gets its own generator seeded from
//! `(master seed, job index)`, so serial and parallel runs draw identical
//! streams regardless of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type JobRng = ChaCha8Rng;

/// SplitMix64 finalizer over the master seed and job index.
pub fn derive_seed(master: u64, job: u64) -> u64 {
    let mut z = master
        .wrapping_add(job.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn job_rng(master: u64, job: u64) -> JobRng {
    JobRng::seed_from_u64(derive_seed(master, job))
}
