//! Deterministic per-replica random streams and the replica runner.
//!
//! Replica `i` of a run with master seed `m` always draws from
//! `ChaCha8Rng::seed_from_u64(child_seed(m, i))`, whatever the number of
//! worker threads. Results are collected in replica order, so any reduction
//! done afterwards is independent of the parallelism degree.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub type ReplicaRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finaliser.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `H(master, index)`: the child seed of replica `index`.
#[inline]
pub fn child_seed(master: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master) ^ index.wrapping_mul(GOLDEN))
}

pub fn replica_rng(master: u64, index: u64) -> ReplicaRng {
    ChaCha8Rng::seed_from_u64(child_seed(master, index))
}

/// Sub-stream for a named purpose inside one experiment, so that two
/// estimators run with the same master seed do not share draws.
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    tag.bytes().fold(splitmix64(master), |h, b| splitmix64(h ^ b as u64))
}

/// How many replicas to run and on how many threads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Replication {
    pub master_seed: u64,
    pub replicas: usize,
    pub workers: usize,
}

impl Replication {
    pub fn new(master_seed: u64, replicas: usize) -> Self {
        Replication { master_seed, replicas, workers: 1 }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    pub fn with_seed(mut self, master_seed: u64) -> Self {
        self.master_seed = master_seed;
        self
    }

    pub fn with_replicas(mut self, replicas: usize) -> Self {
        self.replicas = replicas;
        self
    }

    /// Runs `f(index, rng)` for every replica and returns the outputs in
    /// replica order.
    pub fn run<T, F>(&self, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize, &mut ReplicaRng) -> T + Sync + Send,
    {
        if self.replicas == 0 {
            return Err(Error::InvalidParameter("replicas must be at least 1".into()));
        }
        let body = |i: usize| {
            let mut rng = replica_rng(self.master_seed, i as u64);
            f(i, &mut rng)
        };
        if self.workers <= 1 {
            return Ok((0..self.replicas).map(body).collect());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
        Ok(pool.install(|| (0..self.replicas).into_par_iter().map(body).collect()))
    }

    /// Like [`run`](Self::run) over an explicit index range, for sharded runs.
    pub fn run_range<T, F>(&self, start: usize, end: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize, &mut ReplicaRng) -> T + Sync + Send,
    {
        (start..end)
            .map(|i| {
                let mut rng = replica_rng(self.master_seed, i as u64);
                f(i, &mut rng)
            })
            .collect()
    }
}
