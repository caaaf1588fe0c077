use std::collections::BTreeMap;
use std::path::Path;

use catalyst_core::rng::child_seed;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const SEED_SCHEDULE: &str =
    "replica i draws from ChaCha8(seed_i), seed_i = splitmix64(splitmix64(master) ^ i * 0x9E3779B97F4A7C15)";

/// How many child seeds are listed in the manifest.
const LISTED_SEEDS: usize = 16;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PredicateCounts {
    pub passed: usize,
    pub failed_soft: usize,
    pub failed_hard: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    pub config_hash: String,
    pub version: String,
    pub wall_time_seconds: f64,
    pub master_seed: Option<u64>,
    pub replicas: Option<usize>,
    pub workers: usize,
    pub seed_schedule: String,
    /// Child seeds of the first replicas; every worker count uses the same
    /// schedule.
    pub replica_seeds: Vec<u64>,
    /// Counts per warning kind (`window_violation`, `heavy_tail`,
    /// `zero_hits`, ...).
    pub warnings: BTreeMap<String, usize>,
    pub warning_details: Vec<String>,
    pub predicates: PredicateCounts,
    pub artifacts: Vec<Artifact>,
}

impl RunManifest {
    pub fn new(experiment: &str, config_hash: String, master_seed: Option<u64>, replicas: Option<usize>, workers: usize) -> Self {
        let replica_seeds = match master_seed {
            Some(m) => (0..replicas.unwrap_or(0).min(LISTED_SEEDS) as u64).map(|i| child_seed(m, i)).collect(),
            None => Vec::new(),
        };
        RunManifest {
            experiment: experiment.into(),
            config_hash,
            version: env!("CARGO_PKG_VERSION").into(),
            wall_time_seconds: 0.0,
            master_seed,
            replicas,
            workers,
            seed_schedule: SEED_SCHEDULE.into(),
            replica_seeds,
            warnings: BTreeMap::new(),
            warning_details: Vec::new(),
            predicates: PredicateCounts::default(),
            artifacts: Vec::new(),
        }
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read(path)?;
        serde_json::from_slice(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Artifacts of `self` must match `reference` byte for byte.
    pub fn verify_against(&self, reference: &RunManifest) -> CliResult<()> {
        if self.config_hash != reference.config_hash {
            return Err(CliError::Reproducibility(format!(
                "config hash {} differs from the reference {}",
                self.config_hash, reference.config_hash
            )));
        }
        for old in &reference.artifacts {
            match self.artifacts.iter().find(|a| a.path == old.path) {
                Some(new) if new.sha256 == old.sha256 => {}
                Some(new) => {
                    return Err(CliError::Reproducibility(format!(
                        "{} has checksum {} instead of {}",
                        old.path, new.sha256, old.sha256
                    )))
                }
                None => return Err(CliError::Reproducibility(format!("{} was not produced", old.path))),
            }
        }
        Ok(())
    }
}
