use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cost::{cost, ConstraintSet};
use crate::space::{sobol_points, Candidate, EncodedVector, Genome, SearchSpaceDef};

/// A pool member with everything needed for selection precomputed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub candidate: Candidate,
    pub genome: Genome,
    pub encoded: EncodedVector,
    pub flops: u64,
    pub params: u64,
}

impl PoolEntry {
    pub fn new(space: &SearchSpaceDef, genome: Genome) -> Self {
        let candidate = space.decode(&genome);
        let report = cost(&candidate.arch);
        PoolEntry {
            encoded: space.encode_genome(&genome),
            candidate,
            genome,
            flops: report.total_flops,
            params: report.total_params,
        }
    }
}

/// Draws `n` quasi-random candidates and keeps those inside the FLOP window
/// (inclusive) that satisfy `constraints`. Duplicate genomes are dropped.
pub fn build_pool(
    space: &SearchSpaceDef,
    n: usize,
    seed: u64,
    flop_window: Option<(u64, u64)>,
    constraints: &ConstraintSet,
) -> Vec<PoolEntry> {
    let mut seen = std::collections::HashSet::new();
    sobol_points(space.genes().len(), n, seed)
        .iter()
        .map(|p| crate::space::genome_from_point(space, p))
        .filter(|g| seen.insert(g.clone()))
        .map(|g| PoolEntry::new(space, g))
        .filter(|e| flop_window.is_none_or(|(lo, hi)| (lo..=hi).contains(&e.flops)))
        .filter(|e| constraints.admits(e.flops, e.params))
        .collect()
}

/// Content hash over the pool's genomes, used to name pool files and to
/// check that a resumed run sees the same pool.
pub fn pool_hash(pool: &[PoolEntry]) -> String {
    let mut h = Sha256::new();
    for e in pool {
        for &i in &e.genome.0 {
            h.update((i as u64).to_le_bytes());
        }
        h.update(b";");
    }
    hex::encode(&h.finalize()[..8])
}
