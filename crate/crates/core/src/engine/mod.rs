//! Search orchestration: candidate pool, iterative predictor refinement and
//! constrained evolution.

mod early_stop;
mod mutate;
mod pipeline;
mod pool;
mod select;
mod stage2;
mod stage3;

pub use early_stop::{determine_early_stop, EarlyStop};
pub use mutate::mutate;
pub use mutate::mutate_genome;
pub use pipeline::{
    export_csv, prepare_pool, proxy_samples, read_space_source, run_evolve, run_nars, run_search,
    run_stage3_all, stage1_pretrain, write_results, ConstraintResult, EvaluatorSpec, PoolFile,
    PoolRecord, ResultBundle, RunConfig, RunLayout, Stage1Config, Stage2Summary,
};
pub use pool::{build_pool, pool_hash, PoolEntry};
pub use select::{select_batch, Selection};
pub use stage2::{stage2_run, stage2_step, FailedEval, LabeledSample, SearchState, Stage2Config};
pub use stage3::{stage3_evolve, ScoredCandidate, Stage3Config, Stage3Report, StopReason};

/// Derives an independent seed for a sub-task, so each piece of randomness
/// depends only on `(seed, tag, index)` and not on call order.
pub fn derive_seed(seed: u64, tag: &str, index: u64) -> u64 {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    h.update(index.to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}
