use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, determine_early_stop, select_batch, EarlyStop, PoolEntry};
use crate::cost::ConstraintSet;
use crate::error::{Error, Result};
use crate::evaluator::{EvalRequest, Evaluator, DEFAULT_FULL_BUDGET};
use crate::predictor::{
    finetune_accuracy, AccuracySample, FinetuneConfig, FitReport, PredictorNet,
};
use crate::space::{Candidate, SearchSpaceDef};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage2Config {
    /// Quasi-random draws before window/constraint filtering.
    pub pool_size: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub early_stop_threshold: f64,
    /// Epoch budget for first-iteration evaluations.
    pub full_budget: u32,
    /// Inclusive FLOP range a pool member must fall in.
    pub flop_window: Option<(u64, u64)>,
    pub constraints: ConstraintSet,
    pub finetune: FinetuneConfig,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Stage2Config {
            pool_size: 20_000,
            batch_size: 48,
            iterations: 5,
            early_stop_threshold: 0.92,
            full_budget: DEFAULT_FULL_BUDGET,
            flop_window: None,
            constraints: ConstraintSet::new(),
            finetune: FinetuneConfig::default(),
        }
    }
}

impl Stage2Config {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.batch_size == 0 || self.batch_size > self.pool_size {
            return bad("batch size must be in 1..=pool_size");
        }
        if self.iterations == 0 {
            return bad("at least one iteration is required");
        }
        if !(self.early_stop_threshold > 0.0 && self.early_stop_threshold <= 1.0) {
            return bad("early-stop threshold must be in (0, 1]");
        }
        if self.full_budget == 0 {
            return bad("full budget must be at least one epoch");
        }
        if let Some((lo, hi)) = self.flop_window {
            if lo > hi {
                return bad("flop window is inverted");
            }
        }
        Ok(())
    }
}

/// A measured candidate. `accuracy` is the last entry of `curve`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub pool_index: usize,
    pub candidate: Candidate,
    pub accuracy: f64,
    pub curve: Option<Vec<f64>>,
    /// Epochs trained.
    pub epochs: u32,
    /// Trained to the full budget rather than the early-stop epoch.
    pub full_budget: bool,
    pub iteration: usize,
    pub flops: u64,
    pub params: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedEval {
    pub pool_index: usize,
    pub iteration: usize,
    pub reason: String,
    /// Epochs reported before the failure.
    pub partial_curve: Vec<f64>,
}

const STATE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchState {
    pub version: u32,
    pub seed: u64,
    /// Completed iterations.
    pub iteration: usize,
    pub pool_hash: String,
    pub evaluated: BTreeSet<usize>,
    pub dataset: Vec<LabeledSample>,
    pub failures: Vec<FailedEval>,
    pub early_stop: Option<EarlyStop>,
    /// Current accuracy predictor, refit after every iteration.
    pub predictor: PredictorNet,
    pub fit: Option<FitReport>,
    /// Stage-1 network that every refit starts from.
    pub base_predictor: PredictorNet,
    /// The pool ran out before the configured iterations finished.
    pub exhausted: bool,
}

impl SearchState {
    pub fn new(pool: &[PoolEntry], predictor: &PredictorNet, seed: u64) -> Self {
        SearchState {
            version: STATE_VERSION,
            seed,
            iteration: 0,
            pool_hash: super::pool_hash(pool),
            evaluated: BTreeSet::new(),
            dataset: Vec::new(),
            failures: Vec::new(),
            early_stop: None,
            predictor: predictor.clone(),
            fit: None,
            base_predictor: predictor.clone(),
            exhausted: false,
        }
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let s: SearchState = crate::io::read_json(path)?;
        if s.version != STATE_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported search checkpoint version {}",
                s.version
            )));
        }
        Ok(s)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::io::write_json(path, self)
    }

    pub fn is_complete(&self, config: &Stage2Config) -> bool {
        self.iteration >= config.iterations || self.exhausted
    }
}

fn flop_range(pool: &[PoolEntry], config: &Stage2Config) -> (u64, u64) {
    config.flop_window.unwrap_or_else(|| {
        let lo = pool.iter().map(|e| e.flops).min().unwrap_or(0);
        let hi = pool.iter().map(|e| e.flops).max().unwrap_or(0);
        (lo, hi)
    })
}

pub(crate) fn accuracy_samples(
    space: &SearchSpaceDef,
    dataset: &[LabeledSample],
) -> Result<Vec<AccuracySample>> {
    dataset
        .iter()
        .map(|s| {
            Ok(AccuracySample {
                x: space.encode(&s.candidate)?.values,
                accuracy: s.accuracy,
            })
        })
        .collect()
}

/// Runs one select / evaluate / refit iteration and advances `state`.
pub fn stage2_step(
    space: &SearchSpaceDef,
    evaluator: &dyn Evaluator,
    pool: &[PoolEntry],
    state: &mut SearchState,
    config: &Stage2Config,
) -> Result<()> {
    if state.pool_hash != super::pool_hash(pool) {
        return Err(Error::Search(
            "checkpoint was taken against a different pool".into(),
        ));
    }
    let t = state.iteration + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(state.seed, "select", t as u64));
    let scores: Option<Vec<f64>> = (t > 1).then(|| {
        pool.iter()
            .map(|e| {
                state
                    .predictor
                    .forward_accuracy(&e.encoded.values)
                    .expect("pool matches layout")
            })
            .collect()
    });
    let selection = select_batch(
        pool,
        &state.evaluated,
        scores.as_deref(),
        config.batch_size,
        flop_range(pool, config),
        &mut rng,
    );
    if selection.exhausted {
        log::warn!(
            "iteration {t}: pool exhausted, selected {} candidates",
            selection.indices.len()
        );
        state.exhausted = true;
    }

    let budget = match &state.early_stop {
        Some(es) if t > 1 => es.epoch,
        _ => config.full_budget,
    };
    let requests: Vec<EvalRequest> = selection
        .indices
        .iter()
        .map(|&i| EvalRequest {
            id: i as u64,
            candidate: pool[i].candidate.clone(),
            epoch_budget: budget,
            seed: derive_seed(state.seed, "eval", i as u64),
        })
        .collect();
    let results = evaluator.evaluate(&requests)?;
    if results.len() != requests.len() {
        return Err(Error::Evaluator(
            "result count differs from request count".into(),
        ));
    }

    let mut curves = Vec::new();
    for (&i, res) in selection.indices.iter().zip(results) {
        state.evaluated.insert(i);
        match res.final_accuracy() {
            Some(acc) if res.curve.len() == budget as usize => {
                curves.push(res.curve.clone());
                state.dataset.push(LabeledSample {
                    pool_index: i,
                    candidate: pool[i].candidate.clone(),
                    accuracy: acc,
                    curve: Some(res.curve),
                    epochs: budget,
                    full_budget: budget == config.full_budget,
                    iteration: t,
                    flops: pool[i].flops,
                    params: pool[i].params,
                });
            }
            _ => {
                let reason = match &res.status {
                    crate::evaluator::EvalStatus::Failed { reason } => reason.clone(),
                    crate::evaluator::EvalStatus::Ok => {
                        format!("curve length {} != budget {budget}", res.curve.len())
                    }
                };
                log::warn!("iteration {t}: candidate {i} failed: {reason}");
                state.failures.push(FailedEval {
                    pool_index: i,
                    iteration: t,
                    reason,
                    partial_curve: res.curve,
                });
            }
        }
    }

    if t == 1 {
        state.early_stop = Some(if curves.len() >= 2 {
            determine_early_stop(&curves, config.early_stop_threshold)?
        } else {
            log::warn!("fewer than two successful curves; keeping the full budget");
            EarlyStop {
                epoch: config.full_budget,
                reached: false,
                degenerate_epochs: Vec::new(),
                correlations: Vec::new(),
            }
        });
    }

    if state.dataset.is_empty() {
        log::warn!("iteration {t}: no labeled samples yet, predictor not refit");
    } else {
        let train = accuracy_samples(space, &state.dataset)?;
        let mut net = state.base_predictor.clone();
        let fit = finetune_accuracy(
            &mut net,
            &train,
            None,
            &config.finetune,
            derive_seed(state.seed, "refit", t as u64),
        )?;
        log::info!(
            "iteration {t}: {} samples, train mse {:.3e}, rank corr {:?}",
            train.len(),
            fit.train_mse,
            fit.val_rank_correlation
        );
        state.predictor = net;
        state.fit = Some(fit);
    }
    state.iteration = t;
    Ok(())
}

/// Runs all iterations from a fresh state.
pub fn stage2_run(
    space: &SearchSpaceDef,
    evaluator: &dyn Evaluator,
    pool: &[PoolEntry],
    predictor: &PredictorNet,
    config: &Stage2Config,
    seed: u64,
) -> Result<SearchState> {
    config.validate()?;
    if pool.is_empty() {
        return Err(Error::Empty("candidate pool"));
    }
    let mut state = SearchState::new(pool, predictor, seed);
    while !state.is_complete(config) {
        stage2_step(space, evaluator, pool, &mut state, config)?;
    }
    Ok(state)
}
