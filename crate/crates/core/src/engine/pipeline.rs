//! The full three-stage run, its configuration file and output layout.
//!
//! ```text
//! <output_dir>/
//!   pool-<hash>.json         candidate pool with cost labels
//!   predictor-stage1.json    pretrained predictor
//!   stage2-checkpoint.json   search state, rewritten after every iteration
//!   results.json             ResultBundle
//!   results.csv              flat export of all ranked lists
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::stage2::stage2_step;
use super::{
    build_pool, derive_seed, pool_hash, stage3_evolve, PoolEntry, SearchState, Stage2Config,
    Stage3Config, Stage3Report,
};
use crate::cost::ConstraintSet;
use crate::error::{Error, Result};
use crate::evaluator::{Evaluator, PluginConfig, PluginEvaluator, SyntheticOracle};
use crate::predictor::{
    pretrain_proxy, CostNormalization, FitReport, PredictorNet, PretrainConfig, ProxySample,
};
use crate::space::{Genome, SearchSpaceDef};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EvaluatorSpec {
    Synthetic,
    Plugin(PluginConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage1Config {
    /// Turn off to start stage 2 from a randomly initialized predictor.
    pub enabled: bool,
    pub pretrain: PretrainConfig,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Stage1Config {
            enabled: true,
            pretrain: PretrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Path to a space file (relative paths resolve against the config
    /// file), or `builtin:fbnetv3`, `builtin:baseline`, `builtin:toy`.
    pub space: String,
    pub evaluator: EvaluatorSpec,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub parallelism: usize,
    #[serde(default)]
    pub stage1: Stage1Config,
    #[serde(default)]
    pub stage2: Stage2Config,
    #[serde(default)]
    pub stage3: Stage3Config,
    /// One stage-3 search per entry.
    #[serde(default)]
    pub constraints: Vec<ConstraintSet>,
}

fn one() -> usize {
    1
}

impl RunConfig {
    /// Parses a TOML config; relative paths are resolved against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))?;
        if !cfg.space.starts_with("builtin:") && Path::new(&cfg.space).is_relative() {
            cfg.space = base_dir.join(&cfg.space).to_string_lossy().into_owned();
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base_dir.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// The space file's text.
    pub fn space_source(&self) -> Result<String> {
        read_space_source(&self.space)
    }

    pub fn validate(&self) -> Result<()> {
        if self.parallelism == 0 {
            return Err(Error::InvalidArgument(
                "parallelism must be at least 1".into(),
            ));
        }
        self.stage2.validate()?;
        self.stage3.validate()
    }

    pub fn evaluator(&self, space: &SearchSpaceDef) -> Result<Box<dyn Evaluator>> {
        Ok(match &self.evaluator {
            EvaluatorSpec::Synthetic => {
                Box::new(SyntheticOracle::new(space).with_full_budget(self.stage2.full_budget))
            }
            EvaluatorSpec::Plugin(p) => {
                let mut p = p.clone();
                p.parallelism = self.parallelism;
                Box::new(PluginEvaluator::new(p)?)
            }
        })
    }

    pub fn layout(&self) -> RunLayout {
        RunLayout {
            root: self.output_dir.clone(),
        }
    }
}

/// Reads a space file, or one of `builtin:fbnetv3`, `builtin:baseline`,
/// `builtin:toy`.
pub fn read_space_source(spec: &str) -> Result<String> {
    Ok(match spec {
        "builtin:fbnetv3" => crate::builtin::FBNETV3.to_string(),
        "builtin:baseline" => crate::builtin::BASELINE.to_string(),
        "builtin:toy" => crate::builtin::TOY.to_string(),
        s if s.starts_with("builtin:") => {
            return Err(Error::InvalidArgument(format!(
                "unknown builtin space `{s}`"
            )))
        }
        path => std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?,
    })
}

/// Paths inside a run's output directory.
#[derive(Debug, Clone)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn pool(&self, hash: &str) -> PathBuf {
        self.root.join(format!("pool-{hash}.json"))
    }
    pub fn predictor(&self) -> PathBuf {
        self.root.join("predictor-stage1.json")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("stage2-checkpoint.json")
    }
    pub fn results(&self) -> PathBuf {
        self.root.join("results.json")
    }
    pub fn results_csv(&self) -> PathBuf {
        self.root.join("results.csv")
    }
}

/// On-disk pool: the space text plus genomes and cost labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolFile {
    pub format: String,
    pub space_source: String,
    pub layout_fingerprint: String,
    pub seed: u64,
    pub requested: usize,
    pub flop_window: Option<(u64, u64)>,
    pub hash: String,
    pub entries: Vec<PoolRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolRecord {
    pub genome: Vec<usize>,
    pub flops: u64,
    pub params: u64,
}

const POOL_FORMAT: &str = "nars-pool-v1";

impl PoolFile {
    pub fn new(
        space_source: &str,
        space: &SearchSpaceDef,
        pool: &[PoolEntry],
        seed: u64,
        requested: usize,
        window: Option<(u64, u64)>,
    ) -> Self {
        PoolFile {
            format: POOL_FORMAT.into(),
            space_source: space_source.into(),
            layout_fingerprint: space.layout().fingerprint(),
            seed,
            requested,
            flop_window: window,
            hash: pool_hash(pool),
            entries: pool
                .iter()
                .map(|e| PoolRecord {
                    genome: e.genome.0.clone(),
                    flops: e.flops,
                    params: e.params,
                })
                .collect(),
        }
    }

    /// Rebuilds the space and pool entries, checking the stored labels.
    pub fn restore(&self) -> Result<(SearchSpaceDef, Vec<PoolEntry>)> {
        if self.format != POOL_FORMAT {
            return Err(Error::InvalidArgument(format!(
                "unknown pool format `{}`",
                self.format
            )));
        }
        let space = SearchSpaceDef::load(&self.space_source)?;
        let genes = space.genes();
        let mut pool = Vec::with_capacity(self.entries.len());
        for r in &self.entries {
            if r.genome.len() != genes.len()
                || r.genome.iter().zip(genes).any(|(&i, g)| i >= g.len())
            {
                return Err(Error::InvalidArgument(
                    "pool record does not fit the space".into(),
                ));
            }
            let e = PoolEntry::new(&space, Genome(r.genome.clone()));
            if (e.flops, e.params) != (r.flops, r.params) {
                return Err(Error::InvalidArgument(
                    "pool cost labels do not match the space".into(),
                ));
            }
            pool.push(e);
        }
        if pool_hash(&pool) != self.hash {
            return Err(Error::InvalidArgument("pool hash mismatch".into()));
        }
        Ok((space, pool))
    }
}

/// Cost labels for pretraining, min-max normalized over the pool.
pub fn proxy_samples(pool: &[PoolEntry]) -> (Vec<ProxySample>, CostNormalization) {
    let costs: Vec<(u64, u64)> = pool.iter().map(|e| (e.flops, e.params)).collect();
    let norm = CostNormalization::fit(&costs);
    let samples = pool
        .iter()
        .map(|e| {
            let (f, p) = norm.normalize(e.flops, e.params);
            ProxySample {
                arch: e.encoded.arch().to_vec(),
                flops_norm: f,
                params_norm: p,
            }
        })
        .collect();
    (samples, norm)
}

/// Fresh predictor for `space`, pretrained on `pool` when `stage1.enabled`.
pub fn stage1_pretrain(
    space: &SearchSpaceDef,
    pool: &[PoolEntry],
    config: &Stage1Config,
    seed: u64,
) -> Result<(PredictorNet, Option<FitReport>)> {
    let layout = space.layout();
    let mut net = PredictorNet::init(
        layout.arch_dim,
        layout.recipe_dim(),
        derive_seed(seed, "init", 0),
    )?;
    net.layout_fingerprint = Some(layout.fingerprint());
    if !config.enabled || layout.arch_dim == 0 {
        if config.enabled {
            log::info!("space has no architecture choices; skipping pretraining");
        }
        return Ok((net, None));
    }
    let (samples, norm) = proxy_samples(pool);
    let report = pretrain_proxy(
        &mut net,
        &samples,
        &config.pretrain,
        derive_seed(seed, "pretrain", 0),
    )?;
    net.normalization = Some(norm);
    log::info!(
        "pretraining: {} epochs, val mse {:.3e}, val rank corr {:?}",
        report.epochs_run,
        report.val_mse,
        report.val_rank_correlation
    );
    Ok((net, Some(report)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintResult {
    pub constraints: ConstraintSet,
    pub report: Stage3Report,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Summary {
    pub iterations: usize,
    pub dataset_size: usize,
    pub failures: usize,
    pub early_stop_epoch: Option<u32>,
    pub early_stop_reached: Option<bool>,
    pub fit: Option<FitReport>,
    pub best_measured_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultBundle {
    pub seed: u64,
    pub space: String,
    pub layout_fingerprint: String,
    pub pool_hash: String,
    pub pool_size: usize,
    pub stage1: Option<FitReport>,
    pub stage2: Stage2Summary,
    pub results: Vec<ConstraintResult>,
}

/// One stage-3 search per constraint set, all from the same predictor.
pub fn run_stage3_all(
    space: &SearchSpaceDef,
    state: &SearchState,
    config: &Stage3Config,
    constraints: &[ConstraintSet],
    seed: u64,
) -> Result<Vec<ConstraintResult>> {
    constraints
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let cfg = Stage3Config {
                constraints: c.clone(),
                ..config.clone()
            };
            let report = stage3_evolve(
                space,
                &state.predictor,
                &state.dataset,
                &cfg,
                derive_seed(seed, "evolve", i as u64),
            )
            .map_err(|e| e.in_stage(3))?;
            Ok(ConstraintResult {
                constraints: c.clone(),
                report,
            })
        })
        .collect()
}

impl Stage2Summary {
    pub fn of(state: &SearchState) -> Self {
        Stage2Summary {
            iterations: state.iteration,
            dataset_size: state.dataset.len(),
            failures: state.failures.len(),
            early_stop_epoch: state.early_stop.as_ref().map(|e| e.epoch),
            early_stop_reached: state.early_stop.as_ref().map(|e| e.reached),
            fit: state.fit.clone(),
            best_measured_accuracy: state.dataset.iter().map(|s| s.accuracy).reduce(f64::max),
        }
    }
}

/// Builds or reloads the pool for `config` and stores it under the run
/// directory.
pub fn prepare_pool(config: &RunConfig) -> Result<(SearchSpaceDef, Vec<PoolEntry>, String)> {
    let source = config.space_source()?;
    let space = SearchSpaceDef::load(&source)?;
    let s2 = &config.stage2;
    let pool = build_pool(
        &space,
        s2.pool_size,
        derive_seed(config.seed, "pool", 0),
        s2.flop_window,
        &s2.constraints,
    );
    if pool.is_empty() {
        return Err(Error::Search(
            "no pool candidate satisfies the flop window and constraints".into(),
        ));
    }
    let file = PoolFile::new(
        &source,
        &space,
        &pool,
        config.seed,
        s2.pool_size,
        s2.flop_window,
    );
    let path = config.layout().pool(&file.hash);
    if !path.exists() {
        crate::io::write_json(&path, &file)?;
    }
    Ok((space, pool, source))
}

/// Stages 1 and 2 with a checkpoint after every iteration. An existing
/// checkpoint for the same pool and seed is resumed.
pub fn run_search(
    config: &RunConfig,
) -> Result<(
    SearchSpaceDef,
    Vec<PoolEntry>,
    SearchState,
    Option<FitReport>,
)> {
    config.validate()?;
    let layout = config.layout();
    let (space, pool, _) = prepare_pool(config).map_err(|e| e.in_stage(1))?;
    let ckpt = layout.checkpoint();
    let (mut state, stage1_report) = if ckpt.exists() {
        let state = SearchState::load(&ckpt)?;
        if state.pool_hash != pool_hash(&pool) || state.seed != config.seed {
            return Err(Error::Search(format!(
                "{} belongs to a different pool or seed",
                ckpt.display()
            )));
        }
        log::info!("resuming stage 2 after iteration {}", state.iteration);
        let report: Option<FitReport> =
            crate::io::read_json(&layout.root.join("stage1-report.json")).ok();
        (state, report)
    } else {
        let (net, report) = stage1_pretrain(&space, &pool, &config.stage1, config.seed)
            .map_err(|e| e.in_stage(1))?;
        net.save(layout.predictor())?;
        crate::io::write_json(&layout.root.join("stage1-report.json"), &report)?;
        (SearchState::new(&pool, &net, config.seed), report)
    };
    let evaluator = config.evaluator(&space)?;
    while !state.is_complete(&config.stage2) {
        stage2_step(
            &space,
            evaluator.as_ref(),
            &pool,
            &mut state,
            &config.stage2,
        )
        .map_err(|e| e.in_stage(2))?;
        state.save(&ckpt)?;
    }
    Ok((space, pool, state, stage1_report))
}

/// Stage 3 from a finished stage-2 state; no evaluator is involved.
pub fn run_evolve(
    config: &RunConfig,
    space: &SearchSpaceDef,
    pool: &[PoolEntry],
    state: &SearchState,
    stage1: Option<FitReport>,
) -> Result<ResultBundle> {
    if config.constraints.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one constraint set is required".into(),
        ));
    }
    let results = run_stage3_all(
        space,
        state,
        &config.stage3,
        &config.constraints,
        config.seed,
    )?;
    Ok(ResultBundle {
        seed: config.seed,
        space: space.name.clone(),
        layout_fingerprint: space.layout().fingerprint(),
        pool_hash: pool_hash(pool),
        pool_size: pool.len(),
        stage1,
        stage2: Stage2Summary::of(state),
        results,
    })
}

/// Writes `results.json` and `results.csv`; refuses to replace a completed
/// run unless `force`.
pub fn write_results(config: &RunConfig, bundle: &ResultBundle, force: bool) -> Result<()> {
    let layout = config.layout();
    if layout.results().exists() && !force {
        return Err(Error::InvalidArgument(format!(
            "{} already exists; pass --force to overwrite",
            layout.results().display()
        )));
    }
    crate::io::write_json(&layout.results(), bundle)?;
    crate::io::write_atomic(&layout.results_csv(), export_csv(bundle).as_bytes())
}

/// The complete pipeline: pool, stage 1, stage 2, and one stage-3 search
/// per constraint set.
pub fn run_nars(config: &RunConfig) -> Result<ResultBundle> {
    if config.constraints.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one constraint set is required".into(),
        ));
    }
    let (space, pool, state, stage1) = run_search(config)?;
    run_evolve(config, &space, &pool, &state, stage1)
}

fn candidate_id(space_fingerprint: &str, c: &crate::space::Candidate) -> String {
    let json = serde_json::to_vec(c).expect("candidate serializes");
    crate::io::short_hash(&[space_fingerprint.as_bytes(), &json].concat())
}

/// Flat CSV of every ranked list in the bundle.
pub fn export_csv(bundle: &ResultBundle) -> String {
    let mut out = String::from(
        "constraints,rank,candidate_id,predicted_score,measured_accuracy,flops,params\n",
    );
    for r in &bundle.results {
        for (rank, c) in r.report.results.iter().enumerate() {
            out.push_str(&format!(
                "\"{}\",{},{},{},{},{},{}\n",
                r.constraints,
                rank + 1,
                candidate_id(&bundle.layout_fingerprint, &c.candidate),
                c.score,
                c.measured_accuracy
                    .map(|a| a.to_string())
                    .unwrap_or_default(),
                c.flops,
                c.params
            ));
        }
    }
    out
}
