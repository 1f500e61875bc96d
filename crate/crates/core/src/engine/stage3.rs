use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mutate::mutate_genome;
use super::{derive_seed, LabeledSample, PoolEntry};
use crate::cost::ConstraintSet;
use crate::error::{Error, Result};
use crate::predictor::PredictorNet;
use crate::space::{sample_genome, Candidate, EncodedVector, Genome, SearchSpaceDef};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage3Config {
    pub p_best: usize,
    pub q_random: usize,
    pub children_per_candidate: usize,
    pub top_k: usize,
    pub epsilon: f64,
    pub max_generations: usize,
    pub initial_mutation_rate: f64,
    /// Attempts per child before giving up on it.
    pub retry_cap: usize,
    /// Set per run from the run's constraint list.
    #[serde(skip)]
    pub constraints: ConstraintSet,
}

impl Default for Stage3Config {
    fn default() -> Self {
        Stage3Config {
            p_best: 50,
            q_random: 50,
            children_per_candidate: 24,
            top_k: 40,
            epsilon: 1e-6,
            max_generations: 100,
            initial_mutation_rate: 0.1,
            retry_cap: 100,
            constraints: ConstraintSet::new(),
        }
    }
}

impl Stage3Config {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.top_k == 0 || self.p_best + self.q_random < self.top_k {
            return bad("need 0 < top_k <= p_best + q_random");
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad("epsilon must be positive");
        }
        if self.max_generations == 0 {
            return bad("max_generations must be at least 1");
        }
        if !(self.initial_mutation_rate > 0.0 && self.initial_mutation_rate <= 1.0) {
            return bad("mutation rate must be in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub candidate: Candidate,
    pub score: f64,
    pub flops: u64,
    pub params: u64,
    /// Accuracy measured during stage 2, when this candidate was evaluated.
    pub measured_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Converged,
    MaxGenerations,
    NoFeasibleChildren,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage3Report {
    pub constraints: ConstraintSet,
    /// Best first.
    pub results: Vec<ScoredCandidate>,
    pub generations: usize,
    /// Best predicted score after initialization and after each generation.
    pub best_history: Vec<f64>,
    /// Mutation rate used by each generation.
    pub rate_history: Vec<f64>,
    pub stop_reason: StopReason,
    pub warnings: Vec<String>,
}

#[derive(Clone)]
struct Member {
    genome: Genome,
    encoded: EncodedVector,
    score: f64,
    flops: u64,
    params: u64,
}

fn rank(a: &Member, b: &Member) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.encoded.lex_cmp(&b.encoded))
}

struct Scorer<'a> {
    space: &'a SearchSpaceDef,
    net: &'a PredictorNet,
    constraints: &'a ConstraintSet,
}

impl Scorer<'_> {
    /// Builds a member if it satisfies the constraints.
    fn admit(&self, genome: Genome) -> Option<Member> {
        let e = PoolEntry::new(self.space, genome);
        if !self.constraints.admits(e.flops, e.params) {
            return None;
        }
        let score = self
            .net
            .forward_accuracy(&e.encoded.values)
            .expect("layout matches");
        Some(Member {
            genome: e.genome,
            encoded: e.encoded,
            score,
            flops: e.flops,
            params: e.params,
        })
    }
}

/// Keeps the best `k` distinct members.
fn survivors(mut members: Vec<Member>, k: usize) -> Vec<Member> {
    members.sort_by(rank);
    let mut seen = HashSet::new();
    members.retain(|m| seen.insert(m.genome.clone()));
    members.truncate(k);
    members
}

/// Predictor-guided evolutionary search under `config.constraints`.
pub fn stage3_evolve(
    space: &SearchSpaceDef,
    predictor: &PredictorNet,
    dataset: &[LabeledSample],
    config: &Stage3Config,
    seed: u64,
) -> Result<Stage3Report> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "stage3", 0));
    let scorer = Scorer {
        space,
        net: predictor,
        constraints: &config.constraints,
    };
    let mut warnings = Vec::new();

    let mut measured: Vec<(Genome, f64)> = Vec::new();
    for s in dataset {
        measured.push((space.genome(&s.candidate)?, s.accuracy));
    }
    let measured_map: HashMap<Genome, f64> = measured.iter().cloned().collect();
    measured.sort_by(|a, b| {
        b.1.total_cmp(&a.1).then_with(|| {
            space
                .encode_genome(&a.0)
                .lex_cmp(&space.encode_genome(&b.0))
        })
    });

    let mut population: Vec<Member> = Vec::new();
    let mut seen = HashSet::new();
    for (g, _) in &measured {
        if population.len() == config.p_best {
            break;
        }
        if seen.contains(g) {
            continue;
        }
        if let Some(m) = scorer.admit(g.clone()) {
            seen.insert(g.clone());
            population.push(m);
        }
    }
    if population.len() < config.p_best {
        let w = format!(
            "only {} of {} best-measured candidates satisfy {}; filling with random samples",
            population.len(),
            config.p_best,
            config.constraints
        );
        log::warn!("{w}");
        warnings.push(w);
    }
    let target = config.p_best + config.q_random;
    let attempts = config.retry_cap.max(1) * target;
    for _ in 0..attempts {
        if population.len() >= target {
            break;
        }
        let g = sample_genome(space, &mut rng);
        if seen.contains(&g) {
            continue;
        }
        if let Some(m) = scorer.admit(g.clone()) {
            seen.insert(g);
            population.push(m);
        }
    }
    if population.is_empty() {
        return Err(Error::Search(format!(
            "no candidate satisfying {} was found",
            config.constraints
        )));
    }

    let mut population = survivors(population, usize::MAX);
    let mut best = population[0].score;
    let mut best_history = vec![best];
    let mut rate_history = Vec::new();
    let mut rate = config.initial_mutation_rate;
    let mut generations = 0;
    let stop_reason = loop {
        generations += 1;
        rate_history.push(rate);
        let mut children = Vec::new();
        for parent in &population {
            for _ in 0..config.children_per_candidate {
                for _ in 0..config.retry_cap.max(1) {
                    let g = mutate_genome(space, &parent.genome, rate, &mut rng);
                    if let Some(m) = scorer.admit(g) {
                        children.push(m);
                        break;
                    }
                }
            }
        }
        if children.is_empty() {
            let w = format!("generation {generations}: no constraint-satisfying child found");
            log::warn!("{w}");
            warnings.push(w);
            break StopReason::NoFeasibleChildren;
        }
        population.extend(children);
        population = survivors(population, config.top_k);
        let new_best = population[0].score;
        let gain = new_best - best;
        best = new_best;
        best_history.push(best);
        rate = if gain < 10.0 * config.epsilon {
            (rate / 2.0).max(0.01)
        } else {
            (rate * 2.0).min(0.5)
        };
        if gain <= config.epsilon {
            break StopReason::Converged;
        }
        if generations >= config.max_generations {
            break StopReason::MaxGenerations;
        }
    };
    population.truncate(config.top_k);

    Ok(Stage3Report {
        constraints: config.constraints.clone(),
        results: population
            .into_iter()
            .map(|m| ScoredCandidate {
                measured_accuracy: measured_map.get(&m.genome).copied(),
                candidate: space.decode(&m.genome),
                score: m.score,
                flops: m.flops,
                params: m.params,
            })
            .collect(),
        generations,
        best_history,
        rate_history,
        stop_reason,
        warnings,
    })
}
