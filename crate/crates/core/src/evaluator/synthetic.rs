//! Deterministic stand-in for training a network.
//!
//! The oracle reads a candidate through its encoded vector, so it works for
//! any space file. With `x` the encoded values:
//!
//! ```text
//! width  = weighted mean of resolution / channel / expansion slots
//! depth  = weighted mean of depth slots
//! c      = (width + depth) / 2                      (0.5 when absent)
//! A_inf  = 0.55 + 0.25 * (1 - exp(-2.5 c)) / (1 - exp(-2.5))
//!        + 0.004 * share of stages using the larger kernel
//!        + 0.012 * ema + 0.005 * rmsprop
//!        - 0.25 * (lr - lr_opt)^2                   lr_opt = 0.6 rmsprop, 0.35 sgd
//!        - 0.05 * (reg - (0.15 + 0.6 c))^2          reg = mean of p, d, m, wd
//!        + 0.03 * (depth - width) * (2 lr - 1)
//! tau    = 2 + 6 * (1 - lr)
//! acc(e) = A_inf * (1 - exp(-e / tau)) + noise(seed, candidate, e)
//! ```
//!
//! All recipe quantities are the min-max normalized slot values (0.5 when
//! the parameter is fixed). The last term makes wide-shallow networks
//! prefer small learning rates and narrow-deep ones large learning rates.
//! Noise is uniform in `±NOISE_AMPLITUDE`, derived by hashing, and every
//! curve value is rounded to 1e-9.

use sha2::{Digest, Sha256};

use super::{EvalRequest, EvalResult, EvalStatus, Evaluator};
use crate::error::Result;
use crate::space::{
    Candidate, EncodedVector, Genome, RecipeField, SearchSpaceDef, Slot, SlotEncoding,
};

pub const NOISE_AMPLITUDE: f64 = 0.002;
pub const DEFAULT_FULL_BUDGET: u32 = 40;
const INTERACTION: f64 = 0.03;
const LR_CURVATURE: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Role {
    Width,
    Depth,
    LargeKernel,
    Lr,
    Sgd,
    Ema,
    Regularizer,
}

#[derive(Debug, Clone)]
struct Term {
    position: usize,
    role: Role,
    weight: f64,
}

/// Deterministic weight in `[0.5, 1.5]` for a slot name.
fn slot_weight(name: &str) -> f64 {
    let h = Sha256::digest(name.as_bytes());
    let v = u64::from_le_bytes(h[..8].try_into().unwrap());
    0.5 + (v >> 11) as f64 / (1u64 << 53) as f64
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn round9(v: f64) -> f64 {
    (v * 1e9).round() / 1e9
}

#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    space: SearchSpaceDef,
    terms: Vec<Term>,
    stage_count: usize,
    pub full_budget: u32,
}

/// Two architectures and two recipes whose accuracy ranking flips.
#[derive(Debug, Clone)]
pub struct ReferencePairs {
    /// Wide and shallow.
    pub a1: Candidate,
    /// Narrow and deep.
    pub a2: Candidate,
    /// Smallest learning rate.
    pub r1: Candidate,
    /// Largest learning rate.
    pub r2: Candidate,
}

impl SyntheticOracle {
    pub fn new(space: &SearchSpaceDef) -> Self {
        let layout = space.layout();
        let kernel_stages = space.stages.iter().filter(|s| s.kernel.is_free()).count();
        let mut terms = Vec::new();
        for (position, s) in layout.slots.iter().enumerate() {
            let role = match (s.slot, &s.encoding) {
                (Slot::Resolution | Slot::Channels(_), _)
                | (Slot::ExpansionFirst(_) | Slot::ExpansionRest(_), SlotEncoding::MinMax { .. }) => {
                    Some(Role::Width)
                }
                (Slot::Depth(_), SlotEncoding::MinMax { .. }) => Some(Role::Depth),
                (Slot::Kernel(i), SlotEncoding::OneHot { value, .. }) => {
                    let largest = space.stages[i].kernel.values().into_iter().max();
                    (Some(*value) == largest).then_some(Role::LargeKernel)
                }
                (Slot::Recipe(RecipeField::Lr), _) => Some(Role::Lr),
                (Slot::Recipe(RecipeField::Optimizer), SlotEncoding::OneHot { value: 1, .. }) => {
                    Some(Role::Sgd)
                }
                (Slot::Recipe(RecipeField::Ema), SlotEncoding::OneHot { value: 1, .. }) => {
                    Some(Role::Ema)
                }
                (
                    Slot::Recipe(
                        RecipeField::Dropout
                        | RecipeField::StochasticDepth
                        | RecipeField::Mixup
                        | RecipeField::WeightDecay,
                    ),
                    _,
                ) => Some(Role::Regularizer),
                _ => None,
            };
            if let Some(role) = role {
                terms.push(Term {
                    position,
                    role,
                    weight: slot_weight(&s.name),
                });
            }
        }
        SyntheticOracle {
            space: space.clone(),
            terms,
            stage_count: kernel_stages.max(1),
            full_budget: DEFAULT_FULL_BUDGET,
        }
    }

    pub fn with_full_budget(mut self, epochs: u32) -> Self {
        self.full_budget = epochs.max(1);
        self
    }

    pub fn space(&self) -> &SearchSpaceDef {
        &self.space
    }

    fn weighted_mean(&self, x: &[f64], role: Role) -> Option<f64> {
        let (num, den) = self
            .terms
            .iter()
            .filter(|t| t.role == role)
            .fold((0.0, 0.0), |(n, d), t| {
                (n + t.weight * x[t.position], d + t.weight)
            });
        (den > 0.0).then(|| num / den)
    }

    fn flag(&self, x: &[f64], role: Role) -> f64 {
        self.terms
            .iter()
            .find(|t| t.role == role)
            .map_or(0.0, |t| x[t.position])
    }

    /// Normalized learning rate, 0.5 when the space fixes it.
    fn lr(&self, x: &[f64]) -> f64 {
        self.weighted_mean(x, Role::Lr).unwrap_or(0.5)
    }

    /// Asymptotic accuracy of an encoded candidate.
    pub fn asymptote(&self, v: &EncodedVector) -> f64 {
        let x = &v.values;
        let width = self.weighted_mean(x, Role::Width);
        let depth = self.weighted_mean(x, Role::Depth);
        let (width, depth) = match (width, depth) {
            (Some(w), Some(d)) => (w, d),
            (Some(w), None) => (w, w),
            (None, Some(d)) => (d, d),
            (None, None) => (0.5, 0.5),
        };
        let c = 0.5 * (width + depth);
        let capacity = 0.25 * (1.0 - (-2.5 * c).exp()) / (1.0 - (-2.5f64).exp());
        let large_kernels: f64 = self
            .terms
            .iter()
            .filter(|t| t.role == Role::LargeKernel)
            .map(|t| x[t.position])
            .sum();
        let kernel = 0.004 * large_kernels / self.stage_count as f64;

        let sgd = self.flag(x, Role::Sgd);
        let ema = self.flag(x, Role::Ema);
        let lr = self.lr(x);
        let lr_opt = 0.6 - 0.25 * sgd;
        let reg = self.weighted_mean(x, Role::Regularizer).unwrap_or(0.5);
        let reg_opt = 0.15 + 0.6 * c;

        let a = 0.55 + capacity + kernel + 0.012 * ema + 0.005 * (1.0 - sgd)
            - LR_CURVATURE * (lr - lr_opt).powi(2)
            - 0.05 * (reg - reg_opt).powi(2)
            + INTERACTION * (depth - width) * (2.0 * lr - 1.0);
        a.clamp(0.0, 1.0)
    }

    /// Epochs to reach ~63% of the asymptote; shorter for larger learning rates.
    pub fn time_constant(&self, v: &EncodedVector) -> f64 {
        2.0 + 6.0 * (1.0 - self.lr(&v.values))
    }

    /// Noise-free accuracy after `epochs`.
    pub fn expected_accuracy(&self, v: &EncodedVector, epochs: u32) -> f64 {
        let a = self.asymptote(v);
        round9(a * (1.0 - (-f64::from(epochs) / self.time_constant(v)).exp()))
    }

    /// Noise-free accuracy at the full budget, the quantity searches try to
    /// maximize.
    pub fn true_accuracy(&self, c: &Candidate) -> Result<f64> {
        Ok(self.expected_accuracy(&self.space.encode(c)?, self.full_budget))
    }

    pub fn true_accuracy_genome(&self, g: &Genome) -> f64 {
        self.expected_accuracy(&self.space.encode_genome(g), self.full_budget)
    }

    fn candidate_key(c: &Candidate) -> u64 {
        let json = serde_json::to_vec(c).expect("candidate serializes");
        let h = Sha256::digest(&json);
        u64::from_le_bytes(h[..8].try_into().unwrap())
    }

    /// Noisy per-epoch curve for epochs `1..=epoch_budget`.
    pub fn curve(&self, c: &Candidate, epoch_budget: u32, seed: u64) -> Result<Vec<f64>> {
        let v = self.space.encode(c)?;
        let a = self.asymptote(&v);
        let tau = self.time_constant(&v);
        let key = Self::candidate_key(c) ^ splitmix(seed);
        Ok((1..=epoch_budget)
            .map(|e| {
                let h = splitmix(key ^ splitmix(u64::from(e)));
                let u = (h >> 11) as f64 / (1u64 << 53) as f64;
                let noise = NOISE_AMPLITUDE * (2.0 * u - 1.0);
                let clean = a * (1.0 - (-f64::from(e) / tau).exp());
                round9((clean + noise).clamp(0.0, 1.0))
            })
            .collect())
    }

    pub fn evaluate_one(&self, r: &EvalRequest) -> EvalResult {
        if r.epoch_budget == 0 {
            return EvalResult::failed(r.id, Vec::new(), "epoch budget must be at least 1");
        }
        match self.curve(&r.candidate, r.epoch_budget, r.seed) {
            Ok(curve) => EvalResult {
                id: r.id,
                curve,
                status: EvalStatus::Ok,
            },
            Err(e) => EvalResult::failed(r.id, Vec::new(), e.to_string()),
        }
    }

    /// The designated reference architectures and recipes. Width genes sit
    /// at their extremes, everything else at index 0 (architecture) or the
    /// middle of its grid (recipe).
    pub fn reference_pairs(&self) -> ReferencePairs {
        let genes = self.space.genes();
        let build = |wide: bool, lr_high: bool| {
            let idx = genes
                .iter()
                .map(|g| match g.slot() {
                    Slot::Resolution
                    | Slot::Channels(_)
                    | Slot::ExpansionFirst(_)
                    | Slot::ExpansionRest(_) => {
                        if wide {
                            g.len() - 1
                        } else {
                            0
                        }
                    }
                    Slot::Depth(_) => {
                        if wide {
                            0
                        } else {
                            g.len() - 1
                        }
                    }
                    Slot::Kernel(_) => 0,
                    Slot::Recipe(RecipeField::Lr) => {
                        if lr_high {
                            g.len() - 1
                        } else {
                            0
                        }
                    }
                    Slot::Recipe(RecipeField::Optimizer | RecipeField::Ema) => 0,
                    Slot::Recipe(_) => g.len() / 2,
                })
                .collect();
            self.space.decode(&Genome(idx))
        };
        ReferencePairs {
            a1: build(true, false),
            a2: build(false, false),
            r1: build(true, false),
            r2: build(true, true),
        }
    }

    /// `a` (an architecture donor) combined with the recipe of `r`.
    pub fn combine(a: &Candidate, r: &Candidate) -> Candidate {
        Candidate {
            arch: a.arch.clone(),
            recipe: r.recipe.clone(),
        }
    }
}

impl Evaluator for SyntheticOracle {
    fn evaluate(&self, requests: &[EvalRequest]) -> Result<Vec<EvalResult>> {
        Ok(requests.iter().map(|r| self.evaluate_one(r)).collect())
    }
}
