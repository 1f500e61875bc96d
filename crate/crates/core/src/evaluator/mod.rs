//! Evaluation interface: turns candidates into per-epoch accuracy curves.

mod plugin;
pub mod protocol;
mod synthetic;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::space::Candidate;

pub use plugin::{PluginConfig, PluginEvaluator, PluginMode};
pub use synthetic::{ReferencePairs, SyntheticOracle, DEFAULT_FULL_BUDGET, NOISE_AMPLITUDE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRequest {
    pub id: u64,
    pub candidate: Candidate,
    pub epoch_budget: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum EvalStatus {
    Ok,
    Failed { reason: String },
}

/// Outcome of one request. Failed results keep whatever epochs were
/// reported before the failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub id: u64,
    #[serde(default)]
    pub curve: Vec<f64>,
    #[serde(flatten)]
    pub status: EvalStatus,
}

impl EvalResult {
    pub fn is_ok(&self) -> bool {
        self.status == EvalStatus::Ok
    }

    /// Last curve entry of a successful result.
    pub fn final_accuracy(&self) -> Option<f64> {
        if self.is_ok() {
            self.curve.last().copied()
        } else {
            None
        }
    }

    pub fn failed(id: u64, curve: Vec<f64>, reason: impl Into<String>) -> Self {
        EvalResult {
            id,
            curve,
            status: EvalStatus::Failed {
                reason: reason.into(),
            },
        }
    }
}

/// Anything that can train (or pretend to train) a batch of candidates.
///
/// Results come back in request order regardless of completion order.
pub trait Evaluator: Sync {
    fn evaluate(&self, requests: &[EvalRequest]) -> Result<Vec<EvalResult>>;
}
