use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::spearman;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    /// 1-based epoch budget to use for later evaluations.
    pub epoch: u32,
    /// False when no epoch before the last reached the threshold; the full
    /// length is used then.
    pub reached: bool,
    /// Epochs skipped because every curve had the same accuracy there.
    pub degenerate_epochs: Vec<u32>,
    /// Rank correlation with the final accuracies, per epoch (`None` when
    /// degenerate).
    pub correlations: Vec<Option<f64>>,
}

/// Smallest epoch whose accuracy ranking correlates with the final ranking
/// at least `threshold` (Spearman). The final epoch matches itself trivially,
/// so it only serves as the fallback.
pub fn determine_early_stop(curves: &[Vec<f64>], threshold: f64) -> Result<EarlyStop> {
    if curves.len() < 2 {
        return Err(Error::InvalidArgument("need at least two curves".into()));
    }
    let len = curves[0].len();
    if len == 0 || curves.iter().any(|c| c.len() != len) {
        return Err(Error::InvalidArgument(
            "curves must be non-empty and of equal length".into(),
        ));
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold {threshold} outside (0, 1]"
        )));
    }
    let finals: Vec<f64> = curves.iter().map(|c| c[len - 1]).collect();
    let mut out = EarlyStop {
        epoch: len as u32,
        reached: false,
        degenerate_epochs: Vec::new(),
        correlations: Vec::new(),
    };
    for e in 0..len {
        let at: Vec<f64> = curves.iter().map(|c| c[e]).collect();
        match spearman(&at, &finals) {
            Ok(rho) => {
                out.correlations.push(Some(rho));
                if rho >= threshold && !out.reached && e + 1 < len {
                    out.epoch = e as u32 + 1;
                    out.reached = true;
                }
            }
            Err(Error::UndefinedCorrelation(_)) => {
                out.degenerate_epochs.push(e as u32 + 1);
                out.correlations.push(None);
            }
            Err(other) => return Err(other),
        }
    }
    if !out.reached {
        log::warn!(
            "early-stop threshold {threshold} never reached; using the full budget of {len} epochs"
        );
    }
    Ok(out)
}
