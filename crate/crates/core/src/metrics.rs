//! Accuracy metrics for estimated pmfs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::PmfEstimate;
use crate::pmf::DiscretePmf;

/// Both pmfs are summed until less than this much mass remains uncovered.
const SUPPORT_EPS: f64 = 1e-12;

/// `Σ_x (f̂(x) - f(x))²` over `0..=max(x_max, truth's 1 - 1e-12 quantile)`.
pub fn ise<T: DiscretePmf + ?Sized>(estimate: &PmfEstimate, truth: &T) -> f64 {
    let cap = estimate.x_max().max(truth.upper_support(SUPPORT_EPS));
    ise_to(estimate, truth, cap)
}

/// ISE with an explicit summation cap; the estimate is zero beyond `x_max`.
pub fn ise_to<T: DiscretePmf + ?Sized>(estimate: &PmfEstimate, truth: &T, cap: u64) -> f64 {
    (0..=cap)
        .map(|x| {
            let d = estimate.prob(x) - truth.pmf(x);
            d * d
        })
        .sum()
}

/// `P̂(X > threshold)`, including the residual mass beyond `x_max`.
pub fn tail_probability(estimate: &PmfEstimate, threshold: u64) -> f64 {
    estimate.range_prob(threshold.saturating_add(1), None)
}

/// The upper tail `X > threshold` where `threshold` is the `level` quantile of a true pmf.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailQuery {
    pub level: f64,
    pub threshold: u64,
}

impl TailQuery {
    /// Threshold is the smallest `x` with `F(x) >= level`.
    pub fn from_truth<T: DiscretePmf + ?Sized>(truth: &T, level: f64) -> Result<Self> {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::Domain(format!("tail level must lie in (0, 1), got {level}")));
        }
        Ok(TailQuery { level, threshold: truth.quantile(level) })
    }
}

/// `|log10(p̂ / p)|`, or divergent when the estimate is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelativeErrorOutcome {
    Finite(f64),
    Divergent,
}

impl RelativeErrorOutcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            RelativeErrorOutcome::Finite(v) => Some(*v),
            RelativeErrorOutcome::Divergent => None,
        }
    }

    pub fn is_divergent(&self) -> bool {
        matches!(self, RelativeErrorOutcome::Divergent)
    }
}

pub fn tail_relative_error(p_hat: f64, p_true: f64) -> Result<RelativeErrorOutcome> {
    if !(p_true > 0.0 && p_true <= 1.0) {
        return Err(Error::Domain(format!("true tail probability must lie in (0, 1], got {p_true}")));
    }
    if !(0.0..=1.0).contains(&p_hat) {
        return Err(Error::Domain(format!("estimated tail probability must lie in [0, 1], got {p_hat}")));
    }
    if p_hat == 0.0 {
        return Ok(RelativeErrorOutcome::Divergent);
    }
    // Difference of logs keeps decade ratios such as 0.1 / 0.01 exact.
    Ok(RelativeErrorOutcome::Finite((p_hat.log10() - p_true.log10()).abs()))
}
