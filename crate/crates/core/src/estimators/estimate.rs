use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pmf::DiscretePmf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Histogram,
    Cmp,
    Triangular,
    Binomial,
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EstimatorKind::Histogram => "histogram",
            EstimatorKind::Cmp => "cmp",
            EstimatorKind::Triangular => "triangular",
            EstimatorKind::Binomial => "binomial",
        };
        f.write_str(s)
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "histogram" => Ok(EstimatorKind::Histogram),
            "cmp" => Ok(EstimatorKind::Cmp),
            "triangular" => Ok(EstimatorKind::Triangular),
            "binomial" => Ok(EstimatorKind::Binomial),
            other => Err(Error::Parse(format!(
                "unknown kernel `{other}` (expected cmp, triangular, binomial or histogram)"
            ))),
        }
    }
}

/// How far the support of a smoothed estimate extends.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub enum SupportRule {
    /// Smallest `x_max >= max_value + 10` leaving at most [`AUTO_TAIL_EPS`] beyond it.
    #[default]
    Auto,
    Fixed(u64),
}

/// Residual mass allowed beyond the automatic support.
pub const AUTO_TAIL_EPS: f64 = 1e-14;
/// The automatic support always reaches this far past the largest observation.
pub const AUTO_MIN_MARGIN: u64 = 10;

impl FromStr for SupportRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(SupportRule::Auto);
        }
        s.parse::<u64>()
            .map(SupportRule::Fixed)
            .map_err(|_| Error::Parse(format!("support must be `auto` or a nonnegative integer, got `{s}`")))
    }
}

/// An estimated pmf on `[0, x_max]` plus the mass lying beyond `x_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmfEstimate {
    probs: Vec<f64>,
    x_max: u64,
    tail_mass: f64,
    estimator: EstimatorKind,
    bandwidth: Option<f64>,
}

impl PmfEstimate {
    pub(crate) fn from_parts(
        probs: Vec<f64>,
        tail_mass: f64,
        estimator: EstimatorKind,
        bandwidth: Option<f64>,
    ) -> Self {
        debug_assert!(!probs.is_empty());
        PmfEstimate {
            x_max: probs.len() as u64 - 1,
            probs,
            tail_mass,
            estimator,
            bandwidth,
        }
    }

    /// Checked constructor: probabilities nonnegative, total mass within 1e-10 of one.
    pub fn new(
        probs: Vec<f64>,
        tail_mass: f64,
        estimator: EstimatorKind,
        bandwidth: Option<f64>,
    ) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Domain("estimate needs at least one probability".into()));
        }
        if let Some((x, p)) = probs.iter().enumerate().find(|(_, p)| !(**p >= 0.0 && p.is_finite())) {
            return Err(Error::Domain(format!("probability at x={x} is invalid: {p}")));
        }
        if !(tail_mass >= 0.0 && tail_mass.is_finite()) {
            return Err(Error::Domain(format!("tail mass is invalid: {tail_mass}")));
        }
        let total = probs.iter().sum::<f64>() + tail_mass;
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::Domain(format!("estimate mass sums to {total}, not 1")));
        }
        Ok(Self::from_parts(probs, tail_mass, estimator, bandwidth))
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn x_max(&self) -> u64 {
        self.x_max
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    pub fn estimator(&self) -> EstimatorKind {
        self.estimator
    }

    pub fn bandwidth(&self) -> Option<f64> {
        self.bandwidth
    }

    /// Estimated probability at `x`; zero beyond `x_max`.
    pub fn prob(&self, x: u64) -> f64 {
        self.probs.get(x as usize).copied().unwrap_or(0.0)
    }

    /// `Σ probs + tail_mass`.
    pub fn total_mass(&self) -> f64 {
        self.probs.iter().sum::<f64>() + self.tail_mass
    }

    /// `Σ x · probs[x]`; the residual tail is not included.
    pub fn mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(x, p)| x as f64 * p).sum()
    }

    /// `P(a <= X <= b)`; the tail beyond `x_max` is included when `b` is unbounded.
    pub fn range_prob(&self, a: u64, b: Option<u64>) -> f64 {
        let start = (a as usize).min(self.probs.len());
        let within: f64 = match b {
            Some(b) => {
                if b < a {
                    return 0.0;
                }
                let end = (b as usize + 1).min(self.probs.len());
                self.probs[start..end.max(start)].iter().sum()
            }
            None => self.probs[start..].iter().sum::<f64>() + self.tail_mass,
        };
        within.clamp(0.0, 1.0)
    }

    /// Re-cuts the estimate at `x_max`. Mass above the new cut moves into the
    /// tail; extending pads with zeros and is only exact when the tail is empty.
    pub fn with_support(mut self, x_max: u64) -> Result<Self> {
        let len = x_max as usize + 1;
        if len < self.probs.len() {
            let moved: f64 = self.probs[len..].iter().rev().sum();
            self.tail_mass += moved;
            self.probs.truncate(len);
        } else if len > self.probs.len() {
            if self.tail_mass > 0.0 {
                return Err(Error::Domain(format!(
                    "cannot extend support of an estimate with residual tail {:.3e} without refitting",
                    self.tail_mass
                )));
            }
            self.probs.resize(len, 0.0);
        }
        self.x_max = x_max;
        Ok(self)
    }
}

impl DiscretePmf for PmfEstimate {
    fn ln_pmf(&self, x: u64) -> f64 {
        self.prob(x).ln()
    }

    fn pmf(&self, x: u64) -> f64 {
        self.prob(x)
    }

    fn upper_support(&self, _eps: f64) -> u64 {
        self.x_max
    }

    fn cdf(&self, x: u64) -> f64 {
        self.range_prob(0, Some(x))
    }

    fn survival(&self, x: u64) -> f64 {
        self.range_prob(x.saturating_add(1), None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn est() -> PmfEstimate {
        PmfEstimate::from_parts(vec![0.25, 0.5, 0.25], 0.0, EstimatorKind::Histogram, None)
    }

    #[test]
    fn queries() {
        let e = est();
        assert_eq!(e.x_max(), 2);
        assert_eq!(e.prob(5), 0.0);
        assert_eq!(e.range_prob(1, Some(2)), 0.75);
        assert_eq!(e.range_prob(2, Some(1)), 0.0);
        assert_eq!(e.range_prob(3, None), 0.0);
        assert_eq!(e.mean(), 1.0);
        assert_eq!(e.cdf(0) + e.survival(0), 1.0);
    }

    #[test]
    fn resupport() {
        let cut = est().with_support(1).unwrap();
        assert_eq!(cut.probs(), &[0.25, 0.5]);
        assert_eq!(cut.tail_mass(), 0.25);
        assert!(cut.clone().with_support(4).is_err());
        let wide = est().with_support(4).unwrap();
        assert_eq!(wide.probs().len(), 5);
        assert_eq!(wide.total_mass(), 1.0);
    }

    #[test]
    fn parse_kinds() {
        assert_eq!("cmp".parse::<EstimatorKind>().unwrap(), EstimatorKind::Cmp);
        assert!("gauss".parse::<EstimatorKind>().is_err());
        assert_eq!("auto".parse::<SupportRule>().unwrap(), SupportRule::Auto);
        assert_eq!("40".parse::<SupportRule>().unwrap(), SupportRule::Fixed(40));
        assert!("-3".parse::<SupportRule>().is_err());
    }
}
