//! Reference count distributions and the common evaluation trait.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::cmp_dist::ln_factorial;
use crate::error::{Error, Result};

/// Anything that can report a pmf on the nonnegative integers.
pub trait DiscretePmf {
    fn ln_pmf(&self, x: u64) -> f64;

    fn pmf(&self, x: u64) -> f64 {
        self.ln_pmf(x).exp()
    }

    /// An `x` with `P(X > x) <= eps`, at or slightly above the smallest such `x`.
    fn upper_support(&self, eps: f64) -> u64;

    fn cdf(&self, x: u64) -> f64 {
        (0..=x).map(|k| self.pmf(k)).sum::<f64>().min(1.0)
    }

    /// `P(X > x)`.
    fn survival(&self, x: u64) -> f64 {
        (1.0 - self.cdf(x)).clamp(0.0, 1.0)
    }

    /// Smallest `x` with `CDF(x) >= level`.
    fn quantile(&self, level: f64) -> u64 {
        let cap = self.upper_support(1e-15);
        let mut acc = 0.0;
        let mut x = 0u64;
        loop {
            acc += self.pmf(x);
            if acc >= level || x >= cap {
                return x;
            }
            x += 1;
        }
    }
}

/// Walks the pmf upward from 0 and stops at the first `x >= mode` where the
/// remaining mass is at most `eps`. Beyond the mode the ratio of successive
/// terms is assumed to stay below `max(current ratio, ratio_limit)`, which
/// bounds the remainder by a geometric series.
pub(crate) fn walk_upper_support(pmf: impl Fn(u64) -> f64, mode: u64, ratio_limit: f64, eps: f64) -> u64 {
    let mut x = 0u64;
    let mut p = pmf(0);
    loop {
        let next = pmf(x + 1);
        if x >= mode {
            if next == 0.0 {
                return x;
            }
            let ratio = (next / p).max(ratio_limit);
            if ratio < 1.0 && next / (1.0 - ratio) <= eps {
                return x;
            }
        }
        if x > 100_000_000 {
            return x;
        }
        p = next;
        x += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Poisson {
    lambda: f64,
}

impl Poisson {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Domain(format!("poisson rate must be nonnegative, got {lambda}")));
        }
        Ok(Poisson { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

impl DiscretePmf for Poisson {
    fn ln_pmf(&self, x: u64) -> f64 {
        if self.lambda == 0.0 {
            return if x == 0 { 0.0 } else { f64::NEG_INFINITY };
        }
        x as f64 * self.lambda.ln() - self.lambda - ln_factorial(x)
    }

    fn upper_support(&self, eps: f64) -> u64 {
        walk_upper_support(|x| self.pmf(x), self.lambda.floor() as u64, 0.0, eps)
    }
}

/// Negative binomial with mean `mu` and variance `mu + mu^2 / r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NegativeBinomial {
    mu: f64,
    r: f64,
}

impl NegativeBinomial {
    pub fn new(mu: f64, r: f64) -> Result<Self> {
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(Error::Domain(format!("negative binomial mean must be nonnegative, got {mu}")));
        }
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::Domain(format!("negative binomial size must be positive, got {r}")));
        }
        Ok(NegativeBinomial { mu, r })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn r(&self) -> f64 {
        self.r
    }
}

impl DiscretePmf for NegativeBinomial {
    fn ln_pmf(&self, x: u64) -> f64 {
        if self.mu == 0.0 {
            return if x == 0 { 0.0 } else { f64::NEG_INFINITY };
        }
        let (mu, r) = (self.mu, self.r);
        let xf = x as f64;
        ln_gamma(xf + r) - ln_gamma(r) - ln_factorial(x)
            + r * (r / (r + mu)).ln()
            + xf * (mu / (r + mu)).ln()
    }

    fn upper_support(&self, eps: f64) -> u64 {
        walk_upper_support(|x| self.pmf(x), self.mu.floor() as u64, self.mu / (self.mu + self.r), eps)
    }
}
