//! Mean-parametrized Conway-Maxwell-Poisson distribution.
//!
//! The CMP pmf is `λ^x / (x!)^ν / Z(λ, ν)`. Kernels are indexed by their mean
//! `μ` and dispersion `ν`; the rate `λ(μ, ν)` is recovered by solving the mean
//! constraint numerically. Everything is carried in log space: for large `ν`
//! the rate itself overflows (`λ ≈ μ^ν`), so the kernel stores `log λ`.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bandwidths at or below this value produce an exact Dirac kernel.
pub const H_FLOOR: f64 = 1e-4;
/// Smallest dispersion a kernel is built with (largest effective bandwidth 50).
pub const NU_MIN: f64 = 0.02;
/// Largest dispersion a kernel is built with.
pub const NU_MAX: f64 = 1e4;

const LN_FACT_TABLE_LEN: usize = 8192;
const MAX_BRACKET_STEPS: usize = 200;
const MAX_SOLVE_ITERS: usize = 300;

fn ln_fact_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        (0..LN_FACT_TABLE_LEN as u64)
            .map(statrs::function::factorial::ln_factorial)
            .collect()
    })
}

/// `ln(x!)`, tabulated for small `x`.
#[inline]
pub fn ln_factorial(x: u64) -> f64 {
    let table = ln_fact_table();
    match table.get(x as usize) {
        Some(v) => *v,
        None => statrs::function::factorial::ln_factorial(x),
    }
}

/// Controls for series evaluation and the rate solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesConfig {
    /// Terms smaller than this fraction of the running sum (past the mode) end the series.
    pub rel_term_floor: f64,
    pub max_terms: usize,
    /// Mean-constraint tolerance, scaled by `max(1, μ)`.
    pub mean_tol: f64,
}

impl Default for SeriesConfig {
    fn default() -> Self {
        SeriesConfig {
            rel_term_floor: (-36.0f64).exp(),
            max_terms: 100_000,
            mean_tol: 1e-8,
        }
    }
}

impl SeriesConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_term_floor > 0.0 && self.rel_term_floor < 1.0) {
            return Err(Error::domain(format!(
                "rel_term_floor must lie in (0, 1), got {}",
                self.rel_term_floor
            )));
        }
        if self.max_terms < 100 {
            return Err(Error::domain(format!(
                "max_terms must be at least 100, got {}",
                self.max_terms
            )));
        }
        if !(self.mean_tol > 0.0 && self.mean_tol.is_finite()) {
            return Err(Error::domain(format!(
                "mean_tol must be positive, got {}",
                self.mean_tol
            )));
        }
        Ok(())
    }
}

/// Sums of one pass over the truncated series.
#[derive(Debug, Clone, Copy)]
struct SeriesSums {
    log_z: f64,
    mean: f64,
    variance: f64,
    truncation_point: u64,
}

#[inline]
fn log_term(x: u64, log_lambda: f64, nu: f64) -> f64 {
    x as f64 * log_lambda - nu * ln_factorial(x)
}

/// Location of the largest series term, `floor(λ^{1/ν})`, or `None` when it
/// lies beyond `max_terms`.
fn series_mode(log_lambda: f64, nu: f64, max_terms: usize) -> Option<u64> {
    let log_mode = log_lambda / nu;
    if log_mode < 0.0 {
        return Some(0);
    }
    if log_mode > (max_terms as f64).ln() {
        return None;
    }
    Some((log_mode.exp().floor() as u64).min(max_terms as u64))
}

/// One pass over the series: normalizer, mean and variance.
///
/// Terms are weighted relative to the largest term, so the accumulation is a
/// log-sum-exp with a known maximum. Moments are accumulated about the mode
/// to keep the variance free of cancellation when it is tiny.
fn sweep(log_lambda: f64, nu: f64, cfg: &SeriesConfig) -> Result<SeriesSums> {
    if log_lambda == f64::NEG_INFINITY {
        return Ok(SeriesSums {
            log_z: 0.0,
            mean: 0.0,
            variance: 0.0,
            truncation_point: 0,
        });
    }
    let overflow = || Error::SeriesConvergence {
        lambda: log_lambda.exp(),
        nu,
        max_terms: cfg.max_terms,
    };
    let mode = series_mode(log_lambda, nu, cfg.max_terms).ok_or_else(overflow)?;
    let reference = log_term(mode, log_lambda, nu);
    let log_floor = cfg.rel_term_floor.ln();

    let (mut s0, mut s1, mut s2) = (0.0f64, 0.0f64, 0.0f64);
    let mut x = 0u64;
    loop {
        let rel = log_term(x, log_lambda, nu) - reference;
        let w = rel.exp();
        let d = x as f64 - mode as f64;
        s0 += w;
        s1 += d * w;
        s2 += d * d * w;
        if x > mode && rel < s0.ln() + log_floor {
            break;
        }
        if x as usize >= cfg.max_terms {
            return Err(overflow());
        }
        x += 1;
    }
    let shift = s1 / s0;
    Ok(SeriesSums {
        log_z: reference + s0.ln(),
        mean: mode as f64 + shift,
        variance: (s2 / s0 - shift * shift).max(0.0),
        truncation_point: x,
    })
}

fn check_nu(nu: f64) -> Result<()> {
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::domain(format!("nu must be positive and finite, got {nu}")));
    }
    Ok(())
}

/// `log Z(λ, ν)` and the index of the last term included.
pub fn log_normalizing_constant(lambda: f64, nu: f64, cfg: &SeriesConfig) -> Result<(f64, u64)> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::domain(format!(
            "lambda must be nonnegative and finite, got {lambda}"
        )));
    }
    check_nu(nu)?;
    let s = sweep(lambda.ln(), nu, cfg)?;
    Ok((s.log_z, s.truncation_point))
}

/// Solves the mean constraint for `log λ`. Returns `-∞` for `μ = 0`.
///
/// The CMP mean is strictly increasing in `θ = log λ` with derivative equal to
/// the variance, so the solve brackets the root by geometric expansion from
/// the asymptotic guess and then runs Newton steps, falling back to bisection
/// whenever a step leaves the bracket.
pub fn solve_log_lambda(mu: f64, nu: f64, cfg: &SeriesConfig) -> Result<f64> {
    solve(mu, nu, cfg).map(|(theta, _)| theta)
}

/// `λ(μ, ν)`. Overflows to `+∞` when `ν log μ` exceeds the f64 range; use
/// [`solve_log_lambda`] in that regime.
pub fn solve_lambda(mu: f64, nu: f64, cfg: &SeriesConfig) -> Result<f64> {
    solve_log_lambda(mu, nu, cfg).map(f64::exp)
}

fn solve(mu: f64, nu: f64, cfg: &SeriesConfig) -> Result<(f64, SeriesSums)> {
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::domain(format!("mu must be nonnegative and finite, got {mu}")));
    }
    check_nu(nu)?;
    if mu == 0.0 {
        return Ok((f64::NEG_INFINITY, sweep(f64::NEG_INFINITY, nu, cfg)?));
    }

    let fail = |reason: String| Error::SolveConvergence { mu, nu, reason };
    let accept_tol = cfg.mean_tol * mu.max(1.0);
    // Newton converges quadratically, so polish well past the acceptance band.
    let target_tol = 1e-4 * accept_tol;

    // `None` marks a rate whose series does not fit in max_terms, either
    // because the mode lies beyond it or because the log-concave tail is still
    // significant there. Its mean then exceeds any mean that could be solved for.
    let eval = |theta: f64| -> Result<Option<SeriesSums>> {
        let too_wide = || {
            if mu >= cfg.max_terms as f64 / 2.0 {
                Err(fail(format!("mean exceeds series capacity of {} terms", cfg.max_terms)))
            } else {
                Ok(None)
            }
        };
        if series_mode(theta, nu, cfg.max_terms).is_none() {
            return too_wide();
        }
        match sweep(theta, nu, cfg) {
            Ok(s) => Ok(Some(s)),
            Err(Error::SeriesConvergence { .. }) => too_wide(),
            Err(e) => Err(e),
        }
    };
    let is_high = |s: &Option<SeriesSums>| s.is_none_or(|s| s.mean >= mu);

    let base = mu + (nu - 1.0) / (2.0 * nu);
    let floor = 1e-12f64.ln();
    let theta0 = if base > 0.0 { (nu * base.ln()).max(floor) } else { floor };

    let mut best: Option<(f64, SeriesSums)> = None;
    let consider = |theta: f64, s: &Option<SeriesSums>, best: &mut Option<(f64, SeriesSums)>| {
        if let Some(s) = s {
            let better = best.is_none_or(|(_, b)| (s.mean - mu).abs() < (b.mean - mu).abs());
            if better {
                *best = Some((theta, *s));
            }
        }
    };

    let s0 = eval(theta0)?;
    consider(theta0, &s0, &mut best);
    let (mut lo, mut hi);
    let mut step = 1.0;
    if is_high(&s0) {
        hi = theta0;
        lo = theta0 - step;
        let mut steps = 0;
        loop {
            let s = eval(lo)?;
            consider(lo, &s, &mut best);
            if !is_high(&s) {
                break;
            }
            hi = lo;
            step *= 2.0;
            lo -= step;
            steps += 1;
            if steps > MAX_BRACKET_STEPS {
                return Err(fail("bracket expansion below the root failed".into()));
            }
        }
    } else {
        lo = theta0;
        hi = theta0 + step;
        let mut steps = 0;
        loop {
            let s = eval(hi)?;
            consider(hi, &s, &mut best);
            if is_high(&s) {
                break;
            }
            lo = hi;
            step *= 2.0;
            hi += step;
            steps += 1;
            if steps > MAX_BRACKET_STEPS {
                return Err(fail("bracket expansion above the root failed".into()));
            }
        }
    }

    let mut theta = match best {
        Some((t, _)) if t > lo && t < hi => t,
        _ => 0.5 * (lo + hi),
    };
    for _ in 0..MAX_SOLVE_ITERS {
        let s = eval(theta)?;
        consider(theta, &s, &mut best);
        let Some(sums) = s else {
            hi = theta;
            theta = 0.5 * (lo + hi);
            continue;
        };
        let err = sums.mean - mu;
        if err.abs() <= target_tol {
            return Ok((theta, sums));
        }
        if err > 0.0 {
            hi = theta;
        } else {
            lo = theta;
        }
        let newton = theta - err / sums.variance;
        theta = if sums.variance > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 4.0 * f64::EPSILON * hi.abs().max(lo.abs()).max(1.0) {
            break;
        }
    }
    match best {
        Some((t, s)) if (s.mean - mu).abs() <= accept_tol => Ok((t, s)),
        Some((_, s)) => Err(fail(format!(
            "mean error {:.3e} exceeds tolerance {:.3e}",
            (s.mean - mu).abs(),
            accept_tol
        ))),
        None => Err(fail("no finite evaluation".into())),
    }
}

/// A solved mean-parametrized CMP kernel.
#[derive(Debug, Clone, Copy)]
pub struct CmpKernel {
    mu: f64,
    nu: f64,
    log_lambda: f64,
    log_z: f64,
    truncation_point: u64,
    /// Set when the kernel collapsed to a point mass at this value.
    dirac: Option<u64>,
}

impl CmpKernel {
    /// Solves the kernel with mean `mu` and dispersion `nu` directly.
    pub fn with_dispersion(mu: f64, nu: f64, cfg: &SeriesConfig) -> Result<Self> {
        let (log_lambda, sums) = solve(mu, nu, cfg)?;
        Ok(CmpKernel {
            mu,
            nu,
            log_lambda,
            log_z: sums.log_z,
            truncation_point: sums.truncation_point,
            dirac: None,
        })
    }

    /// Point mass at `at`.
    pub fn dirac(at: u64) -> Self {
        CmpKernel {
            mu: at as f64,
            nu: f64::INFINITY,
            log_lambda: f64::NAN,
            log_z: 0.0,
            truncation_point: at,
            dirac: Some(at),
        }
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Dispersion; infinite for Dirac kernels.
    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn log_lambda(&self) -> f64 {
        self.log_lambda
    }

    pub fn lambda(&self) -> f64 {
        self.log_lambda.exp()
    }

    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    pub fn truncation_point(&self) -> u64 {
        self.truncation_point
    }

    pub fn dirac_point(&self) -> Option<u64> {
        self.dirac
    }

    pub fn is_dirac(&self) -> bool {
        self.dirac.is_some()
    }

    pub fn log_pmf(&self, x: u64) -> f64 {
        if let Some(at) = self.dirac {
            return if x == at { 0.0 } else { f64::NEG_INFINITY };
        }
        if x == 0 {
            return -self.log_z;
        }
        if self.log_lambda == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        log_term(x, self.log_lambda, self.nu) - self.log_z
    }

    pub fn pmf(&self, x: u64) -> f64 {
        self.log_pmf(x).exp()
    }

    /// Adds `weight · pmf(x)` into `out[x]` over the truncated support.
    pub fn accumulate_pmf(&self, weight: f64, out: &mut [f64]) {
        if let Some(at) = self.dirac {
            if let Some(slot) = out.get_mut(at as usize) {
                *slot += weight;
            }
            return;
        }
        let end = (self.truncation_point as usize).min(out.len().saturating_sub(1));
        for (x, slot) in out.iter_mut().enumerate().take(end + 1) {
            *slot += weight * self.pmf(x as u64);
        }
    }
}

/// `log C(x; μ, ν)`.
pub fn cmp_log_pmf(kernel: &CmpKernel, x: u64) -> f64 {
    kernel.log_pmf(x)
}

/// Mean and variance by direct summation over the truncated support.
pub fn cmp_moments(kernel: &CmpKernel) -> (f64, f64) {
    if let Some(at) = kernel.dirac {
        return (at as f64, 0.0);
    }
    let (mut s0, mut s1) = (0.0, 0.0);
    for x in 0..=kernel.truncation_point {
        let p = kernel.pmf(x);
        s0 += p;
        s1 += x as f64 * p;
    }
    let mean = s1 / s0;
    let mut s2 = 0.0;
    for x in 0..=kernel.truncation_point {
        let d = x as f64 - mean;
        s2 += d * d * kernel.pmf(x);
    }
    (mean, s2 / s0)
}

/// Kernel with mean `mu` and bandwidth `h` (dispersion `1/h`, clamped to
/// `[NU_MIN, NU_MAX]`). Bandwidths at or below [`H_FLOOR`] give a Dirac kernel
/// at `mu` rounded half-to-even.
pub fn make_kernel(mu: f64, h: f64, cfg: &SeriesConfig) -> Result<CmpKernel> {
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::domain(format!("mu must be nonnegative and finite, got {mu}")));
    }
    if h.is_nan() || h < 0.0 || h.is_infinite() {
        return Err(Error::domain(format!("bandwidth must be nonnegative and finite, got {h}")));
    }
    if h <= H_FLOOR {
        return Ok(CmpKernel::dirac(mu.round_ties_even() as u64));
    }
    let nu = (1.0 / h).clamp(NU_MIN, NU_MAX);
    CmpKernel::with_dispersion(mu, nu, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SeriesConfig {
        SeriesConfig::default()
    }

    #[test]
    fn exponential_series() {
        let (lz, _) = log_normalizing_constant(1.0, 1.0, &cfg()).unwrap();
        assert!((lz - 1.0).abs() < 1e-14);
    }

    #[test]
    fn huge_nu_leaves_two_terms() {
        let (lz, t) = log_normalizing_constant(0.5, 1000.0, &cfg()).unwrap();
        assert!((lz - 1.5f64.ln()).abs() < 1e-12);
        assert!(t <= 2);
    }

    #[test]
    fn zero_rate() {
        let (lz, t) = log_normalizing_constant(0.0, 3.0, &cfg()).unwrap();
        assert_eq!((lz, t), (0.0, 0));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(log_normalizing_constant(-1.0, 1.0, &cfg()), Err(Error::Domain(_))));
        assert!(matches!(log_normalizing_constant(1.0, 0.0, &cfg()), Err(Error::Domain(_))));
        assert!(matches!(log_normalizing_constant(f64::NAN, 1.0, &cfg()), Err(Error::Domain(_))));
        assert!(matches!(solve_lambda(-0.1, 1.0, &cfg()), Err(Error::Domain(_))));
        assert!(matches!(solve_lambda(1.0, -1.0, &cfg()), Err(Error::Domain(_))));
        assert!(matches!(make_kernel(1.0, -0.5, &cfg()), Err(Error::Domain(_))));
    }

    #[test]
    fn max_terms_exceeded() {
        let small = SeriesConfig { max_terms: 100, ..cfg() };
        let err = log_normalizing_constant(1e6, 1.0, &small).unwrap_err();
        assert!(matches!(err, Error::SeriesConvergence { .. }));
        assert!(err.to_string().contains("nu=1"));
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        assert!(SeriesConfig { max_terms: 99, ..cfg() }.validate().is_err());
        assert!(SeriesConfig { mean_tol: 0.0, ..cfg() }.validate().is_err());
        assert!(SeriesConfig { rel_term_floor: 0.0, ..cfg() }.validate().is_err());
    }

    #[test]
    fn poisson_rate_equals_mean() {
        let l = solve_lambda(2.0, 1.0, &cfg()).unwrap();
        assert!((l - 2.0).abs() < 1e-10);
        assert_eq!(solve_lambda(0.0, 3.0, &cfg()).unwrap(), 0.0);
    }

    #[test]
    fn pmf_at_zero_is_poisson() {
        let k = make_kernel(1.0, 1.0, &cfg()).unwrap();
        assert!((k.pmf(0) - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn zero_mean_kernel_is_point_mass() {
        let k = make_kernel(0.0, 0.7, &cfg()).unwrap();
        assert_eq!(k.log_pmf(0), 0.0);
        assert_eq!(k.log_pmf(1), f64::NEG_INFINITY);
        assert_eq!(k.lambda(), 0.0);
    }

    #[test]
    fn dirac_short_circuit_rounds_half_even() {
        let k = make_kernel(5.0, 1e-9, &cfg()).unwrap();
        assert_eq!(k.dirac_point(), Some(5));
        assert_eq!(k.pmf(5), 1.0);
        assert_eq!(make_kernel(2.5, 0.0, &cfg()).unwrap().dirac_point(), Some(2));
        assert_eq!(make_kernel(3.5, 0.0, &cfg()).unwrap().dirac_point(), Some(4));
        assert_eq!(make_kernel(3.0, H_FLOOR, &cfg()).unwrap().dirac_point(), Some(3));
    }

    #[test]
    fn unit_bandwidth_is_poisson() {
        let k = make_kernel(5.0, 1.0, &cfg()).unwrap();
        assert_eq!(k.nu(), 1.0);
        let (m, v) = cmp_moments(&k);
        assert!((m - 5.0).abs() < 1e-10);
        assert!((v - 5.0).abs() < 1e-8);
    }

    #[test]
    fn large_nu_concentrates() {
        let k = CmpKernel::with_dispersion(3.0, 200.0, &cfg()).unwrap();
        assert!(k.pmf(3) >= 0.999);
        let (_, v) = cmp_moments(&k);
        assert!(v <= 1e-3);
    }

    #[test]
    fn dispersion_ordering() {
        let over = CmpKernel::with_dispersion(2.0, 0.5, &cfg()).unwrap();
        assert!(cmp_moments(&over).1 > 2.0);
        let under = make_kernel(5.0, 0.2, &cfg()).unwrap();
        assert!(cmp_moments(&under).1 < 5.0);
    }

    #[test]
    fn extreme_dispersion_solves() {
        for &(mu, nu) in &[(50.0, 0.02), (50.0, 1e4), (0.001, 0.05), (3.5, 1e4), (1e-9, 1.0)] {
            let k = CmpKernel::with_dispersion(mu, nu, &cfg()).unwrap();
            let (m, _) = cmp_moments(&k);
            assert!((m - mu).abs() <= 1e-8 * mu.max(1.0), "mu={mu} nu={nu} mean={m}");
        }
    }

    #[test]
    fn high_dispersion_grid_solves() {
        for &nu in &[0.02, 0.03, 0.05, 0.1] {
            for i in 1..=120 {
                let mu = i as f64 * 0.5;
                let k = CmpKernel::with_dispersion(mu, nu, &cfg())
                    .unwrap_or_else(|e| panic!("mu={mu} nu={nu}: {e}"));
                let (m, _) = cmp_moments(&k);
                assert!((m - mu).abs() <= 1e-8 * mu.max(1.0), "mu={mu} nu={nu} mean={m}");
            }
        }
    }

    #[test]
    fn accumulate_matches_pmf() {
        let k = make_kernel(4.0, 0.5, &cfg()).unwrap();
        let mut out = vec![0.0; 40];
        k.accumulate_pmf(0.5, &mut out);
        for (x, v) in out.iter().enumerate() {
            let expect = if x as u64 <= k.truncation_point() { 0.5 * k.pmf(x as u64) } else { 0.0 };
            assert_eq!(*v, expect);
        }
    }
}
