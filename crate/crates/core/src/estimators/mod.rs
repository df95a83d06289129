//! Discrete associated kernel estimators of a count pmf.
//!
//! All four estimators return a [`PmfEstimate`]. The CMP smoother centres one
//! kernel on each observation, so kernels are solved once per distinct value
//! and weighted by multiplicity.

mod estimate;
mod sample;

pub use estimate::{EstimatorKind, PmfEstimate, SupportRule, AUTO_MIN_MARGIN, AUTO_TAIL_EPS};
pub use sample::{CountSample, SampleSummary};

use serde::{Deserialize, Serialize};

use crate::cmp_dist::{ln_factorial, make_kernel, CmpKernel, SeriesConfig};
use crate::error::{Error, Result};

/// Range parameter used for the triangular kernel when none is given.
pub const DEFAULT_TRIANGULAR_A: u32 = 2;

/// Empirical frequencies.
pub fn fit_histogram(sample: &CountSample) -> PmfEstimate {
    let n = sample.n() as f64;
    let mut probs = vec![0.0; sample.max_value() as usize + 1];
    for &(v, m) in sample.unique() {
        probs[v as usize] = m as f64 / n;
    }
    PmfEstimate::from_parts(probs, 0.0, EstimatorKind::Histogram, None)
}

/// One solved CMP kernel per distinct observation, with its multiplicity.
pub fn cmp_kernels(sample: &CountSample, h: f64, cfg: &SeriesConfig) -> Result<Vec<(CmpKernel, usize)>> {
    sample
        .unique()
        .iter()
        .map(|&(v, m)| make_kernel(v as f64, h, cfg).map(|k| (k, m)))
        .collect()
}

/// CMP smoother: the average of kernels with mean `X_i` and dispersion `1/h`.
pub fn fit_cmp_dak(
    sample: &CountSample,
    h: f64,
    cfg: &SeriesConfig,
    support: SupportRule,
) -> Result<PmfEstimate> {
    if h.is_nan() || h < 0.0 || h.is_infinite() {
        return Err(Error::Domain(format!("bandwidth must be nonnegative and finite, got {h}")));
    }
    let kernels = cmp_kernels(sample, h, cfg)?;
    Ok(mix_kernels(sample, &kernels, h, support))
}

pub(crate) fn mix_kernels(
    sample: &CountSample,
    kernels: &[(CmpKernel, usize)],
    h: f64,
    support: SupportRule,
) -> PmfEstimate {
    let n = sample.n() as f64;
    let reach = kernels.iter().map(|(k, _)| k.truncation_point()).max().unwrap_or(0);
    let floor = sample.max_value() + AUTO_MIN_MARGIN;
    let last = match support {
        SupportRule::Auto => reach.max(floor),
        SupportRule::Fixed(m) => reach.max(m),
    };
    let mut mix = vec![0.0; last as usize + 1];
    for (k, m) in kernels {
        k.accumulate_pmf(*m as f64 / n, &mut mix);
    }

    // suffix[x] = mass strictly above x
    let mut suffix = vec![0.0; mix.len()];
    let mut acc = 0.0;
    for x in (0..mix.len()).rev() {
        suffix[x] = acc;
        acc += mix[x];
    }
    let x_max = match support {
        SupportRule::Fixed(m) => m,
        SupportRule::Auto => (floor..=last)
            .find(|&x| suffix[x as usize] <= AUTO_TAIL_EPS)
            .unwrap_or(last),
    };
    let tail = suffix[x_max as usize];
    mix.truncate(x_max as usize + 1);
    PmfEstimate::from_parts(mix, tail, EstimatorKind::Cmp, Some(h))
}

/// Symmetric triangular kernel with range `a` and bandwidth `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriangularKernelSpec {
    a: u32,
    h: f64,
}

impl TriangularKernelSpec {
    pub fn new(a: u32, h: f64) -> Result<Self> {
        if a < 1 {
            return Err(Error::Domain("triangular range parameter a must be at least 1".into()));
        }
        if h.is_nan() || h < 0.0 || h.is_infinite() {
            return Err(Error::Domain(format!("triangular bandwidth must be nonnegative, got {h}")));
        }
        Ok(TriangularKernelSpec { a, h })
    }

    pub fn a(&self) -> u32 {
        self.a
    }

    pub fn h(&self) -> f64 {
        self.h
    }
}

/// Normalized weights on `{x-a, ..., x+a}`, proportional to
/// `(a+1)^h - |y-x|^h` with `0^h = 0`. The weights do not depend on `x`;
/// entries that fall below zero are still part of the kernel.
pub fn triangular_kernel_weights(spec: &TriangularKernelSpec, _center: u64) -> Vec<f64> {
    let a = spec.a as i64;
    let top = (a + 1) as f64;
    // Divided through by (a+1)^h so large h cannot overflow.
    let raw: Vec<f64> = (-a..=a)
        .map(|k| {
            if k == 0 {
                1.0
            } else {
                1.0 - (k.unsigned_abs() as f64 / top).powf(spec.h)
            }
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Triangular smoother on `[0, max_value + a]`; mass the kernels place on
/// negative integers is dropped and the estimate renormalized.
pub fn fit_triangular_dak(sample: &CountSample, spec: &TriangularKernelSpec) -> PmfEstimate {
    let a = spec.a as i64;
    let weights = triangular_kernel_weights(spec, 0);
    let len = sample.max_value() as usize + spec.a as usize + 1;
    let mut probs = vec![0.0; len];
    for &(v, m) in sample.unique() {
        for (k, w) in (-a..=a).zip(&weights) {
            let y = v as i64 + k;
            if y >= 0 {
                probs[y as usize] += m as f64 * w;
            }
        }
    }
    let kept: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= kept;
    }
    PmfEstimate::from_parts(probs, 0.0, EstimatorKind::Triangular, Some(spec.h))
}

/// `ln` of the Binomial(trials, p) pmf at `y`.
fn binomial_ln_pmf(trials: u64, p: f64, y: u64) -> f64 {
    if y > trials {
        return f64::NEG_INFINITY;
    }
    let ln_choose = ln_factorial(trials) - ln_factorial(y) - ln_factorial(trials - y);
    let succ = if y == 0 { 0.0 } else { y as f64 * p.ln() };
    let fail = if y == trials { 0.0 } else { (trials - y) as f64 * (1.0 - p).ln() };
    ln_choose + succ + fail
}

/// Binomial smoother: kernels Binomial(X_i + 1, (X_i + h) / (X_i + 1)), each
/// with mean `X_i + h`.
pub fn fit_binomial_dak(sample: &CountSample, h: f64) -> Result<PmfEstimate> {
    if !(0.0..=1.0).contains(&h) {
        return Err(Error::Domain(format!("binomial bandwidth must lie in [0, 1], got {h}")));
    }
    let n = sample.n() as f64;
    let mut probs = vec![0.0; sample.max_value() as usize + 2];
    for &(v, m) in sample.unique() {
        let trials = v + 1;
        let p = (v as f64 + h) / trials as f64;
        let w = m as f64 / n;
        for y in 0..=trials {
            probs[y as usize] += w * binomial_ln_pmf(trials, p, y).exp();
        }
    }
    Ok(PmfEstimate::from_parts(probs, 0.0, EstimatorKind::Binomial, Some(h)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(v: &[u64]) -> CountSample {
        CountSample::new(v.to_vec()).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len(), "{a:?} vs {b:?}");
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn histogram_frequencies() {
        close(fit_histogram(&sample(&[0, 0, 1])).probs(), &[2.0 / 3.0, 1.0 / 3.0], 1e-15);
        let single = fit_histogram(&sample(&[5]));
        assert_eq!(single.probs(), &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(single.tail_mass(), 0.0);
        close(
            fit_histogram(&sample(&[0, 1, 1, 2, 2, 2])).probs(),
            &[1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0],
            1e-15,
        );
    }

    #[test]
    fn cmp_hand_example() {
        let est = fit_cmp_dak(&sample(&[0, 2]), 1.0, &SeriesConfig::default(), SupportRule::Auto).unwrap();
        let expect = 0.5 * (1.0 + (-2.0f64).exp());
        assert!((est.prob(0) - expect).abs() < 1e-12);
        assert!(est.x_max() >= 12);
        assert!(est.tail_mass() <= AUTO_TAIL_EPS);
    }

    #[test]
    fn cmp_constant_sample_keeps_mean() {
        for h in [0.05, 0.5, 3.0] {
            let est = fit_cmp_dak(&sample(&[4; 7]), h, &SeriesConfig::default(), SupportRule::Auto).unwrap();
            assert!((est.mean() - 4.0).abs() < 1e-8);
        }
    }

    #[test]
    fn cmp_fixed_support() {
        let s = sample(&[3, 8]);
        let est = fit_cmp_dak(&s, 2.0, &SeriesConfig::default(), SupportRule::Fixed(5)).unwrap();
        assert_eq!(est.x_max(), 5);
        assert!(est.tail_mass() > 0.1);
        assert!((est.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cmp_negative_bandwidth() {
        let err = fit_cmp_dak(&sample(&[1]), -1.0, &SeriesConfig::default(), SupportRule::Auto);
        assert!(matches!(err, Err(Error::Domain(_))));
    }

    #[test]
    fn cmp_floor_is_histogram() {
        let s = sample(&[0, 3, 3, 9]);
        let est = fit_cmp_dak(&s, 1e-5, &SeriesConfig::default(), SupportRule::Auto).unwrap();
        let hist = fit_histogram(&s);
        for x in 0..=est.x_max() {
            assert_eq!(est.prob(x), hist.prob(x));
        }
    }

    #[test]
    fn triangular_weights() {
        let w = triangular_kernel_weights(&TriangularKernelSpec::new(1, 1.0).unwrap(), 3);
        assert_eq!(w, vec![0.25, 0.5, 0.25]);
        let w = triangular_kernel_weights(&TriangularKernelSpec::new(2, 0.0).unwrap(), 7);
        assert_eq!(w, vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        let w = triangular_kernel_weights(&TriangularKernelSpec::new(2, 1.0).unwrap(), 5);
        close(&w, &[1.0 / 9.0, 2.0 / 9.0, 3.0 / 9.0, 2.0 / 9.0, 1.0 / 9.0], 1e-15);
        let wide = triangular_kernel_weights(&TriangularKernelSpec::new(2, 5000.0).unwrap(), 5);
        assert!(wide.iter().all(|w| w.is_finite()));
        assert!(TriangularKernelSpec::new(0, 1.0).is_err());
    }

    #[test]
    fn triangular_fits() {
        let spec = TriangularKernelSpec::new(1, 1.0).unwrap();
        let est = fit_triangular_dak(&sample(&[3]), &spec);
        close(&est.probs()[2..], &[0.25, 0.5, 0.25], 1e-15);
        assert_eq!(est.x_max(), 4);
        let boundary = fit_triangular_dak(&sample(&[0]), &spec);
        close(boundary.probs(), &[2.0 / 3.0, 1.0 / 3.0], 1e-15);
        let dirac = fit_triangular_dak(&sample(&[3]), &TriangularKernelSpec::new(1, 0.0).unwrap());
        assert_eq!(dirac.with_support(3).unwrap().probs(), fit_histogram(&sample(&[3])).probs());
    }

    #[test]
    fn binomial_fits() {
        let est = fit_binomial_dak(&sample(&[0]), 0.0).unwrap();
        assert_eq!(est.prob(0), 1.0);
        assert_eq!(est.prob(1), 0.0);
        let est = fit_binomial_dak(&sample(&[2]), 0.0).unwrap();
        close(est.probs(), &[1.0 / 27.0, 6.0 / 27.0, 12.0 / 27.0, 8.0 / 27.0], 1e-14);
        let s = sample(&[0, 1, 4, 4, 9]);
        for h in [0.0, 0.3, 1.0] {
            let est = fit_binomial_dak(&s, h).unwrap();
            assert!((est.mean() - (s.mean() + h)).abs() < 1e-10);
        }
        assert!(fit_binomial_dak(&s, 1.5).is_err());
        assert!(fit_binomial_dak(&s, -0.1).is_err());
    }
}
