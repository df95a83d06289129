//! Automated bandwidth selection for the CMP smoother.
//!
//! Two criteria are provided:
//!
//! - minimax Kullback-Leibler: the `h` minimizing the larger of
//!   `KL(f̂ ‖ Poisson(X̄))` and `KL(f̂ ‖ NB(X̄, r̂))`, with `r̂` from the method of
//!   moments (Poisson only when the sample is not overdispersed);
//! - leave-one-out predictive likelihood: the `h` maximizing
//!   `Σ_j log f̂^{(-j)}(X_j)`.
//!
//! Both share [`minimize_in_box`]: a geometric pre-scan of the search box
//! followed by golden-section refinement on `log h` around the best scan point.
//! Nothing is assumed about unimodality beyond the bracket around that point.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cmp_dist::{SeriesConfig, H_FLOOR};
use crate::estimators::{
    cmp_kernels, fit_binomial_dak, fit_cmp_dak, fit_triangular_dak, CountSample, PmfEstimate,
    SupportRule, TriangularKernelSpec,
};
use crate::error::{Error, Result};
use crate::pmf::{DiscretePmf, NegativeBinomial, Poisson};

/// Upper end of the default bandwidth search box (`ν = 0.05`).
pub const H_CEIL: f64 = 20.0;
/// Mass the KL sum may leave uncovered in the reference tail.
const KL_TAIL_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub h_floor: f64,
    pub h_ceil: f64,
    pub prescan_points: usize,
    /// Golden-section stops once the bracket is this narrow in `log h`.
    pub rel_width: f64,
    pub series: SeriesConfig,
    /// Evaluate the pre-scan on the rayon pool. Results do not depend on it.
    pub parallel: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            h_floor: H_FLOOR,
            h_ceil: H_CEIL,
            prescan_points: 25,
            rel_width: 1e-3,
            series: SeriesConfig::default(),
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthMethod {
    Kl,
    Cv,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NbFit {
    pub mu: f64,
    pub r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceFits {
    pub poisson_lambda: f64,
    pub nb: Option<NbFit>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub h: f64,
    #[serde(with = "crate::serde_float")]
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthResult {
    pub h: f64,
    pub method: BandwidthMethod,
    /// KL objective (minimized) or LOO log-likelihood (maximized); NaN for fixed.
    #[serde(with = "crate::serde_float")]
    pub objective_value: f64,
    pub trace: Vec<TracePoint>,
    pub reference_fits: Option<ReferenceFits>,
    /// Set when every evaluated LOO log-likelihood was `-∞`.
    #[serde(default)]
    pub degenerate: bool,
}

impl BandwidthResult {
    pub fn fixed(h: f64) -> Self {
        BandwidthResult {
            h,
            method: BandwidthMethod::Fixed,
            objective_value: f64::NAN,
            trace: Vec::new(),
            reference_fits: None,
            degenerate: false,
        }
    }
}

/// Poisson reference rate: the sample mean.
pub fn fit_reference_poisson(sample: &CountSample) -> f64 {
    sample.mean()
}

/// Method-of-moments negative binomial from a mean and variance; `None` unless
/// the variance exceeds the mean and the mean is positive.
pub fn nb_from_moments(mean: f64, variance: f64) -> Option<NbFit> {
    if mean > 0.0 && variance > mean {
        Some(NbFit { mu: mean, r: mean * mean / (variance - mean) })
    } else {
        None
    }
}

pub fn fit_reference_nb(sample: &CountSample) -> Option<NbFit> {
    nb_from_moments(sample.mean(), sample.variance())
}

/// `KL(p ‖ q)` in nats, summed over `0..=max(p.x_max, q's 1 - 1e-12 quantile)`.
/// Returns `+∞` where `p` has mass that `q` does not.
pub fn kl_divergence<Q: DiscretePmf + ?Sized>(p: &PmfEstimate, q: &Q) -> f64 {
    let cap = p.x_max().max(q.upper_support(KL_TAIL_EPS));
    let mut total = 0.0;
    for x in 0..=cap {
        let px = p.prob(x);
        if px > 0.0 {
            let lq = q.ln_pmf(x);
            if lq == f64::NEG_INFINITY {
                return f64::INFINITY;
            }
            total += px * (px.ln() - lq);
        }
    }
    total.max(0.0)
}

/// The fitted Poisson and (when available) negative binomial references.
#[derive(Debug, Clone, Copy)]
pub struct References {
    poisson: Poisson,
    nb: Option<NegativeBinomial>,
}

impl References {
    pub fn from_sample(sample: &CountSample) -> Result<Self> {
        let poisson = Poisson::new(fit_reference_poisson(sample))?;
        let nb = fit_reference_nb(sample)
            .map(|f| NegativeBinomial::new(f.mu, f.r))
            .transpose()?;
        Ok(References { poisson, nb })
    }

    pub fn poisson(&self) -> &Poisson {
        &self.poisson
    }

    pub fn nb(&self) -> Option<&NegativeBinomial> {
        self.nb.as_ref()
    }

    /// `max{KL(f̂ ‖ pois), KL(f̂ ‖ nb)}`, or the Poisson term alone.
    pub fn objective(&self, estimate: &PmfEstimate) -> f64 {
        let pois = kl_divergence(estimate, &self.poisson);
        match &self.nb {
            Some(nb) => pois.max(kl_divergence(estimate, nb)),
            None => pois,
        }
    }

    pub fn fits(&self) -> ReferenceFits {
        ReferenceFits {
            poisson_lambda: self.poisson.lambda(),
            nb: self.nb.map(|nb| NbFit { mu: nb.mu(), r: nb.r() }),
        }
    }
}

/// Minimax-KL objective of the CMP smoother at `h`.
pub fn kl_objective(sample: &CountSample, h: f64, series: &SeriesConfig) -> Result<f64> {
    let refs = References::from_sample(sample)?;
    let est = fit_cmp_dak(sample, h, series, SupportRule::Auto)?;
    Ok(refs.objective(&est))
}

/// Result of [`minimize_in_box`].
#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub h: f64,
    pub value: f64,
    /// Every evaluation, pre-scan first.
    pub trace: Vec<TracePoint>,
}

/// Orders objective values with NaN treated as `+∞`.
fn sort_key(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Minimizes `f` over `[lo, hi]` (`lo > 0`).
///
/// Scans `points` geometrically spaced bandwidths, then runs golden-section
/// search on `log h` between the neighbours of the best scan point until the
/// bracket is narrower than `rel_width`. The minimum over all evaluations is
/// returned, ties going to the smaller `h`, so the result is never worse than
/// any scan point.
pub fn minimize_in_box<F>(lo: f64, hi: f64, points: usize, rel_width: f64, parallel: bool, f: F) -> Result<SearchOutcome>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::Domain(format!("invalid search box [{lo}, {hi}]")));
    }
    let points = points.max(2);
    let (llo, lhi) = (lo.ln(), hi.ln());
    let grid: Vec<f64> = (0..points)
        .map(|i| {
            if i == points - 1 {
                hi
            } else if i == 0 {
                lo
            } else {
                (llo + (lhi - llo) * i as f64 / (points - 1) as f64).exp()
            }
        })
        .collect();
    let values: Vec<f64> = if parallel {
        grid.par_iter().map(|&h| f(h)).collect::<Result<_>>()?
    } else {
        grid.iter().map(|&h| f(h)).collect::<Result<_>>()?
    };
    let mut trace: Vec<TracePoint> = grid
        .iter()
        .zip(&values)
        .map(|(&h, &objective)| TracePoint { h, objective })
        .collect();

    let mut best = 0;
    for i in 1..points {
        if sort_key(values[i]) < sort_key(values[best]) {
            best = i;
        }
    }

    let mut a = grid[best.saturating_sub(1)].ln();
    let mut b = grid[(best + 1).min(points - 1)].ln();
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let eval = |lh: f64, trace: &mut Vec<TracePoint>| -> Result<f64> {
        let h = lh.exp().clamp(lo, hi);
        let v = f(h)?;
        trace.push(TracePoint { h, objective: v });
        Ok(sort_key(v))
    };
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = eval(c, &mut trace)?;
    let mut fd = eval(d, &mut trace)?;
    while b - a > rel_width {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = eval(c, &mut trace)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = eval(d, &mut trace)?;
        }
    }

    let pick = trace
        .iter()
        .min_by(|p, q| {
            sort_key(p.objective)
                .total_cmp(&sort_key(q.objective))
                .then(p.h.total_cmp(&q.h))
        })
        .copied()
        .expect("trace is non-empty");
    Ok(SearchOutcome { h: pick.h, value: pick.objective, trace })
}

fn check_search(cfg: &SearchConfig) -> Result<()> {
    cfg.series.validate()?;
    if cfg.prescan_points < 2 {
        return Err(Error::Domain("pre-scan needs at least two points".into()));
    }
    if cfg.rel_width.is_nan() || cfg.rel_width <= 0.0 {
        return Err(Error::Domain("refinement width must be positive".into()));
    }
    Ok(())
}

/// Minimax-KL bandwidth over `[lo, hi]` for an arbitrary estimator family.
pub fn select_h_kl_with<F>(sample: &CountSample, lo: f64, hi: f64, cfg: &SearchConfig, fit: F) -> Result<BandwidthResult>
where
    F: Fn(f64) -> Result<PmfEstimate> + Sync,
{
    check_search(cfg)?;
    let refs = References::from_sample(sample)?;
    let out = minimize_in_box(lo, hi, cfg.prescan_points, cfg.rel_width, cfg.parallel, |h| {
        fit(h).map(|est| refs.objective(&est))
    })?;
    Ok(BandwidthResult {
        h: out.h,
        method: BandwidthMethod::Kl,
        objective_value: out.value,
        trace: out.trace,
        reference_fits: Some(refs.fits()),
        degenerate: false,
    })
}

/// Minimax-KL bandwidth for the CMP smoother over `[h_floor, h_ceil]`.
pub fn select_h_kl(sample: &CountSample, cfg: &SearchConfig) -> Result<BandwidthResult> {
    let series = cfg.series;
    select_h_kl_with(sample, cfg.h_floor, cfg.h_ceil, cfg, |h| {
        fit_cmp_dak(sample, h, &series, SupportRule::Auto)
    })
}

/// Minimax-KL bandwidth for the triangular baseline over `[h_floor, h_ceil]`.
pub fn select_triangular_h_kl(sample: &CountSample, a: u32, cfg: &SearchConfig) -> Result<BandwidthResult> {
    TriangularKernelSpec::new(a, 0.0)?;
    select_h_kl_with(sample, cfg.h_floor, cfg.h_ceil, cfg, |h| {
        Ok(fit_triangular_dak(sample, &TriangularKernelSpec::new(a, h)?))
    })
}

/// Minimax-KL bandwidth for the binomial baseline over `[h_floor, 1]`.
pub fn select_binomial_h_kl(sample: &CountSample, cfg: &SearchConfig) -> Result<BandwidthResult> {
    select_h_kl_with(sample, cfg.h_floor, 1.0, cfg, |h| fit_binomial_dak(sample, h))
}

fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// `Σ_j log f̂^{(-j)}(X_j)` at bandwidth `h`.
///
/// With observations grouped by value, the held-out estimate at `v` is
/// `(Σ_u m_u C(v; u) - C(v; v)) / (n - 1)`, i.e. `(n f̂(v) - C(v; v)) / (n - 1)`.
/// It is evaluated as a log-sum-exp over the kernels with the self term's
/// multiplicity reduced by one, which avoids the cancellation in the
/// subtracted form when the self kernel dominates.
pub fn loo_log_likelihood(sample: &CountSample, h: f64, series: &SeriesConfig) -> Result<f64> {
    let n = sample.n();
    if n < 2 {
        return Err(Error::InsufficientData(
            "leave-one-out cross-validation needs at least two observations".into(),
        ));
    }
    let kernels = cmp_kernels(sample, h, series)?;
    let ln_rest = ((n - 1) as f64).ln();
    let mut total = 0.0;
    for (j, &(v, mv)) in sample.unique().iter().enumerate() {
        let terms = kernels.iter().enumerate().filter_map(|(i, (k, m))| {
            let count = if i == j { m - 1 } else { *m };
            (count > 0).then(|| k.log_pmf(v) + (count as f64).ln())
        });
        total += mv as f64 * (log_sum_exp(terms) - ln_rest);
    }
    Ok(total)
}

/// Leave-one-out likelihood bandwidth over `[h_floor, h_ceil]`.
///
/// When the held-out likelihood is zero at every evaluated `h` (for instance
/// a single positive count among zeros, whose point-mass kernels can never
/// predict it) the smallest `h` is returned with `degenerate` set.
pub fn select_h_cv(sample: &CountSample, cfg: &SearchConfig) -> Result<BandwidthResult> {
    check_search(cfg)?;
    if sample.n() < 2 {
        return Err(Error::InsufficientData(
            "leave-one-out cross-validation needs at least two observations".into(),
        ));
    }
    let series = cfg.series;
    let out = minimize_in_box(cfg.h_floor, cfg.h_ceil, cfg.prescan_points, cfg.rel_width, cfg.parallel, |h| {
        loo_log_likelihood(sample, h, &series).map(|l| -l)
    })?;
    let trace: Vec<TracePoint> = out
        .trace
        .iter()
        .map(|p| TracePoint { h: p.h, objective: -p.objective })
        .collect();
    let degenerate = trace.iter().all(|p| p.objective == f64::NEG_INFINITY);
    let refs = References::from_sample(sample)?;
    Ok(BandwidthResult {
        h: out.h,
        method: BandwidthMethod::Cv,
        objective_value: -out.value,
        trace,
        reference_fits: Some(refs.fits()),
        degenerate,
    })
}
