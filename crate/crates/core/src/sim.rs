//! Target mixtures, seeded sampling and the Monte Carlo comparison harness.
//!
//! A study draws, for every sample size `n` and replication `r`, one sample
//! from the target using a seed derived from `(master_seed, n, r)`; every
//! estimator in the study is fitted to that same sample. Replications run on
//! the rayon pool and are aggregated in `(n, r)` order, so the summary does
//! not depend on the number of threads.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::bandwidth::{
    select_binomial_h_kl, select_h_cv, select_h_kl, select_triangular_h_kl, BandwidthResult,
    SearchConfig,
};
use crate::estimators::{
    fit_binomial_dak, fit_cmp_dak, fit_histogram, fit_triangular_dak, CountSample, PmfEstimate,
    SupportRule, TriangularKernelSpec, DEFAULT_TRIANGULAR_A,
};
use crate::error::{Error, Result};
use crate::metrics::{ise, tail_probability, tail_relative_error, RelativeErrorOutcome, TailQuery};
use crate::pmf::{DiscretePmf, NegativeBinomial, Poisson};

/// One mixture component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ComponentDist {
    Poisson(Poisson),
    NegativeBinomial(NegativeBinomial),
    PointMass(u64),
}

impl ComponentDist {
    fn ln_pmf(&self, x: u64) -> f64 {
        match self {
            ComponentDist::Poisson(p) => p.ln_pmf(x),
            ComponentDist::NegativeBinomial(nb) => nb.ln_pmf(x),
            ComponentDist::PointMass(v) => {
                if x == *v {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    fn upper_support(&self, eps: f64) -> u64 {
        match self {
            ComponentDist::Poisson(p) => p.upper_support(eps),
            ComponentDist::NegativeBinomial(nb) => nb.upper_support(eps),
            ComponentDist::PointMass(v) => *v,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            ComponentDist::Poisson(_) => "poisson",
            ComponentDist::NegativeBinomial(_) => "negative_binomial",
            ComponentDist::PointMass(_) => "point_mass",
        }
    }

    fn params(&self) -> Value {
        match self {
            ComponentDist::Poisson(p) => serde_json::json!({ "lambda": p.lambda() }),
            ComponentDist::NegativeBinomial(nb) => serde_json::json!({ "mu": nb.mu(), "r": nb.r() }),
            ComponentDist::PointMass(v) => serde_json::json!({ "value": v }),
        }
    }
}

/// A finite mixture pmf used as a simulation target.
///
/// JSON form: `{"name": ..., "components": [{"kind": ..., "params": {...}, "weight": ...}]}`
/// with kinds `poisson {lambda}`, `negative_binomial {mu, r}` and
/// `point_mass {value}`. Weights are normalized on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTarget", into = "RawTarget")]
pub struct TargetSpec {
    name: String,
    components: Vec<(ComponentDist, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawComponent {
    kind: String,
    #[serde(default)]
    params: Map<String, Value>,
    weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTarget {
    name: String,
    components: Vec<RawComponent>,
}

fn spec_err(path: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::InvalidSpec { path: path.into(), reason: reason.into() }
}

fn take_param(params: &Map<String, Value>, key: &str, at: &str) -> Result<f64> {
    params
        .get(key)
        .ok_or_else(|| spec_err(format!("{at}.params.{key}"), "missing"))?
        .as_f64()
        .ok_or_else(|| spec_err(format!("{at}.params.{key}"), "must be a number"))
}

impl TryFrom<RawTarget> for TargetSpec {
    type Error = Error;

    fn try_from(raw: RawTarget) -> Result<Self> {
        if raw.components.is_empty() {
            return Err(spec_err("components", "at least one component is required"));
        }
        let mut comps = Vec::with_capacity(raw.components.len());
        for (i, c) in raw.components.iter().enumerate() {
            let at = format!("components[{i}]");
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return Err(spec_err(format!("{at}.weight"), format!("must be positive, got {}", c.weight)));
            }
            let allowed: &[&str] = match c.kind.as_str() {
                "poisson" => &["lambda"],
                "negative_binomial" => &["mu", "r"],
                "point_mass" => &["value"],
                other => {
                    return Err(spec_err(
                        format!("{at}.kind"),
                        format!("unknown kind `{other}` (expected poisson, negative_binomial or point_mass)"),
                    ))
                }
            };
            if let Some(extra) = c.params.keys().find(|k| !allowed.contains(&k.as_str())) {
                return Err(spec_err(format!("{at}.params.{extra}"), "unexpected parameter"));
            }
            let dist = match c.kind.as_str() {
                "poisson" => {
                    let lambda = take_param(&c.params, "lambda", &at)?;
                    ComponentDist::Poisson(
                        Poisson::new(lambda).map_err(|e| spec_err(format!("{at}.params.lambda"), e.to_string()))?,
                    )
                }
                "negative_binomial" => {
                    let mu = take_param(&c.params, "mu", &at)?;
                    let r = take_param(&c.params, "r", &at)?;
                    ComponentDist::NegativeBinomial(
                        NegativeBinomial::new(mu, r).map_err(|e| spec_err(format!("{at}.params"), e.to_string()))?,
                    )
                }
                _ => {
                    let v = c
                        .params
                        .get("value")
                        .ok_or_else(|| spec_err(format!("{at}.params.value"), "missing"))?
                        .as_u64()
                        .ok_or_else(|| spec_err(format!("{at}.params.value"), "must be a nonnegative integer"))?;
                    ComponentDist::PointMass(v)
                }
            };
            comps.push((dist, c.weight));
        }
        let total: f64 = comps.iter().map(|(_, w)| w).sum();
        for (_, w) in &mut comps {
            *w /= total;
        }
        Ok(TargetSpec { name: raw.name, components: comps })
    }
}

impl From<TargetSpec> for RawTarget {
    fn from(t: TargetSpec) -> Self {
        RawTarget {
            name: t.name,
            components: t
                .components
                .iter()
                .map(|(d, w)| RawComponent {
                    kind: d.kind().to_string(),
                    params: match d.params() {
                        Value::Object(m) => m,
                        _ => unreachable!(),
                    },
                    weight: *w,
                })
                .collect(),
        }
    }
}

impl TargetSpec {
    /// Builds a mixture from `(component, weight)` pairs; weights are normalized.
    pub fn new(name: impl Into<String>, components: Vec<(ComponentDist, f64)>) -> Result<Self> {
        let raw = RawTarget {
            name: name.into(),
            components: components
                .iter()
                .map(|(d, w)| RawComponent {
                    kind: d.kind().to_string(),
                    params: match d.params() {
                        Value::Object(m) => m,
                        _ => unreachable!(),
                    },
                    weight: *w,
                })
                .collect(),
        };
        TargetSpec::try_from(raw)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawTarget = serde_json::from_str(text)
            .map_err(|e| spec_err("$", format!("line {} column {}: {e}", e.line(), e.column())))?;
        TargetSpec::try_from(raw)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("target spec serializes")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn components(&self) -> &[(ComponentDist, f64)] {
        &self.components
    }

    pub fn mean(&self) -> f64 {
        self.components
            .iter()
            .map(|(d, w)| {
                w * match d {
                    ComponentDist::Poisson(p) => p.lambda(),
                    ComponentDist::NegativeBinomial(nb) => nb.mu(),
                    ComponentDist::PointMass(v) => *v as f64,
                }
            })
            .sum()
    }
}

impl DiscretePmf for TargetSpec {
    fn ln_pmf(&self, x: u64) -> f64 {
        let terms: Vec<f64> = self.components.iter().map(|(d, w)| w.ln() + d.ln_pmf(x)).collect();
        let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return m;
        }
        m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
    }

    fn pmf(&self, x: u64) -> f64 {
        self.components.iter().map(|(d, w)| w * d.ln_pmf(x).exp()).sum()
    }

    fn upper_support(&self, eps: f64) -> u64 {
        self.components.iter().map(|(d, _)| d.upper_support(eps)).max().unwrap_or(0)
    }
}

/// Mixture pmf at `x`.
pub fn target_pmf(spec: &TargetSpec, x: u64) -> f64 {
    spec.pmf(x)
}

/// `n` draws: pick a component by weight, then invert its cdf. Identical
/// `(spec, n, seed)` give identical samples.
pub fn sample_target(spec: &TargetSpec, n: usize, seed: u64) -> Result<CountSample> {
    if n == 0 {
        return Err(Error::InsufficientData("sample size must be at least 1".into()));
    }
    let cdfs: Vec<Vec<f64>> = spec
        .components
        .iter()
        .map(|(d, _)| {
            let cap = d.upper_support(1e-16);
            let mut acc = 0.0;
            (0..=cap)
                .map(|x| {
                    acc += d.ln_pmf(x).exp();
                    acc
                })
                .collect()
        })
        .collect();
    let mut cum_w = Vec::with_capacity(spec.components.len());
    let mut acc = 0.0;
    for (_, w) in &spec.components {
        acc += w;
        cum_w.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..n)
        .map(|_| {
            let u: f64 = rng.gen::<f64>() * acc;
            let c = cum_w.iter().position(|&w| u < w).unwrap_or(cum_w.len() - 1);
            let cdf = &cdfs[c];
            let v: f64 = rng.gen::<f64>() * cdf[cdf.len() - 1];
            cdf.partition_point(|&p| p <= v).min(cdf.len() - 1) as u64
        })
        .collect();
    CountSample::new(values)
}

/// The six stand-in targets shipped with the harness: unimodal Poisson,
/// overdispersed negative binomial, zero-inflated Poisson, bimodal Poisson
/// mixture, bimodal mixture with well separated modes, and a trimodal mixture.
pub fn builtin_targets() -> Vec<TargetSpec> {
    use ComponentDist::*;
    let pois = |l: f64| Poisson(crate::pmf::Poisson::new(l).expect("valid rate"));
    let nb = |m: f64, r: f64| NegativeBinomial(crate::pmf::NegativeBinomial::new(m, r).expect("valid nb"));
    let build = |name: &str, comps: Vec<(ComponentDist, f64)>| TargetSpec::new(name, comps).expect("valid builtin");
    vec![
        build("unimodal-poisson", vec![(pois(10.0), 1.0)]),
        build("overdispersed-nb", vec![(nb(8.0, 3.0), 1.0)]),
        build("zero-inflated-poisson", vec![(PointMass(0), 0.3), (pois(6.0), 0.7)]),
        build("bimodal-poisson", vec![(pois(5.0), 0.5), (pois(15.0), 0.5)]),
        build("bimodal-separated", vec![(pois(10.0), 0.6), (pois(40.0), 0.4)]),
        build("trimodal", vec![(pois(5.0), 1.0), (pois(20.0), 1.0), (pois(40.0), 1.0)]),
    ]
}

pub fn builtin_target(name: &str) -> Option<TargetSpec> {
    builtin_targets().into_iter().find(|t| t.name == name)
}

/// How an estimator's bandwidth is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthRule {
    Kl,
    Cv,
    Fixed(f64),
    /// `h = n^exponent`.
    SampleSizePower(f64),
}

impl fmt::Display for BandwidthRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BandwidthRule::Kl => f.write_str("kl"),
            BandwidthRule::Cv => f.write_str("cv"),
            BandwidthRule::Fixed(h) => write!(f, "{h}"),
            BandwidthRule::SampleSizePower(p) => write!(f, "n^{p}"),
        }
    }
}

impl FromStr for BandwidthRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.strip_prefix("fixed:").unwrap_or(s);
        match s {
            "kl" => Ok(BandwidthRule::Kl),
            "cv" => Ok(BandwidthRule::Cv),
            _ => {
                if let Some(p) = s.strip_prefix("n^") {
                    let p: f64 = p.parse().map_err(|_| Error::Parse(format!("bad exponent in `{s}`")))?;
                    return Ok(BandwidthRule::SampleSizePower(p));
                }
                let h: f64 = s
                    .parse()
                    .map_err(|_| Error::Parse(format!("bandwidth must be kl, cv, n^<p> or a number, got `{s}`")))?;
                if !(h >= 0.0 && h.is_finite()) {
                    return Err(Error::Parse(format!("bandwidth must be nonnegative, got `{s}`")));
                }
                Ok(BandwidthRule::Fixed(h))
            }
        }
    }
}

/// An estimator together with its bandwidth rule.
///
/// Text form: `histogram`, `cmp[:rule]`, `triangular[:rule][:a=<int>]`,
/// `binomial[:rule]`, where `rule` is `kl`, `cv` (CMP only), `n^<p>` or a
/// fixed bandwidth. The rule defaults to `kl`; `a` defaults to 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EstimatorSpec {
    Histogram,
    Cmp(BandwidthRule),
    Triangular { a: u32, rule: BandwidthRule },
    Binomial(BandwidthRule),
}

impl fmt::Display for EstimatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorSpec::Histogram => f.write_str("histogram"),
            EstimatorSpec::Cmp(r) => write!(f, "cmp:{r}"),
            EstimatorSpec::Triangular { a, rule } => write!(f, "triangular:{rule}:a={a}"),
            EstimatorSpec::Binomial(r) => write!(f, "binomial:{r}"),
        }
    }
}

impl FromStr for EstimatorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.trim().split(':');
        let kind = parts.next().unwrap_or_default();
        let mut rule = BandwidthRule::Kl;
        let mut a = DEFAULT_TRIANGULAR_A;
        for p in parts {
            if let Some(v) = p.strip_prefix("a=") {
                a = v.parse().map_err(|_| Error::Parse(format!("bad range parameter in `{s}`")))?;
            } else if p != "fixed" {
                rule = p.parse()?;
            }
        }
        let spec = match kind {
            "histogram" => EstimatorSpec::Histogram,
            "cmp" => EstimatorSpec::Cmp(rule),
            "triangular" => {
                TriangularKernelSpec::new(a, 0.0)?;
                EstimatorSpec::Triangular { a, rule }
            }
            "binomial" => EstimatorSpec::Binomial(rule),
            other => return Err(Error::Parse(format!("unknown estimator `{other}` in `{s}`"))),
        };
        if !matches!(spec, EstimatorSpec::Cmp(_)) && rule == BandwidthRule::Cv && kind != "histogram" {
            return Err(Error::Parse(format!("cross-validated bandwidth is only available for cmp, got `{s}`")));
        }
        Ok(spec)
    }
}

impl EstimatorSpec {
    /// Fits the estimator, selecting the bandwidth by its rule.
    pub fn fit(
        &self,
        sample: &CountSample,
        search: &SearchConfig,
        support: SupportRule,
    ) -> Result<(PmfEstimate, BandwidthResult)> {
        let resolve = |rule: &BandwidthRule| match rule {
            BandwidthRule::Fixed(h) => Some(*h),
            BandwidthRule::SampleSizePower(p) => Some((sample.n() as f64).powf(*p)),
            _ => None,
        };
        match self {
            EstimatorSpec::Histogram => Ok((fit_histogram(sample), BandwidthResult::fixed(0.0))),
            EstimatorSpec::Cmp(rule) => {
                let bw = match (rule, resolve(rule)) {
                    (_, Some(h)) => BandwidthResult::fixed(h),
                    (BandwidthRule::Cv, _) => select_h_cv(sample, search)?,
                    _ => select_h_kl(sample, search)?,
                };
                let est = fit_cmp_dak(sample, bw.h, &search.series, support)?;
                Ok((est, bw))
            }
            EstimatorSpec::Triangular { a, rule } => {
                let bw = match resolve(rule) {
                    Some(h) => BandwidthResult::fixed(h),
                    None => select_triangular_h_kl(sample, *a, search)?,
                };
                let est = fit_triangular_dak(sample, &TriangularKernelSpec::new(*a, bw.h)?);
                Ok((est, bw))
            }
            EstimatorSpec::Binomial(rule) => {
                let bw = match resolve(rule) {
                    Some(h) => BandwidthResult::fixed(h),
                    None => select_binomial_h_kl(sample, search)?,
                };
                Ok((fit_binomial_dak(sample, bw.h)?, bw))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricSet {
    pub ise: bool,
    pub tail: bool,
}

impl Default for MetricSet {
    fn default() -> Self {
        MetricSet { ise: true, tail: true }
    }
}

impl FromStr for MetricSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut m = MetricSet { ise: false, tail: false };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "ise" => m.ise = true,
                "tail" => m.tail = true,
                other => return Err(Error::Parse(format!("unknown metric `{other}` (expected ise or tail)"))),
            }
        }
        Ok(m)
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub target: TargetSpec,
    pub sample_sizes: Vec<usize>,
    pub replications: usize,
    pub estimators: Vec<EstimatorSpec>,
    pub metrics: MetricSet,
    pub tail_level: f64,
    pub master_seed: u64,
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
    /// Record wall-clock fit times. Off by default so summaries stay reproducible.
    pub record_timing: bool,
    pub search: SearchConfig,
}

impl SimConfig {
    pub fn new(target: TargetSpec, sample_sizes: Vec<usize>, replications: usize, estimators: Vec<EstimatorSpec>) -> Self {
        SimConfig {
            target,
            sample_sizes,
            replications,
            estimators,
            metrics: MetricSet::default(),
            tail_level: 0.99,
            master_seed: 0,
            threads: None,
            record_timing: false,
            search: SearchConfig { parallel: false, ..SearchConfig::default() },
        }
    }

    fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Domain("replications must be at least 1".into()));
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.contains(&0) {
            return Err(Error::Domain("sample sizes must be non-empty and positive".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Domain("at least one estimator is required".into()));
        }
        if !(self.tail_level > 0.0 && self.tail_level < 1.0) {
            return Err(Error::Domain(format!("tail level must lie in (0, 1), got {}", self.tail_level)));
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for replication `r` at sample size `n`.
pub fn replication_seed(master_seed: u64, n: usize, r: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(master_seed) ^ n as u64) ^ r as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub estimator: String,
    /// Fingerprint of the sample this estimator was fitted to.
    pub sample_fingerprint: u64,
    pub ise: Option<f64>,
    pub tail: Option<RelativeErrorOutcome>,
    pub h: Option<f64>,
    pub fit_ms: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub n: usize,
    pub replication: usize,
    pub seed: u64,
    pub sample_fingerprint: u64,
    pub outcomes: Vec<FitOutcome>,
}

/// Aggregated results for one (estimator, n) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub target: String,
    pub estimator: String,
    pub n: usize,
    pub replications: usize,
    pub failures: usize,
    pub ise_mean: Option<f64>,
    pub ise_sd: Option<f64>,
    pub ise_median: Option<f64>,
    /// Over non-divergent replications.
    pub tail_r_mean: Option<f64>,
    pub tail_r_sd: Option<f64>,
    pub tail_divergent: usize,
    pub divergent_pct: Option<f64>,
    pub fit_ms_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub target: String,
    pub master_seed: u64,
    pub tail_level: f64,
    pub tail_threshold: Option<u64>,
    pub rows: Vec<SummaryRow>,
}

/// The CSV subset of a summary row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub target: String,
    pub estimator: String,
    pub n: usize,
    pub ise_mean: Option<f64>,
    pub ise_sd: Option<f64>,
    pub tail_r_mean: Option<f64>,
    pub tail_r_sd: Option<f64>,
    pub divergent_pct: Option<f64>,
    pub fit_ms_mean: Option<f64>,
}

pub const CSV_COLUMNS: [&str; 9] = [
    "target",
    "estimator",
    "n",
    "ise_mean",
    "ise_sd",
    "tail_r_mean",
    "tail_r_sd",
    "divergent_pct",
    "fit_ms_mean",
];

/// 17 significant digits; empty for missing values.
pub fn format_float(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.16e}"),
        None => String::new(),
    }
}

impl SimSummary {
    pub fn csv_rows(&self) -> Vec<CsvRow> {
        self.rows
            .iter()
            .map(|r| CsvRow {
                target: r.target.clone(),
                estimator: r.estimator.clone(),
                n: r.n,
                ise_mean: r.ise_mean,
                ise_sd: r.ise_sd,
                tail_r_mean: r.tail_r_mean,
                tail_r_sd: r.tail_r_sd,
                divergent_pct: r.divergent_pct,
                fit_ms_mean: r.fit_ms_mean,
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_COLUMNS).expect("in-memory write");
        for r in self.csv_rows() {
            w.write_record([
                r.target,
                r.estimator,
                r.n.to_string(),
                format_float(r.ise_mean),
                format_float(r.ise_sd),
                format_float(r.tail_r_mean),
                format_float(r.tail_r_sd),
                format_float(r.divergent_pct),
                format_float(r.fit_ms_mean),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>> {
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let headers = rd.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
        if headers.iter().ne(CSV_COLUMNS.iter().copied()) {
            return Err(Error::Parse(format!("unexpected summary header: {headers:?}")));
        }
        rd.deserialize()
            .map(|r| r.map_err(|e| Error::Parse(e.to_string())))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }

    pub fn row(&self, estimator: &str, n: usize) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.estimator == estimator && r.n == n)
    }
}

fn mean_sd(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(sd))
}

fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

struct TailTruth {
    threshold: u64,
    p_true: f64,
}

fn run_one(cfg: &SimConfig, tail: Option<&TailTruth>, n: usize, r: usize) -> ReplicationRecord {
    let seed = replication_seed(cfg.master_seed, n, r);
    let sample = match sample_target(&cfg.target, n, seed) {
        Ok(s) => s,
        Err(e) => {
            let outcomes = cfg
                .estimators
                .iter()
                .map(|spec| FitOutcome {
                    estimator: spec.to_string(),
                    sample_fingerprint: 0,
                    ise: None,
                    tail: None,
                    h: None,
                    fit_ms: None,
                    error: Some(e.to_string()),
                })
                .collect();
            return ReplicationRecord { n, replication: r, seed, sample_fingerprint: 0, outcomes };
        }
    };
    let fingerprint = sample.fingerprint();
    let outcomes = cfg
        .estimators
        .iter()
        .map(|spec| {
            let start = cfg.record_timing.then(Instant::now);
            let fitted = spec.fit(&sample, &cfg.search, SupportRule::Auto);
            let fit_ms = start.map(|s| s.elapsed().as_secs_f64() * 1e3);
            let mut out = FitOutcome {
                estimator: spec.to_string(),
                sample_fingerprint: sample.fingerprint(),
                ise: None,
                tail: None,
                h: None,
                fit_ms,
                error: None,
            };
            match fitted {
                Ok((est, bw)) => {
                    out.h = Some(bw.h);
                    if cfg.metrics.ise {
                        out.ise = Some(ise(&est, &cfg.target));
                    }
                    if let Some(t) = tail {
                        let p_hat = tail_probability(&est, t.threshold);
                        match tail_relative_error(p_hat, t.p_true) {
                            Ok(o) => out.tail = Some(o),
                            Err(e) => out.error = Some(e.to_string()),
                        }
                    }
                }
                Err(e) => out.error = Some(e.to_string()),
            }
            out
        })
        .collect();
    ReplicationRecord { n, replication: r, seed, sample_fingerprint: fingerprint, outcomes }
}

/// Runs every replication and returns the raw records in `(n, r)` order.
pub fn run_replications(cfg: &SimConfig) -> Result<Vec<ReplicationRecord>> {
    cfg.validate()?;
    let tail = tail_truth(cfg)?;
    let jobs: Vec<(usize, usize)> = cfg
        .sample_sizes
        .iter()
        .flat_map(|&n| (0..cfg.replications).map(move |r| (n, r)))
        .collect();
    let work = || -> Vec<ReplicationRecord> {
        jobs.par_iter().map(|&(n, r)| run_one(cfg, tail.as_ref(), n, r)).collect()
    };
    match cfg.threads {
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k.max(1))
                .build()
                .map_err(|e| Error::Domain(format!("cannot build thread pool: {e}")))?;
            Ok(pool.install(work))
        }
        None => Ok(work()),
    }
}

fn tail_truth(cfg: &SimConfig) -> Result<Option<TailTruth>> {
    if !cfg.metrics.tail {
        return Ok(None);
    }
    let q = TailQuery::from_truth(&cfg.target, cfg.tail_level)?;
    let p_true = cfg.target.survival(q.threshold);
    // A target without mass above its quantile has no tail to estimate.
    Ok((p_true > 0.0).then_some(TailTruth { threshold: q.threshold, p_true }))
}

/// Aggregates records into one row per (n, estimator), in configuration order.
pub fn summarize(cfg: &SimConfig, records: &[ReplicationRecord]) -> Result<SimSummary> {
    let tail = tail_truth(cfg)?;
    let mut rows = Vec::new();
    for &n in &cfg.sample_sizes {
        for (i, spec) in cfg.estimators.iter().enumerate() {
            let outs: Vec<&FitOutcome> = records.iter().filter(|r| r.n == n).map(|r| &r.outcomes[i]).collect();
            let failures = outs.iter().filter(|o| o.error.is_some()).count();
            let ises: Vec<f64> = outs.iter().filter_map(|o| o.ise).collect();
            let finite_r: Vec<f64> = outs.iter().filter_map(|o| o.tail.and_then(|t| t.value())).collect();
            let divergent = outs.iter().filter(|o| o.tail.is_some_and(|t| t.is_divergent())).count();
            let tail_count = finite_r.len() + divergent;
            let times: Vec<f64> = outs.iter().filter_map(|o| o.fit_ms).collect();
            let (ise_mean, ise_sd) = mean_sd(&ises);
            let (tail_r_mean, tail_r_sd) = mean_sd(&finite_r);
            rows.push(SummaryRow {
                target: cfg.target.name().to_string(),
                estimator: spec.to_string(),
                n,
                replications: outs.len(),
                failures,
                ise_mean,
                ise_sd,
                ise_median: median(&ises),
                tail_r_mean,
                tail_r_sd,
                tail_divergent: divergent,
                divergent_pct: (tail_count > 0).then(|| 100.0 * divergent as f64 / tail_count as f64),
                fit_ms_mean: mean_sd(&times).0,
            });
        }
    }
    Ok(SimSummary {
        target: cfg.target.name().to_string(),
        master_seed: cfg.master_seed,
        tail_level: cfg.tail_level,
        tail_threshold: tail.map(|t| t.threshold),
        rows,
    })
}

/// Runs the study and aggregates it.
pub fn run_study(cfg: &SimConfig) -> Result<SimSummary> {
    let records = run_replications(cfg)?;
    summarize(cfg, &records)
}
