use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use cmpdak::bandwidth::{BandwidthResult, SearchConfig};
use cmpdak::estimators::{
    EstimatorKind, PmfEstimate, SampleSummary, SupportRule, TriangularKernelSpec,
};
use cmpdak::metrics::{tail_probability, tail_relative_error, RelativeErrorOutcome, TailQuery};
use cmpdak::pmf::DiscretePmf;
use cmpdak::sim::{
    builtin_target, builtin_targets, format_float, run_replications, summarize, BandwidthRule,
    EstimatorSpec, MetricSet, SimConfig, SimSummary, TargetSpec,
};

use crate::dataset::Dataset;
use crate::error::CliError;
use crate::{FitArgs, FitCommand, SimulateCommand, TailprobCommand};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Query {
    Range { a: u64, b: u64 },
    TailGe { k: u64 },
    TailLe { k: u64 },
}

impl Query {
    fn evaluate(&self, est: &PmfEstimate) -> f64 {
        match *self {
            Query::Range { a, b } => est.range_prob(a, Some(b)),
            Query::TailGe { k } => est.range_prob(k, None),
            Query::TailLe { k } => est.range_prob(0, Some(k)),
        }
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Query::Range { a, b } => write!(f, "P({a} <= X <= {b})"),
            Query::TailGe { k } => write!(f, "P(X >= {k})"),
            Query::TailLe { k } => write!(f, "P(X <= {k})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    #[serde(flatten)]
    pub query: Query,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub source_path: String,
    pub label: Option<String>,
    pub estimator: String,
    pub sample_summary: SampleSummary,
    pub bandwidth: BandwidthResult,
    /// `Σ probs + tail_mass`.
    pub total_mass: f64,
    pub queries: Vec<QueryResult>,
    pub estimate: PmfEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub source_path: String,
    pub estimator: String,
    pub bandwidth: f64,
    pub level: Option<f64>,
    pub threshold: u64,
    pub p_hat: f64,
    pub truth: Option<String>,
    pub p_true: Option<f64>,
    pub relative_error: Option<RelativeErrorOutcome>,
}

fn input(e: impl fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn output_err(path: &Path, e: impl fmt::Display) -> CliError {
    CliError::Output(format!("cannot write `{}`: {e}", path.display()))
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| output_err(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| output_err(&path, e))
}

pub fn estimator_spec(args: &FitArgs) -> Result<EstimatorSpec, CliError> {
    let kind: EstimatorKind = args.kernel.parse().map_err(|e| input(format!("--kernel: {e}")))?;
    let rule: BandwidthRule = args.bandwidth.parse().map_err(|e| input(format!("--bandwidth: {e}")))?;
    if rule == BandwidthRule::Cv && kind != EstimatorKind::Cmp && kind != EstimatorKind::Histogram {
        return Err(input("--bandwidth: cv is only available with --kernel cmp"));
    }
    Ok(match kind {
        EstimatorKind::Histogram => EstimatorSpec::Histogram,
        EstimatorKind::Cmp => EstimatorSpec::Cmp(rule),
        EstimatorKind::Triangular => {
            TriangularKernelSpec::new(args.triangular_a, 0.0).map_err(|e| input(format!("--triangular-a: {e}")))?;
            EstimatorSpec::Triangular { a: args.triangular_a, rule }
        }
        EstimatorKind::Binomial => EstimatorSpec::Binomial(rule),
    })
}

fn fit_dataset(args: &FitArgs) -> Result<(Dataset, EstimatorSpec, PmfEstimate, BandwidthResult), CliError> {
    let spec = estimator_spec(args)?;
    let support: SupportRule = args.support_max.parse().map_err(|e| input(format!("--support-max: {e}")))?;
    let data = Dataset::load(&args.input, args.label.clone())?;
    let (mut est, bw) = spec.fit(&data.counts, &SearchConfig::default(), support)?;
    if let (SupportRule::Fixed(m), false) = (support, matches!(spec, EstimatorSpec::Cmp(_))) {
        est = est.with_support(m)?;
    }
    Ok((data, spec, est, bw))
}

fn parse_range(s: &str) -> Result<Query, CliError> {
    let bad = || input(format!("--prob-range: expected a:b with integers a <= b, got `{s}`"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    let a: u64 = a.trim().parse().map_err(|_| bad())?;
    let b: u64 = b.trim().parse().map_err(|_| bad())?;
    if b < a {
        return Err(bad());
    }
    Ok(Query::Range { a, b })
}

fn pmf_csv(est: &PmfEstimate) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "prob"]).expect("in-memory write");
    for (x, p) in est.probs().iter().enumerate() {
        w.write_record([x.to_string(), format_float(Some(*p))]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

fn bandwidth_line(bw: &BandwidthResult) -> String {
    let method = serde_json::to_value(bw.method).expect("method serializes");
    format!("{} h={:.4}", method.as_str().unwrap_or("?"), bw.h)
}

pub fn fit(cmd: &FitCommand) -> Result<(), CliError> {
    let mut queries = Vec::new();
    for r in &cmd.prob_range {
        queries.push(parse_range(r)?);
    }
    queries.extend(cmd.prob_tail_ge.iter().map(|&k| Query::TailGe { k }));
    queries.extend(cmd.prob_tail_le.iter().map(|&k| Query::TailLe { k }));

    let (data, spec, est, bw) = fit_dataset(&cmd.fit)?;
    let report = FitReport {
        source_path: data.source_path.clone(),
        label: data.label.clone(),
        estimator: spec.to_string(),
        sample_summary: data.counts.summary(),
        total_mass: est.total_mass(),
        queries: queries
            .iter()
            .map(|q| QueryResult { query: *q, probability: q.evaluate(&est) })
            .collect(),
        bandwidth: bw,
        estimate: est,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    if let Some(dir) = &cmd.output {
        write_file(dir, "pmf.csv", &pmf_csv(&report.estimate))?;
        write_file(dir, "report.json", &json)?;
    }
    if cmd.json {
        println!("{json}");
        return Ok(());
    }
    let s = &report.sample_summary;
    println!("estimator  {}", report.estimator);
    println!("bandwidth  {}", bandwidth_line(&report.bandwidth));
    println!(
        "sample     n={} mean={:.4} variance={:.4} min={} max={}",
        s.n, s.mean, s.variance, s.min, s.max
    );
    println!(
        "support    0..={} tail_mass={:.4e}",
        report.estimate.x_max(),
        report.estimate.tail_mass()
    );
    for q in &report.queries {
        println!("{} = {:.4}", q.query, q.probability);
    }
    Ok(())
}

pub fn load_target(name_or_path: &str) -> Result<TargetSpec, CliError> {
    let path = Path::new(name_or_path);
    if path.is_file() {
        let text = fs::read_to_string(path).map_err(|e| input(format!("cannot read `{}`: {e}", path.display())))?;
        return TargetSpec::from_json(&text).map_err(|e| input(format!("{}: {e}", path.display())));
    }
    builtin_target(name_or_path).ok_or_else(|| {
        input(format!(
            "`{name_or_path}` is neither a target spec file nor a built-in target (see `cmpdak targets list`)"
        ))
    })
}

pub fn tailprob(cmd: &TailprobCommand) -> Result<(), CliError> {
    if let Some(level) = cmd.level {
        if !(level > 0.0 && level < 1.0) {
            return Err(input(format!("--level: must lie in (0, 1), got {level}")));
        }
    }
    let truth = cmd.truth.as_deref().map(load_target).transpose()?;
    let threshold = match (cmd.threshold, cmd.level, &truth) {
        (Some(k), _, _) => k,
        (None, Some(level), Some(t)) => TailQuery::from_truth(t, level)?.threshold,
        _ => return Err(input("--level needs --truth to locate the quantile; use --threshold otherwise")),
    };
    let (data, spec, est, bw) = fit_dataset(&cmd.fit)?;
    let p_hat = tail_probability(&est, threshold);
    let p_true = truth.as_ref().map(|t| t.survival(threshold));
    let relative_error = match p_true {
        Some(p) if p > 0.0 => Some(tail_relative_error(p_hat, p)?),
        _ => None,
    };
    let report = TailReport {
        source_path: data.source_path,
        estimator: spec.to_string(),
        bandwidth: bw.h,
        level: cmd.level,
        threshold,
        p_hat,
        truth: truth.as_ref().map(|t| t.name().to_string()),
        p_true,
        relative_error,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    if let Some(dir) = &cmd.output {
        write_file(dir, "tailprob.json", &json)?;
    }
    if cmd.json {
        println!("{json}");
        return Ok(());
    }
    println!("estimator  {}", report.estimator);
    println!("bandwidth  {}", bandwidth_line(&bw));
    println!("P(X > {threshold}) = {}", format_float(Some(p_hat)));
    if let Some(p) = p_true {
        println!("true P(X > {threshold}) = {}", format_float(Some(p)));
        match relative_error {
            Some(RelativeErrorOutcome::Finite(r)) => println!("relative error r = {r:.4}"),
            Some(RelativeErrorOutcome::Divergent) => println!("relative error r = inf (divergent)"),
            None => println!("relative error undefined: the true tail probability is 0"),
        }
    }
    Ok(())
}

fn fmt_cell(mean: Option<f64>, sd: Option<f64>, scale: f64) -> String {
    match (mean, sd) {
        (Some(m), Some(s)) => format!("{:.4} ({:.4})", m * scale, s * scale),
        _ => "-".into(),
    }
}

fn display_table(summary: &SimSummary) -> String {
    let mut out = format!(
        "{:<24} {:>6} {:>22} {:>22} {:>8} {:>5}\n",
        "estimator", "n", "ISE x1e-3 mean (sd)", "tail r mean (sd)", "% inf", "fail"
    );
    for r in &summary.rows {
        out.push_str(&format!(
            "{:<24} {:>6} {:>22} {:>22} {:>8} {:>5}\n",
            r.estimator,
            r.n,
            fmt_cell(r.ise_mean, r.ise_sd, 1e3),
            fmt_cell(r.tail_r_mean, r.tail_r_sd, 1.0),
            r.divergent_pct.map_or("-".into(), |p| format!("{p:.1}")),
            r.failures,
        ));
    }
    out
}

pub fn simulate(cmd: &SimulateCommand) -> Result<(), CliError> {
    let target = load_target(&cmd.target)?;
    let estimators = cmd
        .estimators
        .iter()
        .map(|s| s.parse::<EstimatorSpec>().map_err(|e| input(format!("--estimators: {e}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let metrics: MetricSet = cmd.metrics.parse().map_err(|e| input(format!("--metrics: {e}")))?;
    if cmd.threads == Some(0) {
        return Err(input("--threads: must be at least 1"));
    }
    let mut cfg = SimConfig::new(target, cmd.sizes.clone(), cmd.reps, estimators);
    cfg.metrics = metrics;
    cfg.tail_level = cmd.tail_level;
    cfg.master_seed = cmd.seed;
    cfg.threads = cmd.threads;
    cfg.record_timing = cmd.timing;

    let records = run_replications(&cfg)?;
    let summary = summarize(&cfg, &records)?;
    match &cmd.output {
        Some(dir) => {
            write_file(dir, "summary.csv", &summary.to_csv())?;
            write_file(dir, "summary.json", &summary.to_json())?;
            let recs = serde_json::to_string_pretty(&records).expect("records serialize");
            write_file(dir, "replications.json", &recs)?;
            print!("{}", display_table(&summary));
        }
        None => print!("{}", summary.to_csv()),
    }
    Ok(())
}

fn describe(name: &str) -> &'static str {
    match name {
        "unimodal-poisson" => "Poisson(10)",
        "overdispersed-nb" => "negative binomial, mean 8, size 3",
        "zero-inflated-poisson" => "0.3 point mass at 0 + 0.7 Poisson(6)",
        "bimodal-poisson" => "0.5 Poisson(5) + 0.5 Poisson(15)",
        "bimodal-separated" => "0.6 Poisson(10) + 0.4 Poisson(40)",
        "trimodal" => "equal mixture of Poisson(5), Poisson(20), Poisson(40)",
        _ => "",
    }
}

pub fn targets_list() -> Result<(), CliError> {
    for t in builtin_targets() {
        println!("{:<24} {}", t.name(), describe(t.name()));
    }
    Ok(())
}

pub fn targets_show(name: &str) -> Result<(), CliError> {
    let t = builtin_target(name).ok_or_else(|| input(format!("no built-in target named `{name}`")))?;
    println!("{}", t.to_json());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use cmpdak::estimators::{fit_cmp_dak, CountSample};

    #[test]
    fn range_parsing() {
        assert_eq!(parse_range("80:88").unwrap(), Query::Range { a: 80, b: 88 });
        assert!(parse_range("9:3").is_err());
        assert!(parse_range("3").is_err());
        assert!(parse_range("a:3").is_err());
    }

    #[test]
    fn report_round_trip() {
        let s = CountSample::new(vec![0, 2, 2, 7]).unwrap();
        let est = fit_cmp_dak(&s, 0.7, &Default::default(), SupportRule::Auto).unwrap();
        let q = Query::Range { a: 0, b: 3 };
        let report = FitReport {
            source_path: "x".into(),
            label: None,
            estimator: "cmp:0.7".into(),
            sample_summary: s.summary(),
            bandwidth: BandwidthResult::fixed(0.7),
            total_mass: est.total_mass(),
            queries: vec![QueryResult { query: q, probability: q.evaluate(&est) }],
            estimate: est,
        };
        let text = serde_json::to_string(&report).unwrap();
        let back: FitReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back.estimate, report.estimate);
        assert_eq!(back.queries, report.queries);
        assert!(back.bandwidth.objective_value.is_nan());
        assert_eq!(back.bandwidth.h, 0.7);
    }

    #[test]
    fn pmf_csv_round_trip() {
        let s = CountSample::new(vec![1, 3, 3]).unwrap();
        let est = fit_cmp_dak(&s, 0.4, &Default::default(), SupportRule::Auto).unwrap();
        let text = pmf_csv(&est);
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let probs: Vec<f64> = rd
            .records()
            .map(|r| r.unwrap()[1].parse::<f64>().unwrap())
            .collect();
        assert_eq!(probs, est.probs());
    }
}
