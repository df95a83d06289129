//! `cmpdak`: fit smoothed count pmfs, query probabilities, run simulation studies.

mod commands;
mod dataset;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "cmpdak", version, about = "Discrete kernel smoothing of count data with CMP kernels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit an estimator to a file of counts and answer probability queries.
    Fit(FitCommand),
    /// Estimate an upper tail probability, optionally against a known truth.
    Tailprob(TailprobCommand),
    /// Run a seeded Monte Carlo comparison of estimators.
    Simulate(SimulateCommand),
    /// Inspect the built-in simulation targets.
    Targets {
        #[command(subcommand)]
        action: TargetsAction,
    },
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Counts, one per line or as a single-column CSV with optional header; `-` reads stdin.
    pub input: PathBuf,
    /// cmp, triangular, binomial or histogram.
    #[arg(long, default_value = "cmp")]
    pub kernel: String,
    /// kl, cv (cmp only) or fixed:<h>.
    #[arg(long, default_value = "kl")]
    pub bandwidth: String,
    /// Half-width of the triangular kernel.
    #[arg(long, default_value_t = cmpdak::estimators::DEFAULT_TRIANGULAR_A)]
    pub triangular_a: u32,
    /// auto or the largest support point to tabulate.
    #[arg(long, default_value = "auto")]
    pub support_max: String,
    /// Label recorded in the report.
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Debug, Args)]
pub struct FitCommand {
    #[command(flatten)]
    pub fit: FitArgs,
    /// P(a <= X <= b), given as a:b. Repeatable.
    #[arg(long, value_name = "A:B")]
    pub prob_range: Vec<String>,
    /// P(X >= k). Repeatable.
    #[arg(long, value_name = "K")]
    pub prob_tail_ge: Vec<u64>,
    /// P(X <= k). Repeatable.
    #[arg(long, value_name = "K")]
    pub prob_tail_le: Vec<u64>,
    /// Directory for pmf.csv and report.json.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Print the full JSON report instead of the summary table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct TailprobCommand {
    #[command(flatten)]
    pub fit: FitArgs,
    /// Tail beyond the level-quantile of the truth; requires --truth.
    #[arg(long, conflicts_with = "threshold", required_unless_present = "threshold")]
    pub level: Option<f64>,
    /// Tail P(X > k).
    #[arg(long)]
    pub threshold: Option<u64>,
    /// Target spec JSON path or built-in target name.
    #[arg(long)]
    pub truth: Option<String>,
    /// Directory for tailprob.json.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SimulateCommand {
    /// Target spec JSON path or built-in target name.
    #[arg(long, default_value = "bimodal-poisson")]
    pub target: String,
    /// Comma-separated sample sizes.
    #[arg(long, default_value = "20,50,100", value_delimiter = ',')]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated estimators, e.g. histogram,cmp:kl,cmp:cv,triangular:kl:a=2,binomial:0.1.
    #[arg(long, default_value = "histogram,cmp:kl,triangular:kl", value_delimiter = ',')]
    pub estimators: Vec<String>,
    /// Comma-separated subset of ise,tail.
    #[arg(long, default_value = "ise,tail")]
    pub metrics: String,
    #[arg(long, default_value_t = 0.99)]
    pub tail_level: f64,
    /// Worker threads; changes runtime only.
    #[arg(long, env = "CMPDAK_THREADS")]
    pub threads: Option<usize>,
    /// Record wall-clock fit times (makes output machine dependent).
    #[arg(long)]
    pub timing: bool,
    /// Directory for summary.csv, summary.json and replications.json; without it
    /// the summary CSV goes to stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum TargetsAction {
    /// Names and descriptions of the built-in targets.
    List,
    /// Print a built-in target as JSON.
    Show { name: String },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit(cmd) => commands::fit(&cmd),
        Command::Tailprob(cmd) => commands::tailprob(&cmd),
        Command::Simulate(cmd) => commands::simulate(&cmd),
        Command::Targets { action: TargetsAction::List } => commands::targets_list(),
        Command::Targets { action: TargetsAction::Show { name } } => commands::targets_show(&name),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
