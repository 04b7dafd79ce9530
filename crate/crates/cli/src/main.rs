//! `surfer`: crawl a site, sessionize its access log, rank pages under three
//! random surfer models and compare the resulting distributions.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use surfer_core::SurferModel;

use crate::config::PipelineConfig;

#[derive(Parser, Debug)]
#[command(
    name = "surfer",
    version,
    about = "Random surfer models over a crawled site and its access logs"
)]
struct Cli {
    /// Pipeline configuration file (flat TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Output directory for all artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Breadth-first crawl into edges.tsv, nodes.tsv and fetch_errors.tsv.
    Crawl(CrawlArgs),
    /// Parse and filter an access log into records.tsv and drops.json.
    Ingest(IngestArgs),
    /// Sessionize kept records; count transitions, page views and visited pages.
    Sessions(SessionsArgs),
    /// Compute one model's stationary distribution into dist_<model>.csv.
    Rank(RankArgs),
    /// Compare the three distributions: report.json plus figure CSVs.
    Compare(CompareArgs),
    /// Recompute correlations and Gini values across damping factors.
    Sweep(SweepArgs),
}

#[derive(Args, Debug, Default)]
pub struct CrawlArgs {
    #[arg(long)]
    pub seed_url: Option<String>,
    #[arg(long)]
    pub allowed_host: Option<String>,
    /// Query parameter marking pages to skip (repeatable; replaces the configured list).
    #[arg(long = "skip-query-param", value_name = "KEY=VALUE")]
    pub skip_query_params: Vec<String>,
    /// File extension to skip (repeatable; replaces the configured list).
    #[arg(long = "skip-extension", value_name = "EXT")]
    pub skip_extensions: Vec<String>,
    #[arg(long)]
    pub max_pages: Option<usize>,
    /// Milliseconds between fetch batches.
    #[arg(long, value_name = "MS")]
    pub politeness_delay: Option<u64>,
    #[arg(long)]
    pub max_concurrent_fetches: Option<usize>,
    /// Per-request timeout in milliseconds.
    #[arg(long, value_name = "MS")]
    pub timeout: Option<u64>,
    #[arg(long)]
    pub retries: Option<u32>,
    /// Serve pages from a directory of HTML files instead of HTTP.
    #[arg(long, value_name = "DIR")]
    pub site_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct IngestArgs {
    #[arg(long, value_name = "PATH")]
    pub log: Option<PathBuf>,
    /// tsv or jsonl.
    #[arg(long)]
    pub log_format: Option<String>,
}

#[derive(Args, Debug, Default)]
pub struct GraphArgs {
    /// Edge list (default: <output>/edges.tsv).
    #[arg(long, value_name = "PATH")]
    pub edges: Option<PathBuf>,
    /// Node table fixing page ids.
    #[arg(long, value_name = "PATH")]
    pub nodes: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct SessionsArgs {
    /// Kept records (default: <output>/records.tsv).
    #[arg(long, value_name = "PATH")]
    pub records: Option<PathBuf>,
    #[command(flatten)]
    pub graph: GraphArgs,
    /// Session timeout in seconds.
    #[arg(long, value_name = "SECONDS")]
    pub delta: Option<i64>,
}

#[derive(Args, Debug, Default)]
pub struct UsageArgs {
    /// Transition counts (default: <output>/transitions.tsv).
    #[arg(long, value_name = "PATH")]
    pub transitions: Option<PathBuf>,
    /// Visited pages (default: <output>/visited.tsv).
    #[arg(long, value_name = "PATH")]
    pub visited: Option<PathBuf>,
    /// Page view counts (default: <output>/pageviews.tsv).
    #[arg(long, value_name = "PATH")]
    pub pageviews: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RankArgs {
    #[arg(long)]
    pub model: SurferModel,
    #[command(flatten)]
    pub graph: GraphArgs,
    #[command(flatten)]
    pub usage: UsageArgs,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Also simulate the uniform surfer for this many steps.
    #[arg(long, value_name = "STEPS")]
    pub monte_carlo_steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Default)]
pub struct CompareArgs {
    #[arg(long, value_name = "PATH")]
    pub uniform: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub pragmatic: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub lateral: Option<PathBuf>,
    /// Heatmap bins per axis.
    #[arg(long)]
    pub bins: Option<usize>,
}

#[derive(Args, Debug, Default)]
pub struct SweepArgs {
    #[command(flatten)]
    pub graph: GraphArgs,
    #[command(flatten)]
    pub usage: UsageArgs,
    /// Comma-separated damping factors.
    #[arg(long, value_delimiter = ',')]
    pub alphas: Vec<f64>,
}

const EXIT_USAGE: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_SOLVER: u8 = 3;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<commands::NonConvergence>()) {
                ExitCode::from(EXIT_SOLVER)
            } else {
                ExitCode::from(EXIT_INPUT)
            }
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(out) = cli.output {
        cfg.output = out;
    }
    match cli.command {
        Command::Crawl(a) => commands::crawl(cfg, a),
        Command::Ingest(a) => commands::ingest(cfg, a),
        Command::Sessions(a) => commands::sessions(cfg, a),
        Command::Rank(a) => commands::rank(cfg, a),
        Command::Compare(a) => commands::compare(cfg, a),
        Command::Sweep(a) => commands::sweep(cfg, a),
    }
}
