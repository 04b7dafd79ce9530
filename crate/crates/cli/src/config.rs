//! Flat TOML pipeline configuration.
//!
//! Every key is optional. Stage-specific command-line flags override the
//! file, and the file overrides the built-in defaults.
//!
//! ```toml
//! output = "out"                 # directory for all artifacts
//! log = "access.log"
//! log_format = "tsv"             # or "jsonl"
//! edges = "edges.tsv"            # defaults to <output>/edges.tsv
//! nodes = "nodes.tsv"            # optional node table fixing page ids
//!
//! content_type_prefix = "text/html"
//! response_code = 200
//! bot_ua_substrings = ["crawl", "slurp", "spider", "bot"]
//! admin_path_patterns = ["preview", "edit.jsp"]
//! drop_self_referrer = true
//!
//! session_delta = 1800           # seconds
//! midnight_cut = true
//! min_clicks_for_referrer_check = 4
//! max_missing_referrer_fraction = 0.5
//!
//! alpha = 0.85
//! tolerance = 1e-12
//! max_iterations = 10000
//! seed = 0                       # Monte Carlo walker
//! monte_carlo_steps = 0          # 0 disables the walker
//!
//! heatmap_bins = 50
//! sweep_alphas = [0.0, 0.2, 0.5, 0.85]
//!
//! seed_url = "http://example.org"
//! allowed_host = ""
//! skip_query_params = ["skin=raw"]
//! skip_extensions = [".mp3", ".pdf"]
//! max_pages = 100000
//! politeness_delay = 500         # milliseconds
//! max_concurrent_fetches = 1
//! timeout = 30000                # milliseconds
//! retries = 1
//! site_dir = "fixtures/site"     # crawl local HTML files instead of HTTP
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use surfer_core::crawler::CrawlConfig;
use surfer_core::logmodel::{FilterRules, LogFormat};
use surfer_core::sessions::SessionConfig;
use surfer_core::SolverConfig;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub output: PathBuf,
    pub log: Option<PathBuf>,
    pub log_format: String,
    pub edges: Option<PathBuf>,
    pub nodes: Option<PathBuf>,

    pub content_type_prefix: String,
    pub response_code: u16,
    pub bot_ua_substrings: Vec<String>,
    pub admin_path_patterns: Vec<String>,
    pub drop_self_referrer: bool,

    pub session_delta: i64,
    pub midnight_cut: bool,
    pub min_clicks_for_referrer_check: usize,
    pub max_missing_referrer_fraction: f64,

    pub alpha: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub seed: u64,
    pub monte_carlo_steps: u64,

    pub heatmap_bins: usize,
    pub sweep_alphas: Vec<f64>,

    pub seed_url: String,
    pub allowed_host: String,
    pub skip_query_params: Vec<String>,
    pub skip_extensions: Vec<String>,
    pub max_pages: usize,
    pub politeness_delay: u64,
    pub max_concurrent_fetches: usize,
    pub timeout: u64,
    pub retries: u32,
    pub site_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let filter = FilterRules::default();
        let session = SessionConfig::default();
        let solver = SolverConfig::default();
        let crawl = CrawlConfig::default();
        Self {
            output: PathBuf::from("."),
            log: None,
            log_format: "tsv".into(),
            edges: None,
            nodes: None,
            content_type_prefix: filter.allowed_content_type_prefix,
            response_code: filter.required_response_code,
            bot_ua_substrings: filter.bot_ua_substrings,
            admin_path_patterns: filter.admin_path_patterns,
            drop_self_referrer: filter.drop_self_referrer,
            session_delta: session.delta,
            midnight_cut: session.midnight_cut,
            min_clicks_for_referrer_check: session.min_clicks_for_referrer_check,
            max_missing_referrer_fraction: session.max_missing_referrer_fraction,
            alpha: solver.alpha,
            tolerance: solver.tolerance,
            max_iterations: solver.max_iterations,
            seed: 0,
            monte_carlo_steps: 0,
            heatmap_bins: 50,
            sweep_alphas: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.85, 0.9],
            seed_url: crawl.seed_url,
            allowed_host: crawl.allowed_host,
            skip_query_params: crawl.skip_query_params,
            skip_extensions: crawl.skip_extensions,
            max_pages: crawl.max_pages,
            politeness_delay: crawl.politeness_delay,
            max_concurrent_fetches: crawl.max_concurrent_fetches,
            timeout: crawl.timeout,
            retries: crawl.retries,
            site_dir: None,
        }
    }
}

impl PipelineConfig {
    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: Self = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.output);
        for p in [&mut cfg.log, &mut cfg.edges, &mut cfg.nodes, &mut cfg.site_dir]
            .into_iter()
            .flatten()
        {
            rebase(p);
        }
        Ok(cfg)
    }

    pub fn log_format(&self) -> Result<LogFormat> {
        match self.log_format.as_str() {
            "tsv" => Ok(LogFormat::Tsv),
            "jsonl" | "json" => Ok(LogFormat::JsonLines),
            other => bail!("unknown log_format {other:?} (expected tsv or jsonl)"),
        }
    }

    pub fn filter_rules(&self) -> FilterRules {
        FilterRules {
            allowed_content_type_prefix: self.content_type_prefix.clone(),
            required_response_code: self.response_code,
            bot_ua_substrings: self.bot_ua_substrings.clone(),
            admin_path_patterns: self.admin_path_patterns.clone(),
            drop_self_referrer: self.drop_self_referrer,
        }
    }

    pub fn session_config(&self) -> SessionConfig {
        SessionConfig {
            delta: self.session_delta,
            midnight_cut: self.midnight_cut,
            min_clicks_for_referrer_check: self.min_clicks_for_referrer_check,
            max_missing_referrer_fraction: self.max_missing_referrer_fraction,
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            alpha: self.alpha,
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
        }
    }

    pub fn crawl_config(&self) -> CrawlConfig {
        CrawlConfig {
            seed_url: self.seed_url.clone(),
            allowed_host: self.allowed_host.clone(),
            skip_query_params: self.skip_query_params.clone(),
            skip_extensions: self.skip_extensions.clone(),
            max_pages: self.max_pages,
            politeness_delay: self.politeness_delay,
            max_concurrent_fetches: self.max_concurrent_fetches,
            timeout: self.timeout,
            retries: self.retries,
        }
    }

    /// `<output>/<name>`.
    pub fn out(&self, name: &str) -> PathBuf {
        self.output.join(name)
    }

    pub fn edges_path(&self) -> PathBuf {
        self.edges.clone().unwrap_or_else(|| self.out("edges.tsv"))
    }
}
