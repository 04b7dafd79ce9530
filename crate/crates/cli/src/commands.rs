use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use surfer_core::crawler::{crawl as run_crawl, DirectoryFetcher, Fetcher, HttpFetcher};
use surfer_core::graph::{load_graph, write_edge_list, write_node_table, LinkGraph, PageTable, VisitVector};
use surfer_core::logmodel::{ingest as run_ingest, parse_log_line, write_records_tsv, LogFormat, LogRecord};
use surfer_core::metrics::{compare as run_compare, damping_sweep, total_variation, write_sweep_csv, SweepInputs};
use surfer_core::sessions::{
    count_pageviews, count_transitions, filter_bot_sessions, read_pageviews_tsv, read_transitions_tsv, split_sessions,
    visited_pages, write_pageviews_tsv, write_sessions_jsonl, write_transitions_tsv, PageViewCounts, TransitionCounts,
};
use surfer_core::surfer::{
    lateral_distribution, monte_carlo_walk, pagerank_power, pragmatic_distribution, read_distribution_csv,
    write_distribution_csv, SolverError,
};
use surfer_core::{StationaryDistribution, SurferModel};

use crate::config::PipelineConfig;
use crate::{CompareArgs, CrawlArgs, GraphArgs, IngestArgs, RankArgs, SessionsArgs, SweepArgs, UsageArgs};

/// Marks failures that map to the solver exit code.
#[derive(Debug)]
pub struct NonConvergence(pub String);

impl fmt::Display for NonConvergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NonConvergence {}

fn solver_err(e: SolverError) -> anyhow::Error {
    match e {
        SolverError::NotConverged { .. } => NonConvergence(e.to_string()).into(),
        other => other.into(),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(f))
}

/// Writes `name` inside the output directory through `body`.
fn write_out(
    cfg: &PipelineConfig,
    name: &str,
    body: impl FnOnce(&mut BufWriter<File>) -> Result<()>,
) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.output).with_context(|| format!("cannot create {}", cfg.output.display()))?;
    let path = cfg.out(name);
    let f = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut w = BufWriter::new(f);
    body(&mut w).with_context(|| format!("writing {}", path.display()))?;
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn write_json<T: Serialize>(w: &mut impl Write, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut *w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn crawl(mut cfg: PipelineConfig, a: CrawlArgs) -> Result<()> {
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = a.$f { cfg.$f = v; })* };
    }
    set!(
        seed_url,
        allowed_host,
        max_pages,
        politeness_delay,
        max_concurrent_fetches,
        timeout,
        retries
    );
    if !a.skip_query_params.is_empty() {
        cfg.skip_query_params = a.skip_query_params;
    }
    if !a.skip_extensions.is_empty() {
        cfg.skip_extensions = a.skip_extensions;
    }
    if a.site_dir.is_some() {
        cfg.site_dir = a.site_dir;
    }
    if cfg.seed_url.is_empty() {
        bail!("no seed URL (set seed_url or pass --seed-url)");
    }
    let crawl_cfg = cfg.crawl_config();

    let fetcher: Box<dyn Fetcher> = match &cfg.site_dir {
        Some(dir) => {
            let host = url_host(&crawl_cfg.seed_url)
                .with_context(|| format!("seed URL {:?} has no host", crawl_cfg.seed_url))?;
            Box::new(DirectoryFetcher::new(dir, &host))
        }
        None => Box::new(HttpFetcher::new(Duration::from_millis(crawl_cfg.timeout))),
    };
    let result = run_crawl(&crawl_cfg, fetcher.as_ref())?;
    let graph = result.to_graph();
    write_out(&cfg, "edges.tsv", |w| Ok(write_edge_list(&graph, w)?))?;
    write_out(&cfg, "nodes.tsv", |w| Ok(write_node_table(graph.table(), w)?))?;
    write_out(&cfg, "fetch_errors.tsv", |w| Ok(result.write_errors_tsv(w)?))?;
    println!(
        "pages: {}\nedges: {}\nfetch errors: {}",
        result.pages.len(),
        graph.edge_count(),
        result.errors.len()
    );
    Ok(())
}

fn url_host(url: &str) -> Option<String> {
    let rest = url.split_once("://")?.1;
    let authority = rest.split(['/', '?', '#']).next()?;
    let host = authority.rsplit('@').next()?.split(':').next()?;
    (!host.is_empty()).then(|| host.to_ascii_lowercase())
}

pub fn ingest(mut cfg: PipelineConfig, a: IngestArgs) -> Result<()> {
    if a.log.is_some() {
        cfg.log = a.log;
    }
    if let Some(f) = a.log_format {
        cfg.log_format = f;
    }
    let format = cfg.log_format()?;
    let Some(log) = cfg.log.clone() else {
        bail!("no log file (set log or pass --log)");
    };
    let outcome =
        run_ingest(open(&log)?, format, &cfg.filter_rules()).with_context(|| format!("reading {}", log.display()))?;
    write_out(&cfg, "records.tsv", |w| Ok(write_records_tsv(&outcome.kept, w)?))?;
    write_out(&cfg, "drops.json", |w| write_json(w, &outcome.accounting))?;
    for e in outcome.parse_errors.iter().take(10) {
        eprintln!("warning: {e}");
    }
    let acc = outcome.accounting;
    println!(
        "lines: {}\nkept: {}\nparse_error: {}\nwrong_content_type: {}\nbad_response_code: {}\nadmin_path: {}\nbot_user_agent: {}\nself_referrer: {}",
        acc.total,
        acc.kept,
        acc.parse_error,
        acc.wrong_content_type,
        acc.bad_response_code,
        acc.admin_path,
        acc.bot_user_agent,
        acc.self_referrer
    );
    Ok(())
}

fn read_records(path: &Path) -> Result<Vec<LogRecord>> {
    let mut records = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let r = parse_log_line(&line, i + 1, LogFormat::Tsv).with_context(|| format!("in {}", path.display()))?;
        records.push(r);
    }
    Ok(records)
}

fn apply_graph_args(cfg: &mut PipelineConfig, g: GraphArgs) {
    if g.edges.is_some() {
        cfg.edges = g.edges;
    }
    if g.nodes.is_some() {
        cfg.nodes = g.nodes;
    }
}

fn load(cfg: &PipelineConfig) -> Result<LinkGraph> {
    let edges = cfg.edges_path();
    let graph =
        load_graph(&edges, cfg.nodes.as_deref()).with_context(|| format!("loading graph {}", edges.display()))?;
    if graph.is_empty() {
        bail!("graph {} has no pages", edges.display());
    }
    Ok(graph)
}

#[derive(Serialize)]
struct SessionSummary {
    records: usize,
    sessions: usize,
    bot_sessions: usize,
    transitions: u64,
    distinct_transitions: usize,
    teleportations: u64,
    visited_pages: usize,
    page_views: u64,
}

pub fn sessions(mut cfg: PipelineConfig, a: SessionsArgs) -> Result<()> {
    apply_graph_args(&mut cfg, a.graph);
    if let Some(d) = a.delta {
        cfg.session_delta = d;
    }
    let scfg = cfg.session_config();
    scfg.validate()?;
    let records_path = a.records.unwrap_or_else(|| cfg.out("records.tsv"));
    let records = read_records(&records_path)?;
    let graph = load(&cfg)?;

    let mut pages = graph.table().clone();
    let all = split_sessions(&records, &mut pages, &scfg);
    let total = all.len();
    let kept = filter_bot_sessions(all, &scfg);
    let counts = count_transitions(&kept, &graph);
    let views = count_pageviews(&records, &mut pages);
    let visited = visited_pages(&kept);

    write_out(&cfg, "sessions.jsonl", |w| Ok(write_sessions_jsonl(&kept, &pages, w)?))?;
    write_out(&cfg, "transitions.tsv", |w| {
        Ok(write_transitions_tsv(&counts, &pages, w)?)
    })?;
    write_out(&cfg, "pageviews.tsv", |w| Ok(write_pageviews_tsv(&views, &pages, w)?))?;
    write_out(&cfg, "visited.tsv", |w| {
        for &id in &visited {
            writeln!(w, "{}", pages.url(id))?;
        }
        Ok(())
    })?;
    let summary = SessionSummary {
        records: records.len(),
        sessions: kept.len(),
        bot_sessions: total - kept.len(),
        transitions: counts.total(),
        distinct_transitions: counts.len(),
        teleportations: counts.teleportations,
        visited_pages: visited.len(),
        page_views: views.total(),
    };
    write_out(&cfg, "session_summary.json", |w| write_json(w, &summary))?;
    println!(
        "sessions: {}\nbot sessions dropped: {}\ntransitions: {} ({} distinct)\nteleportations: {}\nvisited pages: {}\npage views: {}",
        summary.sessions,
        summary.bot_sessions,
        summary.transitions,
        summary.distinct_transitions,
        summary.teleportations,
        summary.visited_pages,
        summary.page_views
    );
    Ok(())
}

/// Observed usage aligned to the ids of `graph`. Pages absent from the graph
/// get ids past its end.
struct Usage {
    pages: PageTable,
    counts: TransitionCounts,
    visits: VisitVector,
}

fn load_usage(cfg: &PipelineConfig, u: &UsageArgs, graph: &LinkGraph) -> Result<Usage> {
    let mut pages = graph.table().clone();
    let tpath = u.transitions.clone().unwrap_or_else(|| cfg.out("transitions.tsv"));
    let counts = read_transitions_tsv(open(&tpath)?, &mut pages).with_context(|| format!("in {}", tpath.display()))?;
    let vpath = u.visited.clone().unwrap_or_else(|| cfg.out("visited.tsv"));
    let mut ids = Vec::new();
    for line in open(&vpath)?.lines() {
        let line = line.with_context(|| format!("reading {}", vpath.display()))?;
        let url = line.trim();
        if !url.is_empty() {
            ids.push(pages.intern(url));
        }
    }
    let visits = VisitVector::from_pages(graph.len(), ids);
    Ok(Usage { pages, counts, visits })
}

fn load_views(cfg: &PipelineConfig, u: &UsageArgs, pages: &mut PageTable) -> Result<PageViewCounts> {
    let path = u.pageviews.clone().unwrap_or_else(|| cfg.out("pageviews.tsv"));
    read_pageviews_tsv(open(&path)?, pages).with_context(|| format!("in {}", path.display()))
}

pub fn rank(mut cfg: PipelineConfig, a: RankArgs) -> Result<()> {
    apply_graph_args(&mut cfg, a.graph);
    if let Some(alpha) = a.alpha {
        cfg.alpha = alpha;
    }
    if let Some(s) = a.monte_carlo_steps {
        cfg.monte_carlo_steps = s;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let solver = cfg.solver_config();

    let dist = match a.model {
        SurferModel::Uniform => {
            let graph = load(&cfg)?;
            let dist = pagerank_power(&graph, &solver).map_err(solver_err)?;
            if cfg.monte_carlo_steps > 0 {
                let freq = monte_carlo_walk(&graph, solver.alpha, cfg.monte_carlo_steps, cfg.seed);
                let mut mc = dist.clone();
                for e in &mut mc.entries {
                    e.probability = freq[e.id.index()];
                }
                mc.convergence = None;
                write_out(&cfg, "mc_uniform.csv", |w| Ok(write_distribution_csv(&mc, w)?))?;
                println!(
                    "monte carlo: {} steps, seed {}, total variation {:.6e}",
                    cfg.monte_carlo_steps,
                    cfg.seed,
                    total_variation(&freq, &dist.probabilities())
                );
            }
            dist
        }
        SurferModel::Pragmatic => {
            let graph = load(&cfg)?;
            let usage = load_usage(&cfg, &a.usage, &graph)?;
            pragmatic_distribution(&graph, &usage.counts, &usage.visits, &solver).map_err(solver_err)?
        }
        SurferModel::Lateral => {
            let mut pages = PageTable::new();
            let views = load_views(&cfg, &a.usage, &mut pages)?;
            lateral_distribution(&views, &pages)?
        }
    };

    let name = format!("dist_{}.csv", a.model);
    write_out(&cfg, &name, |w| Ok(write_distribution_csv(&dist, w)?))?;
    println!("model: {}\npages: {}", a.model, dist.len());
    if let Some(c) = dist.convergence {
        println!("iterations: {}\nresidual: {:e}", c.iterations, c.residual);
    }
    Ok(())
}

pub fn compare(cfg: PipelineConfig, a: CompareArgs) -> Result<()> {
    let bins = a.bins.unwrap_or(cfg.heatmap_bins);
    let paths = [
        (SurferModel::Uniform, a.uniform),
        (SurferModel::Pragmatic, a.pragmatic),
        (SurferModel::Lateral, a.lateral),
    ];
    let mut dists: Vec<(SurferModel, StationaryDistribution)> = Vec::new();
    for (model, path) in paths {
        let path = path.unwrap_or_else(|| cfg.out(&format!("dist_{model}.csv")));
        let d = read_distribution_csv(open(&path)?, model).with_context(|| format!("in {}", path.display()))?;
        dists.push((model, d));
    }
    let labelled: Vec<(&str, &StationaryDistribution)> = dists.iter().map(|(m, d)| (m.name(), d)).collect();
    let report = run_compare(&labelled, bins)?;
    fs::create_dir_all(&cfg.output).with_context(|| format!("cannot create {}", cfg.output.display()))?;
    report
        .write_to_dir(&cfg.output)
        .with_context(|| format!("writing report into {}", cfg.output.display()))?;
    for m in &report.models {
        println!("gini {}: {:.6}", m.label, m.gini);
    }
    for p in &report.pairs {
        match p.pearson {
            Some(r) => println!("pearson {}/{}: {:.6} over {} pages", p.a, p.b, r, p.common_support_size),
            None => println!(
                "pearson {}/{}: undefined over {} pages",
                p.a, p.b, p.common_support_size
            ),
        }
    }
    Ok(())
}

pub fn sweep(mut cfg: PipelineConfig, a: SweepArgs) -> Result<()> {
    apply_graph_args(&mut cfg, a.graph);
    if !a.alphas.is_empty() {
        cfg.sweep_alphas = a.alphas;
    }
    if cfg.sweep_alphas.is_empty() {
        bail!("no damping factors to sweep");
    }
    let graph = load(&cfg)?;
    let mut usage = load_usage(&cfg, &a.usage, &graph)?;
    let views = load_views(&cfg, &a.usage, &mut usage.pages)?;
    let inputs = SweepInputs {
        graph: &graph,
        counts: &usage.counts,
        visits: &usage.visits,
        views: &views,
        pages: &usage.pages,
    };
    let rows = damping_sweep(&inputs, &cfg.sweep_alphas, &cfg.solver_config())?;
    write_out(&cfg, "sweep.csv", |w| Ok(write_sweep_csv(&rows, w)?))?;
    let failed: Vec<_> = rows.iter().filter(|r| !r.succeeded()).collect();
    for r in &failed {
        eprintln!(
            "warning: alpha {} failed: {}",
            r.alpha,
            r.error.as_deref().unwrap_or("")
        );
    }
    println!("rows: {}\nfailed: {}", rows.len(), failed.len());
    if failed.len() == rows.len() {
        let msg = "every damping factor failed";
        if rows.iter().any(|r| r.not_converged) {
            return Err(NonConvergence(msg.into()).into());
        }
        bail!(msg);
    }
    Ok(())
}
