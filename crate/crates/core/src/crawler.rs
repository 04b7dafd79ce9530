//! Breadth-first crawl of one site's internal link structure.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::thread;
use std::time::Duration;

use scraper::{Html, Selector};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::graph::{GraphBuilder, LinkGraph};
use crate::logmodel::normalize_url;

#[derive(Debug, Error)]
pub enum CrawlError {
    #[error("invalid crawl config: {0}")]
    InvalidConfig(String),
    #[error("seed {url} could not be fetched: {reason}")]
    SeedFailed { url: String, reason: String },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FetchError {
    #[error("not found")]
    NotFound,
    #[error("not an html page ({0})")]
    NotHtml(String),
    #[error("{0}")]
    Transport(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrawlConfig {
    pub seed_url: String,
    /// Host whose pages are followed; derived from the seed when empty.
    pub allowed_host: String,
    /// `key=value` query parameters marking pages that are never fetched.
    pub skip_query_params: Vec<String>,
    pub skip_extensions: Vec<String>,
    pub max_pages: usize,
    /// Pause between successive fetch batches, in milliseconds.
    pub politeness_delay: u64,
    pub max_concurrent_fetches: usize,
    /// Per-request timeout in milliseconds.
    pub timeout: u64,
    /// Extra attempts after a failed fetch.
    pub retries: u32,
}

impl Default for CrawlConfig {
    fn default() -> Self {
        Self {
            seed_url: String::new(),
            allowed_host: String::new(),
            skip_query_params: vec!["skin=raw".into()],
            skip_extensions: [".mp3", ".mp4", ".jpg", ".jpeg", ".png", ".gif", ".pdf", ".zip"]
                .map(String::from)
                .to_vec(),
            max_pages: 100_000,
            politeness_delay: 500,
            max_concurrent_fetches: 1,
            timeout: 30_000,
            retries: 1,
        }
    }
}

/// Source of page bodies.
pub trait Fetcher: Sync {
    fn fetch(&self, url: &str) -> Result<String, FetchError>;
}

/// Plain HTTP(S) GET; only `text/html` responses are accepted.
pub struct HttpFetcher {
    agent: ureq::Agent,
}

impl HttpFetcher {
    pub fn new(timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder().timeout_global(Some(timeout)).build();
        Self {
            agent: ureq::Agent::new_with_config(config),
        }
    }
}

impl Fetcher for HttpFetcher {
    fn fetch(&self, url: &str) -> Result<String, FetchError> {
        let mut resp = self.agent.get(url).call().map_err(|e| match e {
            ureq::Error::StatusCode(404) => FetchError::NotFound,
            other => FetchError::Transport(other.to_string()),
        })?;
        let ct = resp
            .headers()
            .get("content-type")
            .and_then(|v| v.to_str().ok())
            .unwrap_or("")
            .to_owned();
        if !ct.to_ascii_lowercase().starts_with("text/html") {
            return Err(FetchError::NotHtml(ct));
        }
        resp.body_mut()
            .read_to_string()
            .map_err(|e| FetchError::Transport(e.to_string()))
    }
}

/// Serves a site from local HTML files: `/` maps to `index.html` and `/a/b`
/// to `a/b.html` under `root`. Only URLs on `host` without a query resolve.
pub struct DirectoryFetcher {
    root: PathBuf,
    host: String,
}

impl DirectoryFetcher {
    pub fn new(root: impl Into<PathBuf>, host: &str) -> Self {
        Self {
            root: root.into(),
            host: host.to_ascii_lowercase(),
        }
    }
}

impl Fetcher for DirectoryFetcher {
    fn fetch(&self, url: &str) -> Result<String, FetchError> {
        let parsed = Url::parse(url).map_err(|e| FetchError::Transport(e.to_string()))?;
        if parsed.host_str() != Some(self.host.as_str()) || parsed.query().is_some() {
            return Err(FetchError::NotFound);
        }
        let path = parsed.path().trim_matches('/');
        let file = if path.is_empty() {
            self.root.join("index.html")
        } else {
            self.root.join(format!("{path}.html"))
        };
        fs::read_to_string(file).map_err(|_| FetchError::NotFound)
    }
}

/// Anchor targets of `html`, resolved against `base_url`, normalized and
/// deduplicated in document order. Non-HTTP schemes and unparseable hrefs
/// are skipped.
pub fn extract_links(html: &str, base_url: &str) -> Vec<String> {
    let Ok(base) = Url::parse(base_url) else {
        return Vec::new();
    };
    let doc = Html::parse_document(html);
    let anchors = Selector::parse("a[href]").expect("static selector");
    let mut seen = HashSet::new();
    let mut links = Vec::new();
    for a in doc.select(&anchors) {
        let Some(href) = a.value().attr("href") else { continue };
        let Ok(resolved) = base.join(href.trim()) else { continue };
        if !matches!(resolved.scheme(), "http" | "https") {
            continue;
        }
        if let Ok(url) = normalize_url(resolved.as_str()) {
            if seen.insert(url.clone()) {
                links.push(url);
            }
        }
    }
    links
}

fn host_of(url: &str) -> Option<String> {
    let host = Url::parse(url).ok()?.host_str()?.to_ascii_lowercase();
    Some(host.trim_start_matches("www.").to_owned())
}

struct LinkFilter<'a> {
    host: String,
    config: &'a CrawlConfig,
}

impl LinkFilter<'_> {
    fn accepts(&self, url: &str) -> bool {
        let Ok(parsed) = Url::parse(url) else { return false };
        if !matches!(parsed.scheme(), "http" | "https") {
            return false;
        }
        if parsed.host_str().map(|h| h.trim_start_matches("www.")) != Some(self.host.as_str()) {
            return false;
        }
        if let Some(query) = parsed.query() {
            let skip = query.split('&').any(|pair| {
                self.config
                    .skip_query_params
                    .iter()
                    .any(|marker| pair.eq_ignore_ascii_case(marker))
            });
            if skip {
                return false;
            }
        }
        let path = parsed.path().to_ascii_lowercase();
        !self
            .config
            .skip_extensions
            .iter()
            .any(|ext| path.ends_with(&ext.to_ascii_lowercase()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CrawlResult {
    /// Successfully fetched pages in fetch order.
    pub pages: Vec<String>,
    /// Links between fetched pages, grouped by source in fetch order.
    pub edges: Vec<(String, String)>,
    /// Pages that could not be fetched, with the reason.
    pub errors: Vec<(String, String)>,
}

impl CrawlResult {
    /// Graph whose ids follow fetch order.
    pub fn to_graph(&self) -> LinkGraph {
        let mut b = GraphBuilder::new();
        for p in &self.pages {
            b.add_node(p);
        }
        for (s, t) in &self.edges {
            b.add_edge(s, t, 1.0);
        }
        b.build()
    }

    pub fn write_errors_tsv<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (url, err) in &self.errors {
            writeln!(out, "{url}\t{}", err.replace(['\t', '\n'], " "))?;
        }
        Ok(())
    }
}

fn fetch_with_retry(fetcher: &dyn Fetcher, url: &str, retries: u32) -> Result<String, FetchError> {
    let mut last = fetcher.fetch(url);
    for _ in 0..retries {
        match &last {
            Err(FetchError::Transport(_)) => last = fetcher.fetch(url),
            _ => break,
        }
    }
    last
}

/// Breadth-first crawl from the seed.
///
/// Each frontier level is fetched in URL order, in batches of up to
/// `max_concurrent_fetches` requests separated by the politeness delay.
/// Results are merged in batch order, so the output does not depend on
/// fetch timing. Only links to pages that were themselves fetched become
/// edges.
pub fn crawl(config: &CrawlConfig, fetcher: &dyn Fetcher) -> Result<CrawlResult, CrawlError> {
    if config.max_pages == 0 {
        return Err(CrawlError::InvalidConfig("max_pages must be positive".into()));
    }
    let seed = normalize_url(&config.seed_url).map_err(|_| CrawlError::InvalidConfig("seed_url is empty".into()))?;
    let host = if config.allowed_host.is_empty() {
        host_of(&seed).ok_or_else(|| CrawlError::InvalidConfig(format!("seed {seed} has no host")))?
    } else {
        config
            .allowed_host
            .to_ascii_lowercase()
            .trim_start_matches("www.")
            .to_owned()
    };
    let filter = LinkFilter { host, config };
    let concurrency = config.max_concurrent_fetches.max(1);
    let delay = Duration::from_millis(config.politeness_delay);

    let mut result = CrawlResult::default();
    let mut outlinks: HashMap<String, Vec<String>> = HashMap::new();
    let mut enqueued: HashSet<String> = HashSet::from([seed.clone()]);
    let mut frontier = vec![seed.clone()];
    let mut first_batch = true;

    while !frontier.is_empty() && result.pages.len() < config.max_pages {
        let mut next = Vec::new();
        let mut cursor = 0;
        while cursor < frontier.len() && result.pages.len() < config.max_pages {
            let take = concurrency.min(config.max_pages - result.pages.len());
            let batch = &frontier[cursor..(cursor + take).min(frontier.len())];
            cursor += batch.len();
            if !first_batch && !delay.is_zero() {
                thread::sleep(delay);
            }
            first_batch = false;

            let bodies: Vec<Result<String, FetchError>> = if batch.len() == 1 {
                vec![fetch_with_retry(fetcher, &batch[0], config.retries)]
            } else {
                thread::scope(|s| {
                    let handles: Vec<_> = batch
                        .iter()
                        .map(|url| s.spawn(move || fetch_with_retry(fetcher, url, config.retries)))
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| {
                            h.join()
                                .unwrap_or_else(|_| Err(FetchError::Transport("fetch panicked".into())))
                        })
                        .collect()
                })
            };

            for (url, body) in batch.iter().zip(bodies) {
                match body {
                    Ok(html) => {
                        let links: Vec<String> = extract_links(&html, url)
                            .into_iter()
                            .filter(|l| filter.accepts(l))
                            .collect();
                        for l in &links {
                            if enqueued.insert(l.clone()) {
                                next.push(l.clone());
                            }
                        }
                        outlinks.insert(url.clone(), links);
                        result.pages.push(url.clone());
                    }
                    Err(e) if *url == seed => {
                        return Err(CrawlError::SeedFailed {
                            url: seed,
                            reason: e.to_string(),
                        })
                    }
                    Err(e) => result.errors.push((url.clone(), e.to_string())),
                }
            }
        }
        next.sort();
        frontier = next;
    }

    let fetched: HashSet<&String> = result.pages.iter().collect();
    let mut edges = Vec::new();
    for page in &result.pages {
        for target in &outlinks[page] {
            if fetched.contains(target) {
                edges.push((page.clone(), target.clone()));
            }
        }
    }
    result.edges = edges;
    Ok(result)
}
