//! Access-log ingestion: parsing, URL normalization and record filtering.
//!
//! The canonical on-disk layout is one request per line with nine
//! tab-separated columns:
//!
//! ```text
//! remote_ip  session_key  unix_timestamp_seconds  method  target_url
//! response_code  content_type  referrer_url_or_dash  user_agent
//! ```
//!
//! A JSON-lines variant carries the same fields under the [`LogRecord`]
//! field names. A referrer of `-` or the empty string means "absent".

use std::fmt;
use std::io::{self, BufRead, Write};
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LogError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("empty url")]
    EmptyUrl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LogFormat {
    #[default]
    Tsv,
    JsonLines,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum Method {
    Get,
    Post,
    Other(String),
}

impl From<String> for Method {
    fn from(s: String) -> Self {
        match s.as_str() {
            "GET" => Method::Get,
            "POST" => Method::Post,
            _ => Method::Other(s),
        }
    }
}

impl From<Method> for String {
    fn from(m: Method) -> Self {
        m.to_string()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Get => f.write_str("GET"),
            Method::Post => f.write_str("POST"),
            Method::Other(s) => f.write_str(s),
        }
    }
}

/// One parsed HTTP request. `target` and `referrer` are normalized URLs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub remote_ip: String,
    pub session_key: String,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: i64,
    pub method: Method,
    pub target: String,
    pub response_code: u16,
    pub content_type: String,
    pub referrer: Option<String>,
    pub user_agent: String,
}

impl LogRecord {
    /// Canonical 9-column TSV line (no trailing newline).
    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.remote_ip,
            self.session_key,
            self.timestamp,
            self.method,
            self.target,
            self.response_code,
            self.content_type,
            self.referrer.as_deref().unwrap_or("-"),
            self.user_agent
        )
    }
}

/// Canonicalizes a URL so that aliases of one page compare equal.
///
/// Lowercases scheme and host, strips leading `www.` labels from the host,
/// drops the fragment and trailing slashes of the path. The query string is
/// kept verbatim. A site-relative `/` stays `/`; an absolute URL whose path is
/// only `/` collapses to the bare origin.
pub fn normalize_url(url: &str) -> Result<String, LogError> {
    let url = url.trim();
    let url = url.split_once('#').map_or(url, |(u, _)| u);
    let (before_query, query) = match url.split_once('?') {
        Some((b, q)) => (b, Some(q)),
        None => (url, None),
    };

    let mut out = String::with_capacity(url.len());
    let path = match before_query.find("://") {
        Some(pos) => {
            let scheme = &before_query[..pos];
            let rest = &before_query[pos + 3..];
            let (authority, path) = rest.find('/').map_or((rest, ""), |i| rest.split_at(i));
            let (userinfo, hostport) = match authority.rsplit_once('@') {
                Some((u, h)) => (Some(u), h),
                None => (None, authority),
            };
            let mut host = hostport.to_ascii_lowercase();
            while let Some(stripped) = host.strip_prefix("www.") {
                host = stripped.to_owned();
            }
            out.push_str(&scheme.to_ascii_lowercase());
            out.push_str("://");
            if let Some(u) = userinfo {
                out.push_str(u);
                out.push('@');
            }
            out.push_str(&host);
            path.trim_end_matches('/')
        }
        None => {
            let trimmed = before_query.trim_end_matches('/');
            if trimmed.is_empty() && !before_query.is_empty() {
                "/"
            } else {
                trimmed
            }
        }
    };
    out.push_str(path);
    if let Some(q) = query {
        out.push('?');
        out.push_str(q);
    }
    if out.is_empty() {
        return Err(LogError::EmptyUrl);
    }
    Ok(out)
}

fn parse_referrer(raw: Option<&str>) -> Result<Option<String>, LogError> {
    match raw.map(str::trim) {
        None | Some("") | Some("-") => Ok(None),
        Some(r) => normalize_url(r).map(Some),
    }
}

#[derive(Deserialize)]
struct JsonRecord {
    remote_ip: String,
    session_key: String,
    timestamp: i64,
    method: String,
    target: String,
    response_code: u16,
    content_type: String,
    #[serde(default)]
    referrer: Option<String>,
    user_agent: String,
}

/// Parses one log line. `line_no` is only used for error reporting.
pub fn parse_log_line(line: &str, line_no: usize, format: LogFormat) -> Result<LogRecord, LogError> {
    let fail = |reason: String| LogError::Parse { line: line_no, reason };
    let line = line.trim_end_matches(['\r', '\n']);

    let raw = match format {
        LogFormat::Tsv => {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 9 {
                return Err(fail(format!("expected 9 tab-separated columns, got {}", cols.len())));
            }
            JsonRecord {
                remote_ip: cols[0].to_owned(),
                session_key: cols[1].to_owned(),
                timestamp: cols[2]
                    .trim()
                    .parse()
                    .map_err(|_| fail(format!("invalid timestamp {:?}", cols[2])))?,
                method: cols[3].to_owned(),
                target: cols[4].to_owned(),
                response_code: cols[5]
                    .trim()
                    .parse()
                    .map_err(|_| fail(format!("invalid response code {:?}", cols[5])))?,
                content_type: cols[6].to_owned(),
                referrer: Some(cols[7].to_owned()),
                user_agent: cols[8].to_owned(),
            }
        }
        LogFormat::JsonLines => serde_json::from_str(line).map_err(|e| fail(e.to_string()))?,
    };

    if raw.timestamp < 0 {
        return Err(fail(format!("negative timestamp {}", raw.timestamp)));
    }
    let target = normalize_url(&raw.target).map_err(|_| fail("empty target".into()))?;
    let referrer = parse_referrer(raw.referrer.as_deref()).map_err(|e| fail(e.to_string()))?;

    Ok(LogRecord {
        remote_ip: raw.remote_ip,
        session_key: raw.session_key,
        timestamp: raw.timestamp,
        method: Method::from(raw.method),
        target,
        response_code: raw.response_code,
        content_type: raw.content_type,
        referrer,
        user_agent: raw.user_agent,
    })
}

/// Record-level filters. The admin patterns are an approximation of edit
/// previews, uploads and feed requests and are expected to be tuned per site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterRules {
    pub allowed_content_type_prefix: String,
    pub required_response_code: u16,
    pub bot_ua_substrings: Vec<String>,
    pub admin_path_patterns: Vec<String>,
    pub drop_self_referrer: bool,
}

impl Default for FilterRules {
    fn default() -> Self {
        Self {
            allowed_content_type_prefix: "text/html".into(),
            required_response_code: 200,
            bot_ua_substrings: ["crawl", "slurp", "spider", "bot"].map(String::from).to_vec(),
            admin_path_patterns: [
                "preview",
                "edit.jsp",
                "action=edit",
                "upload",
                "/rss",
                "rss.jsp",
                "rss.xml",
                "rss.rdf",
                "/feed",
            ]
            .map(String::from)
            .to_vec(),
            drop_self_referrer: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DropReason {
    ParseError,
    WrongContentType,
    BadResponseCode,
    AdminPath,
    BotUserAgent,
    SelfReferrer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterOutcome {
    Keep,
    Drop(DropReason),
}

fn contains_ci(haystack: &str, needles: &[String]) -> bool {
    let haystack = haystack.to_lowercase();
    needles
        .iter()
        .any(|n| !n.is_empty() && haystack.contains(&n.to_lowercase()))
}

/// Applies the filters in fixed order and reports the first match.
pub fn filter_record(record: &LogRecord, rules: &FilterRules) -> FilterOutcome {
    let ct = record.content_type.trim().to_ascii_lowercase();
    if !ct.starts_with(&rules.allowed_content_type_prefix.to_ascii_lowercase()) {
        return FilterOutcome::Drop(DropReason::WrongContentType);
    }
    if record.response_code != rules.required_response_code {
        return FilterOutcome::Drop(DropReason::BadResponseCode);
    }
    let admin = contains_ci(&record.target, &rules.admin_path_patterns)
        || record
            .referrer
            .as_deref()
            .is_some_and(|r| contains_ci(r, &rules.admin_path_patterns));
    if admin {
        return FilterOutcome::Drop(DropReason::AdminPath);
    }
    if contains_ci(&record.user_agent, &rules.bot_ua_substrings) {
        return FilterOutcome::Drop(DropReason::BotUserAgent);
    }
    if rules.drop_self_referrer && record.referrer.as_deref() == Some(record.target.as_str()) {
        return FilterOutcome::Drop(DropReason::SelfReferrer);
    }
    FilterOutcome::Keep
}

/// Per-reason tallies. `total == kept + dropped()` after every update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropAccounting {
    pub total: u64,
    pub kept: u64,
    pub parse_error: u64,
    pub wrong_content_type: u64,
    pub bad_response_code: u64,
    pub admin_path: u64,
    pub bot_user_agent: u64,
    pub self_referrer: u64,
}

impl DropAccounting {
    pub fn record(&mut self, outcome: FilterOutcome) {
        self.total += 1;
        let slot = match outcome {
            FilterOutcome::Keep => &mut self.kept,
            FilterOutcome::Drop(DropReason::ParseError) => &mut self.parse_error,
            FilterOutcome::Drop(DropReason::WrongContentType) => &mut self.wrong_content_type,
            FilterOutcome::Drop(DropReason::BadResponseCode) => &mut self.bad_response_code,
            FilterOutcome::Drop(DropReason::AdminPath) => &mut self.admin_path,
            FilterOutcome::Drop(DropReason::BotUserAgent) => &mut self.bot_user_agent,
            FilterOutcome::Drop(DropReason::SelfReferrer) => &mut self.self_referrer,
        };
        *slot += 1;
    }

    pub fn dropped(&self) -> u64 {
        self.parse_error
            + self.wrong_content_type
            + self.bad_response_code
            + self.admin_path
            + self.bot_user_agent
            + self.self_referrer
    }
}

impl AddAssign for DropAccounting {
    fn add_assign(&mut self, o: Self) {
        self.total += o.total;
        self.kept += o.kept;
        self.parse_error += o.parse_error;
        self.wrong_content_type += o.wrong_content_type;
        self.bad_response_code += o.bad_response_code;
        self.admin_path += o.admin_path;
        self.bot_user_agent += o.bot_user_agent;
        self.self_referrer += o.self_referrer;
    }
}

#[derive(Debug, Default)]
pub struct IngestOutcome {
    pub kept: Vec<LogRecord>,
    pub accounting: DropAccounting,
    pub parse_errors: Vec<LogError>,
}

/// Streams a log, parsing and filtering each non-blank line.
///
/// Lines that are not valid UTF-8 count as parse errors. Blank lines are not
/// counted as input.
pub fn ingest<R: BufRead>(mut reader: R, format: LogFormat, rules: &FilterRules) -> io::Result<IngestOutcome> {
    let mut out = IngestOutcome::default();
    let mut buf = Vec::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        line_no += 1;
        let parsed = match std::str::from_utf8(&buf) {
            Ok(s) if s.trim().is_empty() => continue,
            Ok(s) => parse_log_line(s, line_no, format),
            Err(_) => Err(LogError::Parse {
                line: line_no,
                reason: "invalid utf-8".into(),
            }),
        };
        match parsed {
            Ok(record) => {
                let outcome = filter_record(&record, rules);
                out.accounting.record(outcome);
                if outcome == FilterOutcome::Keep {
                    out.kept.push(record);
                }
            }
            Err(e) => {
                out.accounting.record(FilterOutcome::Drop(DropReason::ParseError));
                out.parse_errors.push(e);
            }
        }
    }
    Ok(out)
}

pub fn write_records_tsv<W: Write>(records: &[LogRecord], mut out: W) -> io::Result<()> {
    for r in records {
        writeln!(out, "{}", r.to_tsv())?;
    }
    Ok(())
}
