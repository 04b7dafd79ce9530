//! Sessionization of filtered log records and the derived count tables.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{LinkGraph, PageId, PageTable};
use crate::logmodel::LogRecord;

const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
    #[error("row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    /// Maximum gap in seconds between two requests of one session.
    pub delta: i64,
    /// Split sessions at UTC midnight.
    pub midnight_cut: bool,
    pub min_clicks_for_referrer_check: usize,
    pub max_missing_referrer_fraction: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            delta: 1800,
            midnight_cut: true,
            min_clicks_for_referrer_check: 4,
            max_missing_referrer_fraction: 0.5,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), SessionError> {
        if self.delta <= 0 {
            return Err(SessionError::InvalidConfig(format!(
                "delta must be positive, got {}",
                self.delta
            )));
        }
        if !(0.0..=1.0).contains(&self.max_missing_referrer_fraction) {
            return Err(SessionError::InvalidConfig(format!(
                "max_missing_referrer_fraction must lie in [0, 1], got {}",
                self.max_missing_referrer_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Visit {
    pub timestamp: i64,
    pub page: PageId,
    pub referrer: Option<PageId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub session_key: String,
    pub visits: Vec<Visit>,
}

impl Session {
    pub fn len(&self) -> usize {
        self.visits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visits.is_empty()
    }

    pub fn missing_referrers(&self) -> usize {
        self.visits.iter().filter(|v| v.referrer.is_none()).count()
    }
}

fn utc_day(ts: i64) -> i64 {
    ts.div_euclid(SECONDS_PER_DAY)
}

/// True if a session boundary separates two consecutive requests.
pub fn is_boundary(prev: i64, next: i64, config: &SessionConfig) -> bool {
    next - prev > config.delta || (config.midnight_cut && utc_day(prev) != utc_day(next))
}

/// Splits each session key's request stream into sessions.
///
/// Keys are emitted in order of first appearance; requests within a key are
/// stably sorted by timestamp. URLs are interned into `pages`.
pub fn split_sessions(records: &[LogRecord], pages: &mut PageTable, config: &SessionConfig) -> Vec<Session> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, Vec<&LogRecord>> = HashMap::new();
    for r in records {
        groups
            .entry(r.session_key.as_str())
            .or_insert_with(|| {
                order.push(r.session_key.as_str());
                Vec::new()
            })
            .push(r);
    }

    let mut sessions = Vec::new();
    for key in order {
        let mut group = groups.remove(key).unwrap_or_default();
        group.sort_by_key(|r| r.timestamp);

        let mut current: Vec<Visit> = Vec::new();
        for r in group {
            if let Some(last) = current.last() {
                if is_boundary(last.timestamp, r.timestamp, config) {
                    sessions.push(Session {
                        session_key: key.to_owned(),
                        visits: std::mem::take(&mut current),
                    });
                }
            }
            current.push(Visit {
                timestamp: r.timestamp,
                page: pages.intern(&r.target),
                referrer: r.referrer.as_deref().map(|u| pages.intern(u)),
            });
        }
        if !current.is_empty() {
            sessions.push(Session {
                session_key: key.to_owned(),
                visits: current,
            });
        }
    }
    sessions
}

/// True if the session looks automated: long enough to be checked and with
/// strictly more than the allowed fraction of missing referrers.
pub fn is_bot_session(session: &Session, config: &SessionConfig) -> bool {
    let n = session.len();
    n >= config.min_clicks_for_referrer_check
        && session.missing_referrers() as f64 > config.max_missing_referrer_fraction * n as f64
}

pub fn filter_bot_sessions(sessions: Vec<Session>, config: &SessionConfig) -> Vec<Session> {
    sessions.into_iter().filter(|s| !is_bot_session(s, config)).collect()
}

/// Observed link-following transitions, keyed by `(from, to)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TransitionCounts {
    counts: BTreeMap<(PageId, PageId), u64>,
    /// Consecutive page pairs with no matching edge in the link graph.
    pub teleportations: u64,
}

impl TransitionCounts {
    pub fn add(&mut self, from: PageId, to: PageId, n: u64) {
        if n > 0 {
            *self.counts.entry((from, to)).or_insert(0) += n;
        }
    }

    pub fn get(&self, from: PageId, to: PageId) -> u64 {
        self.counts.get(&(from, to)).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = ((PageId, PageId), u64)> + '_ {
        self.counts.iter().map(|(&k, &v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }
}

/// Counts consecutive visit pairs that follow an edge of `graph`.
///
/// Page ids must come from a table that extends the graph's own table, so
/// ids below `graph.len()` denote graph nodes.
pub fn count_transitions(sessions: &[Session], graph: &LinkGraph) -> TransitionCounts {
    let mut counts = TransitionCounts::default();
    for s in sessions {
        for pair in s.visits.windows(2) {
            let (from, to) = (pair[0].page, pair[1].page);
            if graph.has_edge(from, to) {
                counts.add(from, to, 1);
            } else {
                counts.teleportations += 1;
            }
        }
    }
    counts
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PageViewCounts(BTreeMap<PageId, u64>);

impl PageViewCounts {
    pub fn add(&mut self, page: PageId, n: u64) {
        if n > 0 {
            *self.0.entry(page).or_insert(0) += n;
        }
    }

    pub fn get(&self, page: PageId) -> u64 {
        self.0.get(&page).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (PageId, u64)> + '_ {
        self.0.iter().map(|(&k, &v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.0.values().sum()
    }
}

pub fn count_pageviews(records: &[LogRecord], pages: &mut PageTable) -> PageViewCounts {
    let mut views = PageViewCounts::default();
    for r in records {
        views.add(pages.intern(&r.target), 1);
    }
    views
}

/// Pages that appear as a visit target in any session.
pub fn visited_pages(sessions: &[Session]) -> BTreeSet<PageId> {
    sessions.iter().flat_map(|s| s.visits.iter().map(|v| v.page)).collect()
}

#[derive(Serialize, Deserialize)]
struct VisitLine<'a> {
    timestamp: i64,
    page: &'a str,
    referrer: Option<&'a str>,
}

#[derive(Serialize)]
struct SessionLine<'a> {
    session_key: &'a str,
    visits: Vec<VisitLine<'a>>,
}

/// One JSON object per session with URLs resolved through `pages`.
pub fn write_sessions_jsonl<W: Write>(sessions: &[Session], pages: &PageTable, mut out: W) -> io::Result<()> {
    for s in sessions {
        let line = SessionLine {
            session_key: &s.session_key,
            visits: s
                .visits
                .iter()
                .map(|v| VisitLine {
                    timestamp: v.timestamp,
                    page: pages.url(v.page),
                    referrer: v.referrer.map(|r| pages.url(r)),
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_transitions_tsv<W: Write>(counts: &TransitionCounts, pages: &PageTable, mut out: W) -> io::Result<()> {
    for ((from, to), n) in counts.iter() {
        writeln!(out, "{}\t{}\t{}", pages.url(from), pages.url(to), n)?;
    }
    Ok(())
}

pub fn write_pageviews_tsv<W: Write>(views: &PageViewCounts, pages: &PageTable, mut out: W) -> io::Result<()> {
    for (page, n) in views.iter() {
        writeln!(out, "{}\t{}", pages.url(page), n)?;
    }
    Ok(())
}

fn data_rows<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String), SessionError>> {
    reader
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 1, l)).map_err(SessionError::from))
        .filter(|r| !matches!(r, Ok((_, l)) if l.trim().is_empty() || l.starts_with('#')))
}

fn parse_count(row: usize, s: &str) -> Result<u64, SessionError> {
    s.trim().parse().map_err(|_| SessionError::MalformedRow {
        row,
        reason: format!("invalid count {s:?}"),
    })
}

/// Reads `from<TAB>to<TAB>count` rows, interning URLs into `pages`.
pub fn read_transitions_tsv<R: BufRead>(reader: R, pages: &mut PageTable) -> Result<TransitionCounts, SessionError> {
    let mut counts = TransitionCounts::default();
    for row in data_rows(reader) {
        let (row, line) = row?;
        let cols: Vec<&str> = line.split('\t').collect();
        let [from, to, n] = cols.as_slice() else {
            return Err(SessionError::MalformedRow {
                row,
                reason: format!("expected 3 columns, got {}", cols.len()),
            });
        };
        let n = parse_count(row, n)?;
        let (from, to) = (pages.intern(from), pages.intern(to));
        counts.add(from, to, n);
    }
    Ok(counts)
}

/// Reads `url<TAB>count` rows, interning URLs into `pages`.
pub fn read_pageviews_tsv<R: BufRead>(reader: R, pages: &mut PageTable) -> Result<PageViewCounts, SessionError> {
    let mut views = PageViewCounts::default();
    for row in data_rows(reader) {
        let (row, line) = row?;
        let Some((url, n)) = line.split_once('\t') else {
            return Err(SessionError::MalformedRow {
                row,
                reason: "expected url<TAB>count".into(),
            });
        };
        let n = parse_count(row, n)?;
        views.add(pages.intern(url), n);
    }
    Ok(views)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphBuilder;
    use crate::logmodel::Method;
    use proptest::prelude::*;

    fn rec(key: &str, ts: i64, target: &str, referrer: Option<&str>) -> LogRecord {
        LogRecord {
            remote_ip: "10.0.0.1".into(),
            session_key: key.into(),
            timestamp: ts,
            method: Method::Get,
            target: target.into(),
            response_code: 200,
            content_type: "text/html".into(),
            referrer: referrer.map(String::from),
            user_agent: "Firefox".into(),
        }
    }

    fn split(records: &[LogRecord]) -> Vec<Session> {
        split_sessions(records, &mut PageTable::new(), &SessionConfig::default())
    }

    const NOON: i64 = 1_431_000_000 - 1_431_000_000 % 86_400 + 43_200;

    #[test]
    fn gap_at_threshold() {
        assert_eq!(
            split(&[rec("k", NOON, "/a", None), rec("k", NOON + 1799, "/b", None)]).len(),
            1
        );
        assert_eq!(
            split(&[rec("k", NOON, "/a", None), rec("k", NOON + 1800, "/b", None)]).len(),
            1
        );
        assert_eq!(
            split(&[rec("k", NOON, "/a", None), rec("k", NOON + 1801, "/b", None)]).len(),
            2
        );
    }

    #[test]
    fn midnight_cut() {
        let midnight = NOON + 43_200;
        let recs = [rec("k", midnight - 60, "/a", None), rec("k", midnight + 60, "/b", None)];
        assert_eq!(split(&recs).len(), 2);
        let cfg = SessionConfig {
            midnight_cut: false,
            ..SessionConfig::default()
        };
        assert_eq!(split_sessions(&recs, &mut PageTable::new(), &cfg).len(), 1);
    }

    #[test]
    fn keys_are_kept_apart_in_first_seen_order() {
        let recs = [
            rec("b", NOON + 5, "/x", None),
            rec("a", NOON, "/y", None),
            rec("b", NOON + 1, "/z", None),
        ];
        let sessions = split(&recs);
        assert_eq!(sessions.len(), 2);
        assert_eq!(sessions[0].session_key, "b");
        assert_eq!(
            sessions[0].visits.iter().map(|v| v.timestamp).collect::<Vec<_>>(),
            vec![NOON + 1, NOON + 5]
        );
        assert_eq!(sessions[1].session_key, "a");
    }

    fn session_with_missing(n: usize, missing: usize) -> Session {
        Session {
            session_key: "k".into(),
            visits: (0..n)
                .map(|i| Visit {
                    timestamp: i as i64,
                    page: PageId(i),
                    referrer: (i >= missing).then_some(PageId(0)),
                })
                .collect(),
        }
    }

    #[test]
    fn bot_session_rule() {
        let cfg = SessionConfig::default();
        assert!(is_bot_session(&session_with_missing(4, 3), &cfg));
        assert!(!is_bot_session(&session_with_missing(4, 2), &cfg));
        assert!(!is_bot_session(&session_with_missing(3, 3), &cfg));
        let kept = filter_bot_sessions(
            vec![
                session_with_missing(4, 3),
                session_with_missing(4, 2),
                session_with_missing(3, 3),
            ],
            &cfg,
        );
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn config_validation() {
        assert!(SessionConfig::default().validate().is_ok());
        assert!(SessionConfig {
            delta: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SessionConfig {
            max_missing_referrer_fraction: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    fn abc_graph() -> LinkGraph {
        let mut b = GraphBuilder::new();
        b.add_node("A");
        b.add_node("B");
        b.add_node("C");
        b.add_edge("A", "B", 1.0);
        b.build()
    }

    #[test]
    fn transitions_skip_teleportations() {
        let g = abc_graph();
        let mut pages = g.table().clone();
        let sessions = split_sessions(
            &[
                rec("k", NOON, "A", None),
                rec("k", NOON + 1, "B", Some("A")),
                rec("k", NOON + 2, "C", Some("B")),
            ],
            &mut pages,
            &SessionConfig::default(),
        );
        let counts = count_transitions(&sessions, &g);
        assert_eq!(counts.iter().collect::<Vec<_>>(), vec![((PageId(0), PageId(1)), 1)]);
        assert_eq!(counts.teleportations, 1);

        assert!(count_transitions(&[], &g).is_empty());

        let many: Vec<Session> = (0..3)
            .map(|i| Session {
                session_key: format!("s{i}"),
                visits: vec![
                    Visit {
                        timestamp: 0,
                        page: PageId(0),
                        referrer: None,
                    },
                    Visit {
                        timestamp: 1,
                        page: PageId(1),
                        referrer: Some(PageId(0)),
                    },
                ],
            })
            .collect();
        assert_eq!(count_transitions(&many, &g).get(PageId(0), PageId(1)), 3);
    }

    #[test]
    fn pages_outside_graph_are_teleportations() {
        let g = abc_graph();
        let mut pages = g.table().clone();
        let sessions = split_sessions(
            &[rec("k", NOON, "A", None), rec("k", NOON + 1, "Z", Some("A"))],
            &mut pages,
            &SessionConfig::default(),
        );
        let counts = count_transitions(&sessions, &g);
        assert!(counts.is_empty());
        assert_eq!(counts.teleportations, 1);
        assert_eq!(pages.get("Z"), Some(PageId(3)));
    }

    #[test]
    fn pageviews() {
        let mut pages = PageTable::new();
        let recs = [
            rec("k", 0, "A", None),
            rec("k", 1, "A", None),
            rec("j", 2, "B", None),
            rec("k", 3, "A", None),
        ];
        let views = count_pageviews(&recs, &mut pages);
        assert_eq!(views.get(pages.get("A").unwrap()), 3);
        assert_eq!(views.get(pages.get("B").unwrap()), 1);
        assert_eq!(views.total(), 4);
        assert!(count_pageviews(&[], &mut PageTable::new()).is_empty());

        let mut reversed = recs.to_vec();
        reversed.reverse();
        let mut pages2 = PageTable::new();
        let views2 = count_pageviews(&reversed, &mut pages2);
        for (p, n) in views.iter() {
            assert_eq!(views2.get(pages2.get(pages.url(p)).unwrap()), n);
        }
    }

    #[test]
    fn tsv_exports_read_back() {
        let mut pages = PageTable::new();
        let (a, b) = (pages.intern("http://x.org/a"), pages.intern("http://x.org/b"));
        let mut counts = TransitionCounts::default();
        counts.add(a, b, 3);
        counts.add(b, a, 1);
        let mut buf = Vec::new();
        write_transitions_tsv(&counts, &pages, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "http://x.org/a\thttp://x.org/b\t3\nhttp://x.org/b\thttp://x.org/a\t1\n"
        );
        let mut pages2 = pages.clone();
        let back = read_transitions_tsv(buf.as_slice(), &mut pages2).unwrap();
        assert_eq!(back.iter().collect::<Vec<_>>(), counts.iter().collect::<Vec<_>>());

        let mut views = PageViewCounts::default();
        views.add(b, 7);
        let mut buf = Vec::new();
        write_pageviews_tsv(&views, &pages, &mut buf).unwrap();
        let back = read_pageviews_tsv(buf.as_slice(), &mut pages2).unwrap();
        assert_eq!(back, views);

        assert!(read_pageviews_tsv("a\tb\n".as_bytes(), &mut pages2).is_err());
        assert!(read_transitions_tsv("a\tb\n".as_bytes(), &mut pages2).is_err());
    }

    #[test]
    fn sessions_jsonl() {
        let mut pages = PageTable::new();
        let sessions = split_sessions(
            &[rec("k", 5, "/a", None), rec("k", 6, "/b", Some("/a"))],
            &mut pages,
            &SessionConfig::default(),
        );
        let mut buf = Vec::new();
        write_sessions_jsonl(&sessions, &pages, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "{\"session_key\":\"k\",\"visits\":[{\"timestamp\":5,\"page\":\"/a\",\"referrer\":null},{\"timestamp\":6,\"page\":\"/b\",\"referrer\":\"/a\"}]}\n"
        );
    }

    proptest! {
        #[test]
        fn split_invariants(
            gaps in prop::collection::vec((0i64..5000, 0usize..3), 1..60),
            start in 0i64..200_000,
            delta in 1i64..4000,
            midnight_cut in any::<bool>(),
        ) {
            let cfg = SessionConfig { delta, midnight_cut, ..SessionConfig::default() };
            let mut ts = start;
            let mut records = Vec::new();
            for (i, (gap, key)) in gaps.iter().enumerate() {
                ts += gap;
                records.push(rec(&format!("k{key}"), ts, &format!("/p{}", i % 7), None));
            }
            let mut pages = PageTable::new();
            let sessions = split_sessions(&records, &mut pages, &cfg);

            for key in ["k0", "k1", "k2"] {
                let original: Vec<i64> = records.iter().filter(|r| r.session_key == key).map(|r| r.timestamp).collect();
                let mine: Vec<&Session> = sessions.iter().filter(|s| s.session_key == key).collect();
                let joined: Vec<i64> = mine.iter().flat_map(|s| s.visits.iter().map(|v| v.timestamp)).collect();
                prop_assert_eq!(&joined, &original);
                for s in &mine {
                    prop_assert!(!s.is_empty());
                    for w in s.visits.windows(2) {
                        prop_assert!(w[1].timestamp - w[0].timestamp <= delta);
                        prop_assert!(!is_boundary(w[0].timestamp, w[1].timestamp, &cfg));
                    }
                }
                for pair in mine.windows(2) {
                    let prev = pair[0].visits.last().unwrap().timestamp;
                    let next = pair[1].visits[0].timestamp;
                    prop_assert!(is_boundary(prev, next, &cfg));
                }
            }
        }

        #[test]
        fn transition_conservation(
            edges in prop::collection::vec((0usize..6, 0usize..6), 0..20),
            paths in prop::collection::vec(prop::collection::vec(0usize..8, 1..10), 0..10),
        ) {
            let mut b = GraphBuilder::new();
            for i in 0..6 {
                b.add_node(&format!("p{i}"));
            }
            for (s, t) in &edges {
                b.add_edge(&format!("p{s}"), &format!("p{t}"), 1.0);
            }
            let g = b.build();
            let sessions: Vec<Session> = paths
                .iter()
                .map(|p| Session {
                    session_key: "k".into(),
                    visits: p.iter().enumerate().map(|(i, &n)| Visit { timestamp: i as i64, page: PageId(n), referrer: None }).collect(),
                })
                .collect();
            let counts = count_transitions(&sessions, &g);
            let pairs: u64 = sessions.iter().map(|s| s.len() as u64 - 1).sum();
            prop_assert_eq!(counts.total() + counts.teleportations, pairs);
            for ((from, to), _) in counts.iter() {
                prop_assert!(g.has_edge(from, to));
            }
        }
    }
}
