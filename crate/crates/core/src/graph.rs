//! Directed site link graph with URL interning.
//!
//! Edges are stored per source node as `(target, weight)` lists. With the
//! column convention `A[i][j] > 0` iff `j` links to `i`, the out-edge list
//! of `j` is column `j` of the weighted adjacency matrix.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sessions::TransitionCounts;
use crate::surfer::sublinear_scale;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("node {node} out of range (graph has {len} nodes)")]
    NodeOutOfRange { node: usize, len: usize },
    #[error("transition count on {from} -> {to} does not correspond to an edge")]
    CountOnNonEdge { from: String, to: String },
}

/// Dense page index into a [`PageTable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PageId(pub usize);

impl PageId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for PageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Bidirectional URL <-> [`PageId`] map. Ids are assigned in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PageTable {
    urls: Vec<String>,
    ids: HashMap<String, PageId>,
}

impl PageTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, url: &str) -> PageId {
        if let Some(&id) = self.ids.get(url) {
            return id;
        }
        let id = PageId(self.urls.len());
        self.urls.push(url.to_owned());
        self.ids.insert(url.to_owned(), id);
        id
    }

    pub fn get(&self, url: &str) -> Option<PageId> {
        self.ids.get(url).copied()
    }

    /// Panics if `id` was not issued by this table.
    pub fn url(&self, id: PageId) -> &str {
        &self.urls[id.0]
    }

    pub fn len(&self) -> usize {
        self.urls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.urls.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (PageId, &str)> {
        self.urls.iter().enumerate().map(|(i, u)| (PageId(i), u.as_str()))
    }
}

/// Immutable weighted directed graph over interned URLs.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkGraph {
    table: PageTable,
    out_edges: Vec<Vec<(PageId, f64)>>,
}

impl LinkGraph {
    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn table(&self) -> &PageTable {
        &self.table
    }

    pub fn url(&self, id: PageId) -> &str {
        self.table.url(id)
    }

    pub fn out_edges(&self, node: PageId) -> &[(PageId, f64)] {
        &self.out_edges[node.0]
    }

    pub fn edge_count(&self) -> usize {
        self.out_edges.iter().map(Vec::len).sum()
    }

    pub fn has_edge(&self, from: PageId, to: PageId) -> bool {
        from.0 < self.len() && self.out_edges[from.0].iter().any(|&(t, _)| t == to)
    }

    pub fn edge_weight(&self, from: PageId, to: PageId) -> Option<f64> {
        self.out_edges
            .get(from.0)?
            .iter()
            .find(|&&(t, _)| t == to)
            .map(|&(_, w)| w)
    }

    /// All edges as `(source, target, weight)` in source-id then insertion order.
    pub fn edges(&self) -> impl Iterator<Item = (PageId, PageId, f64)> + '_ {
        self.out_edges
            .iter()
            .enumerate()
            .flat_map(|(s, list)| list.iter().map(move |&(t, w)| (PageId(s), t, w)))
    }

    /// Same topology with every edge weight set to 1.
    pub fn unweighted(&self) -> LinkGraph {
        LinkGraph {
            table: self.table.clone(),
            out_edges: self
                .out_edges
                .iter()
                .map(|list| list.iter().map(|&(t, _)| (t, 1.0)).collect())
                .collect(),
        }
    }
}

/// Incremental [`LinkGraph`] construction. Parallel edges collapse into the
/// first one seen; self-loops are kept.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    table: PageTable,
    out_edges: Vec<Vec<(PageId, f64)>>,
    seen: HashSet<(PageId, PageId)>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Starts from an existing node table (ids preserved).
    pub fn with_table(table: PageTable) -> Self {
        let n = table.len();
        Self {
            table,
            out_edges: vec![Vec::new(); n],
            seen: HashSet::new(),
        }
    }

    pub fn add_node(&mut self, url: &str) -> PageId {
        let id = self.table.intern(url);
        if id.0 == self.out_edges.len() {
            self.out_edges.push(Vec::new());
        }
        id
    }

    /// Returns `false` if the edge already existed (weight left unchanged).
    ///
    /// Panics on a non-positive or non-finite weight.
    pub fn add_edge(&mut self, from: &str, to: &str, weight: f64) -> bool {
        let s = self.add_node(from);
        let t = self.add_node(to);
        self.add_edge_ids(s, t, weight)
    }

    pub fn add_edge_ids(&mut self, from: PageId, to: PageId, weight: f64) -> bool {
        assert!(
            weight.is_finite() && weight > 0.0,
            "edge weight must be positive, got {weight}"
        );
        if !self.seen.insert((from, to)) {
            return false;
        }
        self.out_edges[from.0].push((to, weight));
        true
    }

    pub fn build(self) -> LinkGraph {
        LinkGraph {
            table: self.table,
            out_edges: self.out_edges,
        }
    }
}

/// Sum of outgoing edge weights of `node`.
pub fn out_degree(graph: &LinkGraph, node: PageId) -> Result<f64, GraphError> {
    if node.0 >= graph.len() {
        return Err(GraphError::NodeOutOfRange {
            node: node.0,
            len: graph.len(),
        });
    }
    Ok(graph.out_edges[node.0].iter().map(|&(_, w)| w).sum())
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> GraphError + '_ {
    move |source| GraphError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Reads a 2- or 3-column TSV edge list (`source`, `target`, optional `weight`).
///
/// Blank lines and lines starting with `#` are skipped. Row numbers in errors
/// are 1-based physical line numbers.
pub fn parse_edge_list<R: BufRead>(reader: R, builder: &mut GraphBuilder) -> Result<(), GraphError> {
    for (idx, line) in reader.lines().enumerate() {
        let row = idx + 1;
        let line = line.map_err(|e| GraphError::MalformedRow {
            row,
            reason: e.to_string(),
        })?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let (src, tgt, weight) = match cols.as_slice() {
            [s, t] => (*s, *t, 1.0),
            [s, t, w] => {
                let w: f64 = w.trim().parse().map_err(|_| GraphError::MalformedRow {
                    row,
                    reason: format!("invalid weight {w:?}"),
                })?;
                if !(w.is_finite() && w > 0.0) {
                    return Err(GraphError::MalformedRow {
                        row,
                        reason: format!("weight must be positive, got {w}"),
                    });
                }
                (*s, *t, w)
            }
            _ => {
                return Err(GraphError::MalformedRow {
                    row,
                    reason: format!("expected 2 or 3 tab-separated columns, got {}", cols.len()),
                })
            }
        };
        if src.is_empty() || tgt.is_empty() {
            return Err(GraphError::MalformedRow {
                row,
                reason: "empty url".into(),
            });
        }
        builder.add_edge(src, tgt, weight);
    }
    Ok(())
}

pub fn load_edge_list(path: impl AsRef<Path>) -> Result<LinkGraph, GraphError> {
    load_graph(path, None::<&Path>)
}

/// Loads an edge list, optionally preceded by a node table that fixes ids
/// (and may contain isolated nodes).
pub fn load_graph(edges: impl AsRef<Path>, nodes: Option<impl AsRef<Path>>) -> Result<LinkGraph, GraphError> {
    let mut builder = match nodes {
        Some(p) => {
            let p = p.as_ref();
            let file = File::open(p).map_err(io_err(p))?;
            GraphBuilder::with_table(parse_node_table(BufReader::new(file))?)
        }
        None => GraphBuilder::new(),
    };
    let path = edges.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    parse_edge_list(BufReader::new(file), &mut builder)?;
    Ok(builder.build())
}

/// Reads a `id<TAB>url` node table. Ids must be `0..n` in order.
pub fn parse_node_table<R: BufRead>(reader: R) -> Result<PageTable, GraphError> {
    let mut table = PageTable::new();
    for (idx, line) in reader.lines().enumerate() {
        let row = idx + 1;
        let line = line.map_err(|e| GraphError::MalformedRow {
            row,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, url) = line.split_once('\t').ok_or_else(|| GraphError::MalformedRow {
            row,
            reason: "expected id<TAB>url".into(),
        })?;
        let id: usize = id.trim().parse().map_err(|_| GraphError::MalformedRow {
            row,
            reason: format!("invalid id {id:?}"),
        })?;
        if id != table.len() || table.get(url).is_some() {
            return Err(GraphError::MalformedRow {
                row,
                reason: format!("node ids must be dense and unique, expected {}", table.len()),
            });
        }
        table.intern(url);
    }
    Ok(table)
}

/// Writes the edge list; the weight column appears only for weights != 1.
pub fn write_edge_list<W: Write>(graph: &LinkGraph, mut out: W) -> io::Result<()> {
    for (s, t, w) in graph.edges() {
        if w == 1.0 {
            writeln!(out, "{}\t{}", graph.url(s), graph.url(t))?;
        } else {
            writeln!(out, "{}\t{}\t{}", graph.url(s), graph.url(t), w)?;
        }
    }
    Ok(())
}

pub fn write_node_table<W: Write>(table: &PageTable, mut out: W) -> io::Result<()> {
    for (id, url) in table.iter() {
        writeln!(out, "{id}\t{url}")?;
    }
    Ok(())
}

/// Per-page "visited at least once" flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisitVector(Vec<bool>);

impl VisitVector {
    pub fn none(n: usize) -> Self {
        Self(vec![false; n])
    }

    pub fn all(n: usize) -> Self {
        Self(vec![true; n])
    }

    /// Ids at or beyond `n` (pages outside the graph) are ignored.
    pub fn from_pages(n: usize, pages: impl IntoIterator<Item = PageId>) -> Self {
        let mut v = Self::none(n);
        for p in pages {
            if p.0 < n {
                v.0[p.0] = true;
            }
        }
        v
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_visited(&self, page: PageId) -> bool {
        self.0.get(page.0).copied().unwrap_or(false)
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&v| v).count()
    }

    pub fn visited(&self) -> impl Iterator<Item = PageId> + '_ {
        self.0.iter().enumerate().filter(|(_, &v)| v).map(|(i, _)| PageId(i))
    }
}

/// Subgraph with dense ids plus the map back to the parent graph's ids.
#[derive(Debug, Clone)]
pub struct InducedSubgraph {
    pub graph: LinkGraph,
    /// `original[sub_id]` is the parent-graph id of subgraph node `sub_id`.
    pub original: Vec<PageId>,
}

/// Builds the pragmatic surfer's weighted adjacency `V (A_u + C) V` with
/// zero rows and columns removed.
///
/// Every edge of `unweighted` between two visited pages is kept with weight
/// `1 + c`, where `c` is the sublinearly scaled transition count (0 when the
/// edge was never traversed). Visited pages without any edge among visited
/// pages are dropped. Surviving pages keep their relative id order.
pub fn induced_visited_subgraph(
    unweighted: &LinkGraph,
    counts: &TransitionCounts,
    visits: &VisitVector,
) -> Result<InducedSubgraph, GraphError> {
    for ((from, to), _) in counts.iter() {
        if !unweighted.has_edge(from, to) {
            let url = |p: PageId| {
                if p.0 < unweighted.len() {
                    unweighted.url(p).to_owned()
                } else {
                    format!("#{p}")
                }
            };
            return Err(GraphError::CountOnNonEdge {
                from: url(from),
                to: url(to),
            });
        }
    }

    let n = unweighted.len();
    let mut touched = vec![false; n];
    for (s, t, _) in unweighted.edges() {
        if visits.is_visited(s) && visits.is_visited(t) {
            touched[s.0] = true;
            touched[t.0] = true;
        }
    }

    let mut table = PageTable::new();
    let mut original = Vec::new();
    let mut remap = vec![None; n];
    for (id, url) in unweighted.table().iter() {
        if touched[id.0] {
            remap[id.0] = Some(table.intern(url));
            original.push(id);
        }
    }

    let mut out_edges = vec![Vec::new(); table.len()];
    for (s, t, _) in unweighted.edges() {
        if let (Some(ns), Some(nt)) = (remap[s.0], remap[t.0]) {
            let scaled = sublinear_scale(counts.get(s, t));
            out_edges[ns.0].push((nt, 1.0 + scaled));
        }
    }

    Ok(InducedSubgraph {
        graph: LinkGraph { table, out_edges },
        original,
    })
}
