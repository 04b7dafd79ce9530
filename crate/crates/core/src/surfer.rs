//! Stationary distributions of the uniform, pragmatic and lateral surfers.
//!
//! The transition matrix is `P = A D^-1`: column `j` holds the outgoing
//! weights of page `j` divided by its weighted out-degree, and is all zero for
//! a dangling page. The PageRank vector is the normalized solution of
//! `pi = D (D - alpha A)^-1 1`, which equals the fixed point of
//! `x <- alpha P x + (1 - alpha)/n`. Mass leaving through dangling pages only
//! changes the scale of that fixed point, so every result is renormalized to
//! sum to one.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{induced_visited_subgraph, out_degree, GraphError, LinkGraph, PageId, PageTable, VisitVector};
use crate::sessions::{PageViewCounts, TransitionCounts};

/// Largest graph accepted by the dense solver.
pub const MAX_DENSE_NODES: usize = 2000;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("damping factor {0} outside the admissible range")]
    InvalidAlpha(f64),
    #[error("power iteration did not converge after {iterations} iterations (last L1 change {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("dense solve limited to {max} nodes, graph has {n}")]
    TooLarge { n: usize, max: usize },
    #[error("linear system is singular")]
    Singular,
    #[error("no visited page has an edge to another visited page")]
    EmptyVisitedSet,
    #[error("page view counts are empty")]
    NoPageViews,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("distribution file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurferModel {
    Uniform,
    Pragmatic,
    Lateral,
}

impl SurferModel {
    pub const ALL: [SurferModel; 3] = [SurferModel::Uniform, SurferModel::Pragmatic, SurferModel::Lateral];

    pub fn name(self) -> &'static str {
        match self {
            SurferModel::Uniform => "uniform",
            SurferModel::Pragmatic => "pragmatic",
            SurferModel::Lateral => "lateral",
        }
    }
}

impl fmt::Display for SurferModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SurferModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(SurferModel::Uniform),
            "pragmatic" => Ok(SurferModel::Pragmatic),
            "lateral" => Ok(SurferModel::Lateral),
            other => Err(format!("unknown surfer model {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub alpha: f64,
    /// Stop once the L1 change between successive iterates is at most this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            alpha: 0.85,
            tolerance: 1e-12,
            max_iterations: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Convergence {
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PageProbability {
    pub id: PageId,
    pub url: String,
    pub probability: f64,
}

/// Probability vector over a page support. Entries sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDistribution {
    pub model: SurferModel,
    /// Damping factor; `None` for the lateral surfer.
    pub alpha: Option<f64>,
    pub entries: Vec<PageProbability>,
    /// Set by the power-iteration solver.
    pub convergence: Option<Convergence>,
}

impl StationaryDistribution {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.probability).collect()
    }

    pub fn get(&self, url: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.url == url).map(|e| e.probability)
    }

    fn over_graph(graph: &LinkGraph, model: SurferModel, alpha: Option<f64>, probs: Vec<f64>) -> Self {
        let entries = graph
            .table()
            .iter()
            .zip(probs)
            .map(|((id, url), probability)| PageProbability {
                id,
                url: url.to_owned(),
                probability,
            })
            .collect();
        Self {
            model,
            alpha,
            entries,
            convergence: None,
        }
    }
}

/// `1 + ln t` for observed transitions, 0 otherwise.
pub fn sublinear_scale(t: u64) -> f64 {
    if t == 0 {
        0.0
    } else {
        1.0 + (t as f64).ln()
    }
}

/// Column-(sub)stochastic transition matrix stored by target row, so one
/// power step is an independent dot product per page.
#[derive(Debug, Clone)]
pub struct TransitionMatrix {
    n: usize,
    row_start: Vec<usize>,
    sources: Vec<usize>,
    probs: Vec<f64>,
    dangling: Vec<bool>,
}

impl TransitionMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn is_dangling(&self, node: PageId) -> bool {
        self.dangling[node.0]
    }

    /// Transition probability from `from` to `to`.
    pub fn get(&self, to: PageId, from: PageId) -> f64 {
        let range = self.row_start[to.0]..self.row_start[to.0 + 1];
        self.sources[range.clone()]
            .iter()
            .zip(&self.probs[range])
            .filter(|(&s, _)| s == from.0)
            .map(|(_, &p)| p)
            .sum()
    }

    /// `dense[i][j]` = probability of moving from `j` to `i`.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.n]; self.n];
        for (i, row) in m.iter_mut().enumerate() {
            for k in self.row_start[i]..self.row_start[i + 1] {
                row[self.sources[k]] += self.probs[k];
            }
        }
        m
    }
}

pub fn build_transition_matrix(graph: &LinkGraph) -> TransitionMatrix {
    let n = graph.len();
    let degrees: Vec<f64> = (0..n)
        .map(|j| out_degree(graph, PageId(j)).expect("node in range"))
        .collect();

    let mut incoming: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (s, t, w) in graph.edges() {
        incoming[t.0].push((s.0, w / degrees[s.0]));
    }

    let mut row_start = Vec::with_capacity(n + 1);
    let mut sources = Vec::with_capacity(graph.edge_count());
    let mut probs = Vec::with_capacity(graph.edge_count());
    row_start.push(0);
    for row in incoming {
        for (s, p) in row {
            sources.push(s);
            probs.push(p);
        }
        row_start.push(sources.len());
    }
    TransitionMatrix {
        n,
        row_start,
        sources,
        probs,
        dangling: degrees.iter().map(|&d| d <= 0.0).collect(),
    }
}

/// Power iteration `x <- alpha P x + (1 - alpha)/n`, started at `1/n`.
pub struct PowerIteration<'a> {
    matrix: &'a TransitionMatrix,
    alpha: f64,
    x: Vec<f64>,
    next: Vec<f64>,
    iterations: usize,
}

impl<'a> PowerIteration<'a> {
    pub fn new(matrix: &'a TransitionMatrix, alpha: f64) -> Self {
        let n = matrix.len();
        Self {
            matrix,
            alpha,
            x: vec![1.0 / n as f64; n],
            next: vec![0.0; n],
            iterations: 0,
        }
    }

    /// Advances one iteration and returns the L1 change.
    pub fn step(&mut self) -> f64 {
        let m = self.matrix;
        let alpha = self.alpha;
        let base = (1.0 - alpha) / m.n as f64;
        let x = &self.x;
        self.next.par_iter_mut().enumerate().for_each(|(i, out)| {
            let range = m.row_start[i]..m.row_start[i + 1];
            let dot: f64 = m.sources[range.clone()]
                .iter()
                .zip(&m.probs[range])
                .map(|(&j, &p)| p * x[j])
                .sum();
            *out = base + alpha * dot;
        });
        std::mem::swap(&mut self.x, &mut self.next);
        self.iterations += 1;
        self.x.iter().zip(&self.next).map(|(a, b)| (a - b).abs()).sum()
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Current iterate (not normalized).
    pub fn state(&self) -> &[f64] {
        &self.x
    }
}

fn normalize(mut x: Vec<f64>) -> Vec<f64> {
    let total: f64 = x.iter().sum();
    for v in &mut x {
        *v /= total;
    }
    x
}

fn check_alpha(alpha: f64, upper_inclusive: bool) -> Result<(), SolverError> {
    let ok = alpha >= 0.0 && if upper_inclusive { alpha <= 1.0 } else { alpha < 1.0 };
    if ok {
        Ok(())
    } else {
        Err(SolverError::InvalidAlpha(alpha))
    }
}

fn power(graph: &LinkGraph, config: &SolverConfig, model: SurferModel) -> Result<StationaryDistribution, SolverError> {
    if graph.is_empty() {
        return Err(SolverError::EmptyGraph);
    }
    check_alpha(config.alpha, false)?;
    let matrix = build_transition_matrix(graph);
    let mut it = PowerIteration::new(&matrix, config.alpha);
    let mut residual = f64::INFINITY;
    while it.iterations() < config.max_iterations {
        residual = it.step();
        if residual <= config.tolerance {
            let probs = normalize(it.state().to_vec());
            let mut dist = StationaryDistribution::over_graph(graph, model, Some(config.alpha), probs);
            dist.convergence = Some(Convergence {
                iterations: it.iterations(),
                residual,
            });
            return Ok(dist);
        }
    }
    Err(SolverError::NotConverged {
        iterations: it.iterations(),
        residual,
    })
}

/// PageRank of the uniform surfer on `graph` by power iteration.
pub fn pagerank_power(graph: &LinkGraph, config: &SolverConfig) -> Result<StationaryDistribution, SolverError> {
    power(graph, config, SurferModel::Uniform)
}

/// Dense LU solve of `(D - alpha A) y = 1`, `pi = D y`, normalized.
///
/// Independent of the transition matrix and iteration above; used as the
/// reference solution on small graphs.
pub fn pagerank_solve(graph: &LinkGraph, alpha: f64) -> Result<StationaryDistribution, SolverError> {
    let n = graph.len();
    if n == 0 {
        return Err(SolverError::EmptyGraph);
    }
    if n > MAX_DENSE_NODES {
        return Err(SolverError::TooLarge {
            n,
            max: MAX_DENSE_NODES,
        });
    }
    check_alpha(alpha, true)?;

    let mut d = vec![0.0; n];
    let mut system = DMatrix::<f64>::zeros(n, n);
    for (s, t, w) in graph.edges() {
        d[s.0] += w;
        system[(t.0, s.0)] -= alpha * w;
    }
    for (j, dj) in d.iter_mut().enumerate() {
        if *dj == 0.0 {
            *dj = 1.0;
        }
        system[(j, j)] += *dj;
    }

    let y = system
        .lu()
        .solve(&DVector::from_element(n, 1.0))
        .ok_or(SolverError::Singular)?;
    let pi: Vec<f64> = y.iter().zip(&d).map(|(yi, di)| yi * di).collect();
    if pi.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::Singular);
    }
    Ok(StationaryDistribution::over_graph(
        graph,
        SurferModel::Uniform,
        Some(alpha),
        normalize(pi),
    ))
}

/// PageRank on the visited subgraph with transition-count-biased weights.
///
/// Entries carry the ids of `unweighted`; pages outside the induced subgraph
/// are absent from the support.
pub fn pragmatic_distribution(
    unweighted: &LinkGraph,
    counts: &TransitionCounts,
    visits: &VisitVector,
    config: &SolverConfig,
) -> Result<StationaryDistribution, SolverError> {
    let sub = induced_visited_subgraph(unweighted, counts, visits)?;
    if sub.graph.is_empty() {
        return Err(SolverError::EmptyVisitedSet);
    }
    let mut dist = power(&sub.graph, config, SurferModel::Pragmatic)?;
    for e in &mut dist.entries {
        e.id = sub.original[e.id.0];
    }
    Ok(dist)
}

/// Normalized page views, in page-id order.
pub fn lateral_distribution(views: &PageViewCounts, pages: &PageTable) -> Result<StationaryDistribution, SolverError> {
    let total = views.total();
    if total == 0 {
        return Err(SolverError::NoPageViews);
    }
    let entries = views
        .iter()
        .map(|(id, n)| PageProbability {
            id,
            url: pages.url(id).to_owned(),
            probability: n as f64 / total as f64,
        })
        .collect();
    Ok(StationaryDistribution {
        model: SurferModel::Lateral,
        alpha: None,
        entries,
        convergence: None,
    })
}

/// Simulates a surfer for `steps` moves and returns visit frequencies per page.
///
/// Each step teleports to a uniformly random page with probability
/// `1 - alpha`, and always from a dangling page; otherwise it follows an
/// out-edge chosen proportionally to its weight. The start page is uniform.
pub fn monte_carlo_walk(graph: &LinkGraph, alpha: f64, steps: u64, rng_seed: u64) -> Vec<f64> {
    let n = graph.len();
    if n == 0 || steps == 0 {
        return vec![0.0; n];
    }
    let choosers: Vec<Option<WeightedIndex<f64>>> = (0..n)
        .map(|j| {
            let edges = graph.out_edges(PageId(j));
            if edges.is_empty() {
                None
            } else {
                WeightedIndex::new(edges.iter().map(|&(_, w)| w)).ok()
            }
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut visits = vec![0u64; n];
    let mut at = rng.random_range(0..n);
    for _ in 0..steps {
        at = match &choosers[at] {
            Some(chooser) if rng.random::<f64>() < alpha => graph.out_edges(PageId(at))[chooser.sample(&mut rng)].0 .0,
            _ => rng.random_range(0..n),
        };
        visits[at] += 1;
    }
    visits.into_iter().map(|c| c as f64 / steps as f64).collect()
}

/// Writes `page_id,url,probability` rows with 17 significant digits.
pub fn write_distribution_csv<W: Write>(dist: &StationaryDistribution, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["page_id", "url", "probability"])?;
    for e in &dist.entries {
        w.write_record([e.id.to_string(), e.url.clone(), format!("{:.16e}", e.probability)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_distribution_csv<R: Read>(input: R, model: SurferModel) -> Result<StationaryDistribution, SolverError> {
    let mut r = csv::Reader::from_reader(input);
    let mut entries = Vec::new();
    let mut seen = HashMap::new();
    for (i, rec) in r.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| SolverError::Format(e.to_string()))?;
        if rec.len() != 3 {
            return Err(SolverError::Format(format!("row {row}: expected 3 columns")));
        }
        let id: usize = rec[0]
            .parse()
            .map_err(|_| SolverError::Format(format!("row {row}: invalid page_id {:?}", &rec[0])))?;
        let probability: f64 = rec[2]
            .parse()
            .map_err(|_| SolverError::Format(format!("row {row}: invalid probability {:?}", &rec[2])))?;
        if !(probability.is_finite() && probability >= 0.0) {
            return Err(SolverError::Format(format!("row {row}: probability out of range")));
        }
        if seen.insert(rec[1].to_owned(), row).is_some() {
            return Err(SolverError::Format(format!("row {row}: duplicate url {:?}", &rec[1])));
        }
        entries.push(PageProbability {
            id: PageId(id),
            url: rec[1].to_owned(),
            probability,
        });
    }
    Ok(StationaryDistribution {
        model,
        alpha: None,
        entries,
        convergence: None,
    })
}
