//! Random-surfer models of site navigation.
//!
//! The pipeline turns web-server access logs and a crawled link graph into
//! three stationary distributions over pages:
//!
//! * **uniform**: PageRank on the unweighted crawl graph,
//! * **pragmatic**: PageRank on the visited subgraph with link weights biased
//!   by sublinearly scaled user transition counts,
//! * **lateral**: normalized page-view counts,
//!
//! and compares them with Pearson correlation, importance ratios, log-binned
//! heatmaps, Gini coefficients and Lorenz curves.

pub mod crawler;
pub mod graph;
pub mod logmodel;
pub mod metrics;
pub mod sessions;
pub mod surfer;

pub use graph::{LinkGraph, PageId, PageTable, VisitVector};
pub use logmodel::{normalize_url, LogRecord};
pub use sessions::{PageViewCounts, Session, TransitionCounts};
pub use surfer::{SolverConfig, StationaryDistribution, SurferModel};
