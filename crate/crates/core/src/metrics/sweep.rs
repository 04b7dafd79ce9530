use std::io::{self, Write};

use rayon::prelude::*;

use super::report::fmt_f64;
use super::{align_supports, gini, pearson};
use crate::graph::{LinkGraph, PageTable, VisitVector};
use crate::sessions::{PageViewCounts, TransitionCounts};
use crate::surfer::{
    lateral_distribution, pagerank_power, pragmatic_distribution, SolverConfig, SolverError, StationaryDistribution,
};

pub struct SweepInputs<'a> {
    pub graph: &'a LinkGraph,
    pub counts: &'a TransitionCounts,
    pub visits: &'a VisitVector,
    pub views: &'a PageViewCounts,
    /// Table resolving the ids in `views`.
    pub pages: &'a PageTable,
}

/// One damping factor's correlations and Gini values. Cells are `None` when
/// undefined (e.g. correlation against a constant vector) or when the row
/// failed; `error` holds the solver failure.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub alpha: f64,
    pub rho_uniform_pragmatic: Option<f64>,
    pub rho_uniform_lateral: Option<f64>,
    pub rho_pragmatic_lateral: Option<f64>,
    pub gini_uniform: Option<f64>,
    pub gini_pragmatic: Option<f64>,
    pub gini_lateral: Option<f64>,
    pub error: Option<String>,
    /// Set when a failure was power-iteration non-convergence.
    pub not_converged: bool,
}

impl SweepRow {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }
}

fn correlation(a: &StationaryDistribution, b: &StationaryDistribution) -> Option<f64> {
    let norm = align_supports(a, b).ok()?.renormalized();
    pearson(&norm.a, &norm.b).ok()
}

fn gini_of(d: &StationaryDistribution) -> Option<f64> {
    gini(&d.probabilities()).ok()
}

fn row(inputs: &SweepInputs<'_>, lateral: &StationaryDistribution, alpha: f64, base: &SolverConfig) -> SweepRow {
    let cfg = SolverConfig { alpha, ..*base };
    let uniform = pagerank_power(inputs.graph, &cfg);
    let pragmatic = pragmatic_distribution(inputs.graph, inputs.counts, inputs.visits, &cfg);
    let mut r = SweepRow {
        alpha,
        rho_uniform_pragmatic: None,
        rho_uniform_lateral: None,
        rho_pragmatic_lateral: None,
        gini_uniform: None,
        gini_pragmatic: None,
        gini_lateral: gini_of(lateral),
        error: None,
        not_converged: false,
    };
    let mut errors: Vec<String> = Vec::new();
    match &uniform {
        Ok(u) => {
            r.gini_uniform = gini_of(u);
            r.rho_uniform_lateral = correlation(u, lateral);
        }
        Err(e) => {
            r.not_converged |= matches!(e, SolverError::NotConverged { .. });
            errors.push(format!("uniform: {e}"));
        }
    }
    match &pragmatic {
        Ok(p) => {
            r.gini_pragmatic = gini_of(p);
            r.rho_pragmatic_lateral = correlation(p, lateral);
        }
        Err(e) => {
            r.not_converged |= matches!(e, SolverError::NotConverged { .. });
            errors.push(format!("pragmatic: {e}"));
        }
    }
    if let (Ok(u), Ok(p)) = (&uniform, &pragmatic) {
        r.rho_uniform_pragmatic = correlation(u, p);
    }
    if !errors.is_empty() {
        r.error = Some(errors.join("; "));
    }
    r
}

/// Recomputes the uniform and pragmatic surfers for every damping factor and
/// tabulates pairwise correlations and Gini values. The lateral surfer does
/// not depend on alpha and is computed once.
///
/// Solver failures mark their row and the sweep continues; a missing lateral
/// distribution fails the whole sweep.
pub fn damping_sweep(
    inputs: &SweepInputs<'_>,
    alphas: &[f64],
    base: &SolverConfig,
) -> Result<Vec<SweepRow>, SolverError> {
    let lateral = lateral_distribution(inputs.views, inputs.pages)?;
    Ok(alphas
        .par_iter()
        .map(|&alpha| row(inputs, &lateral, alpha, base))
        .collect())
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> io::Result<()> {
    writeln!(
        out,
        "alpha,rho_uniform_pragmatic,rho_uniform_lateral,rho_pragmatic_lateral,gini_uniform,gini_pragmatic,gini_lateral,status"
    )?;
    let cell = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for r in rows {
        let status = match &r.error {
            None => "ok".to_owned(),
            Some(e) => format!("\"failed: {}\"", e.replace('"', "'")),
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.alpha,
            cell(r.rho_uniform_pragmatic),
            cell(r.rho_uniform_lateral),
            cell(r.rho_pragmatic_lateral),
            cell(r.gini_uniform),
            cell(r.gini_pragmatic),
            cell(r.gini_lateral),
            status
        )?;
    }
    Ok(())
}
