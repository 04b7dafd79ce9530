//! Agreement and inequality measures between stationary distributions.

use std::collections::HashMap;

use thiserror::Error;

use crate::graph::PageId;
use crate::surfer::StationaryDistribution;

mod report;
mod sweep;

pub use report::{compare, ComparisonReport, ModelSummary, PairComparison};
pub use sweep::{damping_sweep, write_sweep_csv, SweepInputs, SweepRow};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("distributions share no page")]
    EmptyIntersection,
    #[error("vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} values, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("correlation undefined: zero variance")]
    ZeroVariance,
    #[error("values must be finite and non-negative")]
    NegativeValue,
    #[error("values sum to zero")]
    AllZero,
    #[error("heatmap values must be strictly positive")]
    NonPositive,
    #[error("need at least 2 bins per axis, got {0}")]
    TooFewBins(usize),
}

/// Probability pairs over the pages both distributions assign mass to.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPairs {
    pub urls: Vec<String>,
    /// Ids as recorded in the first distribution.
    pub ids: Vec<PageId>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl AlignedPairs {
    pub fn len(&self) -> usize {
        self.urls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.urls.is_empty()
    }

    /// Both sides rescaled to sum to one over the common support.
    pub fn renormalized(&self) -> AlignedPairs {
        let scale = |v: &[f64]| {
            let total: f64 = v.iter().sum();
            v.iter().map(|x| x / total).collect::<Vec<_>>()
        };
        AlignedPairs {
            urls: self.urls.clone(),
            ids: self.ids.clone(),
            a: scale(&self.a),
            b: scale(&self.b),
        }
    }
}

/// Intersects the supports (pages with positive probability) by URL, in the
/// order of `a`.
pub fn align_supports(a: &StationaryDistribution, b: &StationaryDistribution) -> Result<AlignedPairs, MetricsError> {
    let b_index: HashMap<&str, f64> = b
        .entries
        .iter()
        .filter(|e| e.probability > 0.0)
        .map(|e| (e.url.as_str(), e.probability))
        .collect();
    let mut pairs = AlignedPairs {
        urls: Vec::new(),
        ids: Vec::new(),
        a: Vec::new(),
        b: Vec::new(),
    };
    for e in a.entries.iter().filter(|e| e.probability > 0.0) {
        if let Some(&pb) = b_index.get(e.url.as_str()) {
            pairs.urls.push(e.url.clone());
            pairs.ids.push(e.id);
            pairs.a.push(e.probability);
            pairs.b.push(pb);
        }
    }
    if pairs.is_empty() {
        return Err(MetricsError::EmptyIntersection);
    }
    Ok(pairs)
}

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricsError::TooShort {
            needed: 2,
            got: x.len(),
        });
    }
    let constant = |v: &[f64]| v.iter().all(|&e| e == v[0]);
    if constant(x) || constant(y) {
        return Err(MetricsError::ZeroVariance);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

fn sorted_checked(x: &[f64]) -> Result<Vec<f64>, MetricsError> {
    if x.is_empty() {
        return Err(MetricsError::TooShort { needed: 1, got: 0 });
    }
    if x.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(MetricsError::NegativeValue);
    }
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    if v.iter().all(|&e| e == 0.0) {
        return Err(MetricsError::AllZero);
    }
    Ok(v)
}

/// Gini coefficient `sum_i (2i - n - 1) x_(i) / (n sum x)` over the ascending
/// order statistics.
///
/// The sum is evaluated as `sum_i (n + 1 - 2i)(x_(n+1-i) - x_(i))` over the
/// lower half, which is algebraically identical and exactly zero for a
/// constant vector.
pub fn gini(x: &[f64]) -> Result<f64, MetricsError> {
    let v = sorted_checked(x)?;
    let n = v.len();
    let total: f64 = v.iter().sum();
    let mut acc = 0.0;
    for i in 0..n / 2 {
        let weight = (n - 1 - 2 * i) as f64;
        acc += weight * (v[n - 1 - i] - v[i]);
    }
    Ok(acc / (n as f64 * total))
}

/// Lorenz curve points `(k/n, share of the k smallest values)`, starting at
/// `(0, 0)` and ending at `(1, 1)`.
pub fn lorenz_points(x: &[f64]) -> Result<Vec<(f64, f64)>, MetricsError> {
    let v = sorted_checked(x)?;
    let n = v.len() as f64;
    let mut cumulative = Vec::with_capacity(v.len());
    let mut running = 0.0;
    for e in &v {
        running += e;
        cumulative.push(running);
    }
    let total = running;
    let mut points = Vec::with_capacity(v.len() + 1);
    points.push((0.0, 0.0));
    for (k, c) in cumulative.into_iter().enumerate() {
        points.push(((k + 1) as f64 / n, c / total));
    }
    Ok(points)
}

/// Trapezoidal area under a piecewise-linear curve.
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioRow {
    pub url: String,
    pub p_a: f64,
    pub p_b: f64,
    pub ratio: f64,
}

/// Per-page `p_a / p_b` on the renormalized common support, sorted by `p_a`
/// descending (ties by URL).
pub fn ratio_series(pairs: &AlignedPairs) -> Vec<RatioRow> {
    let norm = pairs.renormalized();
    let mut rows: Vec<RatioRow> = norm
        .urls
        .iter()
        .zip(norm.a.iter().zip(&norm.b))
        .map(|(url, (&p_a, &p_b))| RatioRow {
            url: url.clone(),
            p_a,
            p_b,
            ratio: p_a / p_b,
        })
        .collect();
    rows.sort_by(|x, y| y.p_a.total_cmp(&x.p_a).then_with(|| x.url.cmp(&y.url)));
    rows
}

/// 2-D histogram over log10-spaced bins; `counts[x_bin][y_bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub x_edges: Vec<f64>,
    pub y_edges: Vec<f64>,
    pub counts: Vec<Vec<u64>>,
}

impl Heatmap {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }
}

struct LogAxis {
    lo: f64,
    hi: f64,
    bins: usize,
}

impl LogAxis {
    fn spanning(values: &[f64], bins: usize) -> Self {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min).log10();
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max).log10();
        let (lo, hi) = if max > min { (min, max) } else { (min - 0.5, max + 0.5) };
        Self { lo, hi, bins }
    }

    fn edges(&self) -> Vec<f64> {
        (0..=self.bins)
            .map(|k| 10f64.powf(self.lo + (self.hi - self.lo) * k as f64 / self.bins as f64))
            .collect()
    }

    fn bin(&self, v: f64) -> usize {
        let pos = (v.log10() - self.lo) / (self.hi - self.lo) * self.bins as f64;
        (pos.floor().max(0.0) as usize).min(self.bins - 1)
    }
}

pub fn heatmap_bins(pairs: &AlignedPairs, bins_per_axis: usize) -> Result<Heatmap, MetricsError> {
    if bins_per_axis < 2 {
        return Err(MetricsError::TooFewBins(bins_per_axis));
    }
    if pairs.is_empty() {
        return Err(MetricsError::EmptyIntersection);
    }
    if pairs.a.iter().chain(&pairs.b).any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(MetricsError::NonPositive);
    }
    let xa = LogAxis::spanning(&pairs.a, bins_per_axis);
    let ya = LogAxis::spanning(&pairs.b, bins_per_axis);
    let mut counts = vec![vec![0u64; bins_per_axis]; bins_per_axis];
    for (&x, &y) in pairs.a.iter().zip(&pairs.b) {
        counts[xa.bin(x)][ya.bin(y)] += 1;
    }
    Ok(Heatmap {
        x_edges: xa.edges(),
        y_edges: ya.edges(),
        counts,
    })
}

/// Half the L1 distance between two probability vectors.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surfer::{PageProbability, SurferModel};
    use proptest::prelude::*;

    fn dist(pairs: &[(&str, f64)]) -> StationaryDistribution {
        StationaryDistribution {
            model: SurferModel::Uniform,
            alpha: Some(0.85),
            entries: pairs
                .iter()
                .enumerate()
                .map(|(i, (u, p))| PageProbability {
                    id: PageId(i),
                    url: u.to_string(),
                    probability: *p,
                })
                .collect(),
            convergence: None,
        }
    }

    #[test]
    fn align_examples() {
        let a = dist(&[("A", 0.2), ("B", 0.3), ("C", 0.5)]);
        let b = dist(&[("B", 0.1), ("C", 0.2), ("D", 0.7)]);
        let p = align_supports(&a, &b).unwrap();
        assert_eq!(p.urls, vec!["B", "C"]);
        assert_eq!(p.a, vec![0.3, 0.5]);
        assert_eq!(p.b, vec![0.1, 0.2]);
        assert_eq!(align_supports(&a, &a).unwrap().len(), 3);
        let d = dist(&[("X", 1.0)]);
        assert_eq!(align_supports(&a, &d), Err(MetricsError::EmptyIntersection));
    }

    #[test]
    fn pearson_examples() {
        let x = [0.1, 0.4, 0.2, 0.3];
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        let y: Vec<f64> = x.iter().map(|v| 3.0 + 2.5 * v).collect();
        assert!((pearson(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(pearson(&x, &[1.0; 4]), Err(MetricsError::ZeroVariance));
        assert_eq!(
            pearson(&[1.0], &[1.0]),
            Err(MetricsError::TooShort { needed: 2, got: 1 })
        );
        assert_eq!(pearson(&x, &[1.0]), Err(MetricsError::LengthMismatch(4, 1)));
    }

    #[test]
    fn pearson_matches_hand_value() {
        // x = [1,2,3,4], y = [2,1,4,3]: sxy = 3, sxx = syy = 5 -> 0.6
        let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]).unwrap();
        assert!((r - 0.6).abs() < 1e-15);
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini(&[0.25; 4]).unwrap(), 0.0);
        assert_eq!(gini(&[0.0, 0.0, 0.0, 1.0]).unwrap(), 0.75);
        assert_eq!(gini(&[1.0, 3.0]).unwrap(), 0.25);
        assert_eq!(gini(&[3.0, 1.0]).unwrap(), 0.25);
        assert_eq!(gini(&[7.0]).unwrap(), 0.0);
        assert_eq!(gini(&[0.0, 0.0]), Err(MetricsError::AllZero));
        assert_eq!(gini(&[]), Err(MetricsError::TooShort { needed: 1, got: 0 }));
        assert_eq!(gini(&[1.0, -1.0]), Err(MetricsError::NegativeValue));
    }

    #[test]
    fn lorenz_examples() {
        let u = lorenz_points(&[0.25; 4]).unwrap();
        assert_eq!(u, vec![(0.0, 0.0), (0.25, 0.25), (0.5, 0.5), (0.75, 0.75), (1.0, 1.0)]);
        let p = lorenz_points(&[0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(p[3], (0.75, 0.0));
        assert_eq!(p[4], (1.0, 1.0));
        assert_eq!(
            lorenz_points(&[3.0, 1.0, 2.0]).unwrap(),
            lorenz_points(&[1.0, 2.0, 3.0]).unwrap()
        );
    }

    #[test]
    fn ratio_examples() {
        let a = dist(&[("A", 0.25), ("B", 0.25), ("C", 0.5)]);
        for row in ratio_series(&align_supports(&a, &a).unwrap()) {
            assert_eq!(row.ratio, 1.0);
        }
        // Page C is ten times as likely under `a` once both sides are on the
        // same scale: a = [1, 1, 10]/12, b = [1, 1, 1]/3.
        let a = dist(&[("A", 1.0 / 12.0), ("B", 1.0 / 12.0), ("C", 10.0 / 12.0)]);
        let b = dist(&[("A", 0.4), ("B", 0.4), ("C", 0.4)]);
        let rows = ratio_series(&align_supports(&a, &b).unwrap());
        assert_eq!(rows[0].url, "C");
        assert!((rows[0].ratio - 2.5).abs() < 1e-12);
        assert!((rows[0].ratio / rows[1].ratio - 10.0).abs() < 1e-12);
        assert_eq!(
            rows.iter().map(|r| r.url.as_str()).collect::<Vec<_>>(),
            vec!["C", "A", "B"]
        );
    }

    #[test]
    fn heatmap_examples() {
        let same = dist(&[("A", 0.5), ("B", 0.5)]);
        let h = heatmap_bins(&align_supports(&same, &same).unwrap(), 50).unwrap();
        assert_eq!(h.counts.iter().flatten().filter(|&&c| c > 0).count(), 1);
        assert_eq!(h.total(), 2);

        // Decades 1e-4..1e-1 on a 50-bin axis: positions 0, 16.7, 33.3, 50.
        let spread = AlignedPairs {
            urls: vec!["a".into(), "b".into(), "c".into(), "d".into()],
            ids: (0..4).map(PageId).collect(),
            a: vec![1e-4, 1e-3, 1e-2, 1e-1],
            b: vec![1e-1, 1e-2, 1e-3, 1e-4],
        };
        let h = heatmap_bins(&spread, 50).unwrap();
        assert_eq!(h.counts[0][49], 1);
        assert_eq!(h.counts[16][33], 1);
        assert_eq!(h.counts[33][16], 1);
        assert_eq!(h.counts[49][0], 1);
        assert_eq!(h.total(), 4);
        assert_eq!(h.x_edges.len(), 51);
        assert!((h.x_edges[0] - 1e-4).abs() < 1e-18 && (h.x_edges[50] - 1e-1).abs() < 1e-15);

        let mut bad = spread.clone();
        bad.b[0] = 0.0;
        assert_eq!(heatmap_bins(&bad, 50), Err(MetricsError::NonPositive));
        assert_eq!(heatmap_bins(&spread, 1), Err(MetricsError::TooFewBins(1)));
    }

    fn nonneg_vec() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..1.0, 1.0f64..1000.0], 1..200)
            .prop_filter("nonzero", |v| v.iter().any(|&x| x > 0.0))
    }

    proptest! {
        #[test]
        fn gini_scale_and_permutation_invariant(v in nonneg_vec(), c in 0.01f64..100.0, seed in any::<u64>()) {
            let g = gini(&v).unwrap();
            prop_assert!((0.0..1.0).contains(&g));
            let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
            prop_assert!((gini(&scaled).unwrap() - g).abs() < 1e-12);
            let mut shuffled = v.clone();
            let n = shuffled.len();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (s >> 33) as usize % (i + 1));
            }
            prop_assert_eq!(gini(&shuffled).unwrap(), g);
        }

        #[test]
        fn gini_equals_lorenz_gap(v in nonneg_vec()) {
            let pts = lorenz_points(&v).unwrap();
            prop_assert!((gini(&v).unwrap() - (1.0 - 2.0 * trapezoid_area(&pts))).abs() <= 1e-12);
            prop_assert_eq!(*pts.last().unwrap(), (1.0, 1.0));
            for w in pts.windows(2) {
                prop_assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
            }
        }

        #[test]
        fn pearson_affine_invariant(
            v in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 3..50),
            a in -10.0f64..10.0,
            b in 0.1f64..10.0,
        ) {
            let (x, y): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            if let Ok(r) = pearson(&x, &y) {
                let x2: Vec<f64> = x.iter().map(|e| a + b * e).collect();
                prop_assert!((pearson(&x2, &y).unwrap() - r).abs() < 1e-9);
                prop_assert!((-1.0..=1.0).contains(&r));
            }
        }

        #[test]
        fn ratio_rows_match_heatmap_total(v in prop::collection::vec((1e-6f64..1.0, 1e-6f64..1.0), 1..100), bins in 2usize..60) {
            let pairs = AlignedPairs {
                urls: (0..v.len()).map(|i| format!("p{i}")).collect(),
                ids: (0..v.len()).map(PageId).collect(),
                a: v.iter().map(|p| p.0).collect(),
                b: v.iter().map(|p| p.1).collect(),
            };
            let h = heatmap_bins(&pairs.renormalized(), bins).unwrap();
            prop_assert_eq!(h.total() as usize, ratio_series(&pairs).len());
        }
    }
}
