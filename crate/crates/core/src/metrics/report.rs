use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::{
    align_supports, gini, heatmap_bins, lorenz_points, pearson, ratio_series, Heatmap, MetricsError, RatioRow,
};
use crate::surfer::StationaryDistribution;

#[derive(Debug, Clone, Serialize)]
pub struct ModelSummary {
    pub label: String,
    pub support_size: usize,
    pub gini: f64,
    #[serde(skip)]
    pub lorenz: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairComparison {
    pub a: String,
    pub b: String,
    pub common_support_size: usize,
    /// `None` when the correlation is undefined on the common support.
    pub pearson: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pearson_error: Option<String>,
    #[serde(skip)]
    pub ratios: Vec<RatioRow>,
    #[serde(skip)]
    pub heatmap: Heatmap,
}

/// Everything needed for the correlation heatmaps, ratio plots and Lorenz
/// curves of a set of distributions.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub heatmap_bins: usize,
    pub models: Vec<ModelSummary>,
    pub pairs: Vec<PairComparison>,
}

/// Compares every pair of the labelled distributions, in input order.
///
/// Correlation, ratios and heatmap use the common support renormalized on
/// both sides; Gini and Lorenz use each distribution's full support.
pub fn compare(dists: &[(&str, &StationaryDistribution)], bins: usize) -> Result<ComparisonReport, MetricsError> {
    let mut models = Vec::with_capacity(dists.len());
    for (label, d) in dists {
        let probs = d.probabilities();
        models.push(ModelSummary {
            label: label.to_string(),
            support_size: probs.iter().filter(|&&p| p > 0.0).count(),
            gini: gini(&probs)?,
            lorenz: lorenz_points(&probs)?,
        });
    }

    let mut pairs = Vec::new();
    for i in 0..dists.len() {
        for j in i + 1..dists.len() {
            let (la, a) = dists[i];
            let (lb, b) = dists[j];
            let aligned = align_supports(a, b)?;
            let norm = aligned.renormalized();
            let (pearson, pearson_error) = match pearson(&norm.a, &norm.b) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            pairs.push(PairComparison {
                a: la.to_string(),
                b: lb.to_string(),
                common_support_size: aligned.len(),
                pearson,
                pearson_error,
                ratios: ratio_series(&aligned),
                heatmap: heatmap_bins(&norm, bins)?,
            });
        }
    }
    Ok(ComparisonReport {
        heatmap_bins: bins,
        models,
        pairs,
    })
}

fn create(dir: &Path, name: &str) -> io::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl ComparisonReport {
    /// Writes `report.json`, `lorenz_<label>.csv`, `ratios_<a>_<b>.csv` and
    /// `heatmap_<a>_<b>.csv` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> io::Result<()> {
        let mut json = create(dir, "report.json")?;
        serde_json::to_writer_pretty(&mut json, self)?;
        json.write_all(b"\n")?;
        json.flush()?;

        for m in &self.models {
            let mut w = create(dir, &format!("lorenz_{}.csv", m.label))?;
            write_lorenz_csv(&m.lorenz, &mut w)?;
            w.flush()?;
        }
        for p in &self.pairs {
            let mut w = create(dir, &format!("ratios_{}_{}.csv", p.a, p.b))?;
            write_ratios_csv(&p.ratios, &p.a, &p.b, &mut w)?;
            w.flush()?;
            let mut w = create(dir, &format!("heatmap_{}_{}.csv", p.a, p.b))?;
            write_heatmap_csv(&p.heatmap, &mut w)?;
            w.flush()?;
        }
        Ok(())
    }
}

pub fn write_lorenz_csv<W: Write>(points: &[(f64, f64)], mut out: W) -> io::Result<()> {
    writeln!(out, "population_fraction,mass_fraction")?;
    for (x, y) in points {
        writeln!(out, "{},{}", fmt_f64(*x), fmt_f64(*y))?;
    }
    Ok(())
}

pub fn write_ratios_csv<W: Write>(rows: &[RatioRow], a: &str, b: &str, out: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["url", &format!("p_{a}"), &format!("p_{b}"), "ratio"])?;
    for r in rows {
        w.write_record([r.url.clone(), fmt_f64(r.p_a), fmt_f64(r.p_b), fmt_f64(r.ratio)])?;
    }
    w.flush()
}

/// One row per cell with its bin edges, so plots can be redrawn exactly.
pub fn write_heatmap_csv<W: Write>(h: &Heatmap, mut out: W) -> io::Result<()> {
    writeln!(out, "x_bin,y_bin,x_lo,x_hi,y_lo,y_hi,count")?;
    for (xi, row) in h.counts.iter().enumerate() {
        for (yi, count) in row.iter().enumerate() {
            writeln!(
                out,
                "{xi},{yi},{},{},{},{},{count}",
                fmt_f64(h.x_edges[xi]),
                fmt_f64(h.x_edges[xi + 1]),
                fmt_f64(h.y_edges[yi]),
                fmt_f64(h.y_edges[yi + 1]),
            )?;
        }
    }
    Ok(())
}
