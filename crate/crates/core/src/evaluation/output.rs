use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::sweep::{rank, SweepEntry, SweepResult};
use super::{EvalError, EvaluationReport};
use crate::clustering::Level;
use crate::localisation::KnnVariant;

fn create(path: &Path) -> Result<BufWriter<File>, EvalError> {
    File::create(path).map(BufWriter::new).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> EvalError + '_ {
    move |source| EvalError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_report_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<(), EvalError> {
    serde_json::to_writer_pretty(create(path)?, value)?;
    Ok(())
}

pub fn write_samples_csv(report: &EvaluationReport, path: &Path) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for s in &report.samples {
        w.serialize(s).map_err(csv_err(path))?;
    }
    w.flush().map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Best cell of one configuration family, laid out like a published
/// results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub level: Level,
    /// `baseline`, `xyz` or `rssi`.
    pub approach: String,
    pub variant: KnnVariant,
    pub k: usize,
    #[serde(rename = "e2D_cf")]
    pub e2d_cf: Option<f64>,
    #[serde(rename = "p50|cf")]
    pub p50_cf: Option<f64>,
    #[serde(rename = "p95|cf")]
    pub p95_cf: Option<f64>,
    #[serde(rename = "e2D")]
    pub e2d: f64,
    pub p50: f64,
    pub p95: f64,
    #[serde(rename = "FDR")]
    pub fdr: f64,
    #[serde(rename = "N")]
    pub n: Option<usize>,
    #[serde(rename = "K")]
    pub clusters: Option<usize>,
}

fn approach(entry: &SweepEntry) -> String {
    entry
        .cell
        .space
        .map_or_else(|| "baseline".to_string(), |s| s.to_string())
}

/// The best row per `(level, approach, variant)`, in order of first
/// appearance in the grid.
pub fn summary_rows(result: &SweepResult) -> Vec<SummaryRow> {
    let mut groups: Vec<((Level, String, KnnVariant), &SweepEntry)> = Vec::new();
    for e in result.entries.iter().filter(|e| e.outcome.report().is_some()) {
        let key = (e.cell.level, approach(e), e.cell.variant);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, best)) => {
                if rank(e, best).is_lt() {
                    *best = e;
                }
            }
            None => groups.push((key, e)),
        }
    }
    groups
        .into_iter()
        .map(|((level, approach, variant), e)| {
            let r = e.outcome.report().expect("finished");
            SummaryRow {
                level,
                approach,
                variant,
                k: e.cell.knn_k,
                e2d_cf: r.e2d_cf.map(|s| s.mean),
                p50_cf: r.e2d_cf.map(|s| s.p50),
                p95_cf: r.e2d_cf.map(|s| s.p95),
                e2d: r.e2d.mean,
                p50: r.e2d.p50,
                p95: r.e2d.p95,
                fdr: r.fdr,
                n: e.cell.n_aps,
                clusters: e.cell.k_clusters,
            }
        })
        .collect()
}

pub fn write_summary_csv(rows: &[SummaryRow], path: &Path) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Serialize)]
struct CellRow<'a> {
    level: Level,
    approach: String,
    variant: KnnVariant,
    k: usize,
    #[serde(rename = "N")]
    n: Option<usize>,
    #[serde(rename = "K")]
    clusters: Option<usize>,
    status: &'a str,
    #[serde(rename = "e2D_cf")]
    e2d_cf: Option<f64>,
    #[serde(rename = "e2D")]
    e2d: Option<f64>,
    p50: Option<f64>,
    p95: Option<f64>,
    #[serde(rename = "FDR")]
    fdr: Option<f64>,
    fallbacks: Option<usize>,
    mean_assignment_ms: Option<f64>,
    reason: &'a str,
}

/// One line per sweep cell, skipped cells included.
pub fn write_rows_csv(result: &SweepResult, path: &Path) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for e in &result.entries {
        let r = e.outcome.report();
        let reason = match &e.outcome {
            super::CellOutcome::Skipped { reason } => reason.as_str(),
            super::CellOutcome::Done { .. } => "",
        };
        w.serialize(CellRow {
            level: e.cell.level,
            approach: approach(e),
            variant: e.cell.variant,
            k: e.cell.knn_k,
            n: e.cell.n_aps,
            clusters: e.cell.k_clusters,
            status: if r.is_some() { "done" } else { "skipped" },
            e2d_cf: r.and_then(|r| r.e2d_cf.map(|s| s.mean)),
            e2d: r.map(|r| r.e2d.mean),
            p50: r.map(|r| r.e2d.p50),
            p95: r.map(|r| r.e2d.p95),
            fdr: r.map(|r| r.fdr),
            fallbacks: r.map(|r| r.fallbacks),
            mean_assignment_ms: r.map(|r| r.timings.mean_assignment_ms),
            reason,
        })
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Empirical CDF of 2D error for each labelled series, as a standalone SVG.
pub fn cdf_svg(series: &[(String, Vec<f64>)]) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let x_max = series
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let sx = |v: f64| pad + v / x_max * (w - 2.0 * pad);
    let sy = |p: f64| h - pad - p * (h - 2.0 * pad);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{pad},{top} V{base} H{right}" stroke="black" fill="none"/>"#,
        top = pad,
        base = h - pad,
        right = w - pad
    );
    for i in 0..=4 {
        let p = i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">{p:.2}</text>"#,
            pad - 6.0,
            sy(p) + 4.0
        );
        let v = x_max * p;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{v:.1}</text>"#,
            sx(v),
            h - pad + 16.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">2D error (m)</text>"#,
        w / 2.0,
        h - 10.0
    );
    for (i, (label, values)) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let mut sorted = values.clone();
        sorted.sort_unstable_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let mut d = format!("M{:.2},{:.2}", sx(0.0), sy(0.0));
        for (j, v) in sorted.iter().enumerate() {
            let _ = write!(
                d,
                " H{:.2} V{:.2}",
                sx(*v),
                sy((j + 1) as f64 / n)
            );
        }
        let _ = writeln!(svg, r#"<path d="{d}" stroke="{colour}" fill="none"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" fill="{colour}">{}</text>"#,
            w - pad - 150.0,
            pad + 16.0 * (i as f64 + 1.0),
            xml_escape(label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn write_cdf_svg(series: &[(String, Vec<f64>)], path: &Path) -> Result<(), EvalError> {
    std::fs::write(path, cdf_svg(series)).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}
