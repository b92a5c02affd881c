//! Accuracy and timing metrics over a test partition, hyperparameter sweeps
//! and report output.

mod output;
mod sweep;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::AssignError;
use crate::clustering::{ClusterError, ClusterStrategy, Level};
use crate::ingest::RadioMap;
use crate::localisation::{KnnConfig, LocaliseError, Mode, Pipeline, Representation, Routing};
use crate::transform::TransformError;

pub use output::{
    cdf_svg, summary_rows, write_cdf_svg, write_report_json, write_rows_csv, write_samples_csv,
    write_summary_csv, SummaryRow,
};
pub use sweep::{sweep, CellOutcome, SweepCell, SweepEntry, SweepGrid, SweepResult};

/// Queries at the start of a run that are left out of timing statistics.
pub const WARM_UP_QUERIES: usize = 5;

pub const PERCENTILE_RULE: &str =
    "linear interpolation between closest ranks, inclusive: rank = p * (n - 1) on the sorted values";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot take a percentile of an empty list")]
    EmptyValues,
    #[error("percentile must lie in [0, 1], got {0}")]
    Fraction(f64),
    #[error("test map is empty")]
    EmptyTest,
    #[error("no test fingerprint has a detected AP")]
    NothingEvaluated,
    #[error("test map has {test} APs but the training map has {train}")]
    ApMismatch { train: usize, test: usize },
    #[error("invalid sweep grid: {0}")]
    Grid(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("cannot serialise report: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Localise(#[from] LocaliseError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Assign(#[from] AssignError),
    #[error(transparent)]
    Transform(#[from] TransformError),
}

/// Percentile `p ∈ [0, 1]` of `values` under [`PERCENTILE_RULE`].
pub fn percentile(values: &[f64], p: f64) -> Result<f64, EvalError> {
    if values.is_empty() {
        return Err(EvalError::EmptyValues);
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(EvalError::Fraction(p));
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    Ok(percentile_sorted(&sorted, p))
}

fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let rank = p * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub count: usize,
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
}

impl ErrorSummary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_unstable_by(f64::total_cmp);
        Some(Self {
            count: values.len(),
            mean: values.iter().sum::<f64>() / values.len() as f64,
            p50: percentile_sorted(&sorted, 0.5),
            p95: percentile_sorted(&sorted, 0.95),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub id: String,
    pub true_x: f64,
    pub true_y: f64,
    pub true_floor: i32,
    pub est_x: f64,
    pub est_y: f64,
    pub est_floor: i32,
    pub e2d: f64,
    pub floor_correct: bool,
    /// `scope:cluster`, empty for the baseline.
    pub cluster: String,
    pub fallback: bool,
    pub assignment_ms: f64,
    pub query_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub warm_up_queries: usize,
    pub mean_assignment_ms: f64,
    pub max_assignment_ms: f64,
    pub mean_query_ms: f64,
    pub p95_query_ms: f64,
    pub cluster_creation_ms: Option<f64>,
    pub table_build_ms: Option<f64>,
    pub max_cluster_table_ms: Option<f64>,
}

/// Everything needed to reproduce a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub mode: String,
    pub level: Level,
    pub clustering: Option<ClusterStrategy>,
    pub n_aps: Option<usize>,
    pub clusters: Option<usize>,
    pub estimator: String,
    pub knn: Option<KnnConfig>,
    pub representation: Representation,
    pub powed_exponent: f64,
    pub powed_min: f64,
    pub floor_height: Option<f64>,
    pub routing: Routing,
    pub pooled: bool,
}

impl ConfigSnapshot {
    pub fn of(pipeline: &Pipeline<'_>) -> Self {
        let pcfg = pipeline.powed_config();
        let (mode, level, clustering, n_aps, clusters, floor_height, pooled) = match *pipeline.mode() {
            Mode::Baseline { level, pooled } => ("baseline", level, None, None, None, None, pooled),
            Mode::Clustered { model, tables } => {
                let s = *model.strategy();
                (
                    "clustered",
                    s.level,
                    Some(s),
                    Some(tables.global().n()),
                    Some(model.cluster_count()),
                    Some(model.feature_config().floor_height),
                    s.pooled,
                )
            }
        };
        Self {
            mode: mode.to_string(),
            level,
            clustering,
            n_aps,
            clusters,
            estimator: pipeline.estimator().name(),
            knn: pipeline.estimator().knn_config(),
            representation: pipeline.references().representation(),
            powed_exponent: pcfg.exponent(),
            powed_min: pcfg.min(),
            floor_height,
            routing: pipeline.routing(),
            pooled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config: ConfigSnapshot,
    pub percentile_rule: String,
    pub evaluated: usize,
    pub skipped_undetectable: usize,
    pub skipped_ids: Vec<String>,
    pub fallbacks: usize,
    /// Fraction of evaluated samples whose floor was estimated correctly.
    pub fdr: f64,
    pub e2d: ErrorSummary,
    /// Over correct-floor samples only; `None` if there are none.
    pub e2d_cf: Option<ErrorSummary>,
    pub timings: Timings,
    pub samples: Vec<SampleRow>,
}

impl EvaluationReport {
    /// The report with every wall-clock field zeroed, for comparing runs.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        r.timings = Timings::default();
        for s in &mut r.samples {
            s.assignment_ms = 0.0;
            s.query_ms = 0.0;
        }
        r
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Runs `pipeline` over every test fingerprint. Fingerprints without any
/// detected AP are counted and left out.
pub fn evaluate(pipeline: &Pipeline<'_>, test: &RadioMap) -> Result<EvaluationReport, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptyTest);
    }
    let refs = pipeline.references();
    if refs.dim() != test.ap_count() {
        return Err(EvalError::ApMismatch {
            train: refs.dim(),
            test: test.ap_count(),
        });
    }

    let mut samples = Vec::with_capacity(test.len());
    let mut skipped_ids = Vec::new();
    for fp in test.fingerprints() {
        if fp.detected_count() == 0 {
            skipped_ids.push(fp.id.clone());
            continue;
        }
        let started = Instant::now();
        let pred = pipeline.predict_detailed(fp)?;
        let query_time = started.elapsed();
        let est = pred.estimate;
        samples.push(SampleRow {
            id: fp.id.clone(),
            true_x: fp.x,
            true_y: fp.y,
            true_floor: fp.floor,
            est_x: est.x,
            est_y: est.y,
            est_floor: est.floor,
            e2d: (est.x - fp.x).hypot(est.y - fp.y),
            floor_correct: est.floor == fp.floor,
            cluster: est.cluster.map(|c| c.to_string()).unwrap_or_default(),
            fallback: pred.assignment.as_ref().is_some_and(|a| a.fallback),
            assignment_ms: ms(pred.assignment_time),
            query_ms: ms(query_time),
        });
    }
    if samples.is_empty() {
        return Err(EvalError::NothingEvaluated);
    }

    let e2d: Vec<f64> = samples.iter().map(|s| s.e2d).collect();
    let cf: Vec<f64> = samples.iter().filter(|s| s.floor_correct).map(|s| s.e2d).collect();
    let correct = cf.len();

    let warm = if samples.len() > WARM_UP_QUERIES { WARM_UP_QUERIES } else { 0 };
    let timed = &samples[warm..];
    let assign_ms: Vec<f64> = timed.iter().map(|s| s.assignment_ms).collect();
    let query_ms: Vec<f64> = timed.iter().map(|s| s.query_ms).collect();
    let query_summary = ErrorSummary::of(&query_ms).expect("non-empty");
    let mut timings = Timings {
        warm_up_queries: warm,
        mean_assignment_ms: assign_ms.iter().sum::<f64>() / assign_ms.len() as f64,
        max_assignment_ms: assign_ms.iter().copied().fold(0.0, f64::max),
        mean_query_ms: query_summary.mean,
        p95_query_ms: query_summary.p95,
        ..Timings::default()
    };
    if let Mode::Clustered { model, tables } = *pipeline.mode() {
        let table = tables.global();
        timings.cluster_creation_ms = Some(ms(model.creation_time()));
        timings.table_build_ms = Some(ms(table.build_time()));
        timings.max_cluster_table_ms =
            Some(table.cluster_build_times().iter().map(|&d| ms(d)).fold(0.0, f64::max));
    }

    Ok(EvaluationReport {
        config: ConfigSnapshot::of(pipeline),
        percentile_rule: PERCENTILE_RULE.to_string(),
        evaluated: samples.len(),
        skipped_undetectable: skipped_ids.len(),
        skipped_ids,
        fallbacks: samples.iter().filter(|s| s.fallback).count(),
        fdr: correct as f64 / samples.len() as f64,
        e2d: ErrorSummary::of(&e2d).expect("non-empty"),
        e2d_cf: ErrorSummary::of(&cf),
        timings,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn percentile_examples() {
        assert_eq!(percentile(&[5.0], 0.0).unwrap(), 5.0);
        assert_eq!(percentile(&[5.0], 0.95).unwrap(), 5.0);
        assert_eq!(percentile(&[4.0, 1.0, 3.0, 2.0], 0.5).unwrap(), 2.5);
        // rank 0.95 * 3 = 2.85 between 3 and 4.
        assert!((percentile(&[1.0, 2.0, 3.0, 4.0], 0.95).unwrap() - 3.85).abs() < 1e-12);
        assert!(matches!(percentile(&[], 0.5), Err(EvalError::EmptyValues)));
        assert!(matches!(percentile(&[1.0], 1.5), Err(EvalError::Fraction(_))));
    }

    #[test]
    fn summary_of_known_errors() {
        let s = ErrorSummary::of(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        assert_eq!(s.p50, 2.5);
        assert!((s.p95 - 3.85).abs() < 1e-12);
        assert!(ErrorSummary::of(&[]).is_none());
    }

    proptest! {
        #[test]
        fn percentile_is_monotone_and_bounded(
            mut v in prop::collection::vec(-1e3f64..1e3, 1..60),
            a in 0.0f64..=1.0,
            b in 0.0f64..=1.0,
        ) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let pl = percentile(&v, lo).unwrap();
            let ph = percentile(&v, hi).unwrap();
            v.sort_unstable_by(f64::total_cmp);
            prop_assert!(pl <= ph);
            prop_assert!(v[0] <= pl && ph <= v[v.len() - 1]);
        }
    }
}
