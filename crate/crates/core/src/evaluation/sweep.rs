use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate, EvalError, EvaluationReport};
use crate::assignment::{build_table, BuildingRouter};
use crate::clustering::{fit_clusters, ClusterError, ClusterModel, ClusterStrategy, Init, Level};
use crate::ingest::RadioMap;
use crate::localisation::{
    KnnConfig, KnnEstimator, KnnVariant, Pipeline, ReferenceSet, Representation, Routing, TableSet,
};
use crate::transform::{FeatureConfig, FeatureSpace, PowedConfig};

/// Axes of a hyperparameter sweep. Every combination of level, space, `K`,
/// `N`, `k` and variant becomes one cell; with `baseline` set, every level
/// also gets unclustered cells for each `k` and variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub levels: Vec<Level>,
    pub spaces: Vec<FeatureSpace>,
    pub n_aps: Vec<usize>,
    pub k_clusters: Vec<usize>,
    pub knn_k: Vec<usize>,
    pub variants: Vec<KnnVariant>,
    pub baseline: bool,
    pub representation: Representation,
    pub exponent: f64,
    pub floor_height: f64,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
    pub init: Init,
    pub pooled: bool,
    pub routing: Routing,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            levels: vec![Level::Building, Level::Floor],
            spaces: vec![FeatureSpace::Xyz, FeatureSpace::Rssi],
            n_aps: (1..=5).collect(),
            k_clusters: (2..=6).collect(),
            knn_k: vec![1, 3, 5, 7, 9, 11, 13],
            variants: KnnVariant::ALL.to_vec(),
            baseline: true,
            representation: Representation::Powed,
            exponent: PowedConfig::DEFAULT_EXPONENT,
            floor_height: FeatureConfig::DEFAULT_FLOOR_HEIGHT,
            seed: 0,
            max_iter: crate::clustering::KMeansParams::DEFAULT_MAX_ITER,
            tol: crate::clustering::KMeansParams::DEFAULT_TOL,
            init: Init::Forgy,
            pooled: false,
            routing: Routing::GroundTruth,
        }
    }
}

impl SweepGrid {
    fn validate(&self) -> Result<(), EvalError> {
        let empty = |axis: &str| Err(EvalError::Grid(format!("`{axis}` is empty")));
        if self.levels.is_empty() {
            return empty("levels");
        }
        if self.knn_k.is_empty() {
            return empty("knn_k");
        }
        if self.variants.is_empty() {
            return empty("variants");
        }
        let clustered = !(self.spaces.is_empty() || self.n_aps.is_empty() || self.k_clusters.is_empty());
        if !clustered && !self.baseline {
            return Err(EvalError::Grid(
                "no clustered cells (spaces, n_aps or k_clusters is empty) and baseline is off".into(),
            ));
        }
        if self.knn_k.contains(&0) || self.k_clusters.contains(&0) || self.n_aps.contains(&0) {
            return Err(EvalError::Grid("k, K and N must all be at least 1".into()));
        }
        Ok(())
    }

    pub fn strategy(&self, level: Level, space: FeatureSpace, k: usize) -> ClusterStrategy {
        ClusterStrategy {
            max_iter: self.max_iter,
            tol: self.tol,
            init: self.init,
            pooled: self.pooled,
            ..ClusterStrategy::new(level, space, k, self.seed)
        }
    }

    /// Cells in grid order.
    pub fn cells(&self) -> Vec<SweepCell> {
        let mut out = Vec::new();
        for &level in &self.levels {
            let mut push = |space, k_clusters, n_aps| {
                for &knn_k in &self.knn_k {
                    for &variant in &self.variants {
                        out.push(SweepCell {
                            level,
                            space,
                            k_clusters,
                            n_aps,
                            knn_k,
                            variant,
                        });
                    }
                }
            };
            if self.baseline {
                push(None, None, None);
            }
            for &space in &self.spaces {
                for &k in &self.k_clusters {
                    for &n in &self.n_aps {
                        push(Some(space), Some(k), Some(n));
                    }
                }
            }
        }
        out
    }
}

/// One sweep combination. Baseline cells have no space, `K` or `N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SweepCell {
    pub level: Level,
    pub space: Option<FeatureSpace>,
    pub k_clusters: Option<usize>,
    pub n_aps: Option<usize>,
    pub knn_k: usize,
    pub variant: KnnVariant,
}

impl SweepCell {
    pub fn is_baseline(&self) -> bool {
        self.space.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum CellOutcome {
    Done { report: Box<EvaluationReport> },
    Skipped { reason: String },
}

impl CellOutcome {
    pub fn report(&self) -> Option<&EvaluationReport> {
        match self {
            CellOutcome::Done { report } => Some(report),
            CellOutcome::Skipped { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub cell: SweepCell,
    pub outcome: CellOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub grid: SweepGrid,
    pub entries: Vec<SweepEntry>,
}

/// Orders finished cells: lower mean e2D, then higher FDR, then smaller `K`
/// (baseline counts as one cluster).
pub(super) fn rank(a: &SweepEntry, b: &SweepEntry) -> std::cmp::Ordering {
    let (ra, rb) = (a.outcome.report(), b.outcome.report());
    match (ra, rb) {
        (Some(ra), Some(rb)) => ra
            .e2d
            .mean
            .total_cmp(&rb.e2d.mean)
            .then(rb.fdr.total_cmp(&ra.fdr))
            .then(a.cell.k_clusters.unwrap_or(1).cmp(&b.cell.k_clusters.unwrap_or(1))),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    }
}

impl SweepResult {
    pub fn reports(&self) -> impl Iterator<Item = (&SweepCell, &EvaluationReport)> {
        self.entries
            .iter()
            .filter_map(|e| e.outcome.report().map(|r| (&e.cell, r)))
    }

    pub fn skipped(&self) -> usize {
        self.entries.len() - self.reports().count()
    }

    /// The best finished cell; earlier cells win exact ties.
    pub fn best(&self) -> Option<&SweepEntry> {
        self.entries
            .iter()
            .filter(|e| e.outcome.report().is_some())
            .min_by(|a, b| rank(a, b))
    }
}

type ModelKey = (Level, FeatureSpace, usize);

/// Evaluates every cell of `grid`. Cluster models are fitted once per
/// `(level, space, K)` and tables once per model and `N`; cells run on the
/// rayon pool and come back in grid order. A `K` that exceeds a scope's
/// distinct points skips its cells instead of failing the sweep.
pub fn sweep(train: &RadioMap, test: &RadioMap, grid: &SweepGrid) -> Result<SweepResult, EvalError> {
    grid.validate()?;
    let pcfg = PowedConfig::from_training(train, grid.exponent)?;
    let fcfg = FeatureConfig::new(pcfg, grid.floor_height)?;
    let refs = ReferenceSet::new(train, &pcfg, grid.representation);
    let router = (grid.routing == Routing::StrongestAp).then(|| BuildingRouter::fit(train));
    let cells = grid.cells();

    let mut model_keys: Vec<ModelKey> = Vec::new();
    for c in &cells {
        if let (Some(space), Some(k)) = (c.space, c.k_clusters) {
            if !model_keys.contains(&(c.level, space, k)) {
                model_keys.push((c.level, space, k));
            }
        }
    }
    let models: Vec<Result<ClusterModel, String>> = model_keys
        .par_iter()
        .map(|&(level, space, k)| match fit_clusters(train, &grid.strategy(level, space, k), &fcfg) {
            Ok(m) => Ok(Ok(m)),
            Err(e @ ClusterError::InfeasibleK { .. }) => Ok(Err(e.to_string())),
            Err(e) => Err(EvalError::from(e)),
        })
        .collect::<Result<_, _>>()?;
    let model_index: HashMap<ModelKey, usize> =
        model_keys.iter().enumerate().map(|(i, &k)| (k, i)).collect();

    let mut table_keys: Vec<(usize, usize)> = Vec::new();
    for (mi, m) in models.iter().enumerate() {
        if m.is_ok() {
            for &n in &grid.n_aps {
                table_keys.push((mi, n));
            }
        }
    }
    let tables: Vec<TableSet> = table_keys
        .par_iter()
        .map(|&(mi, n)| {
            let model = models[mi].as_ref().expect("fitted");
            Ok(TableSet::new(build_table(model, train, n)?))
        })
        .collect::<Result<_, EvalError>>()?;
    let table_index: HashMap<(usize, usize), usize> =
        table_keys.iter().enumerate().map(|(i, &k)| (k, i)).collect();

    let entries = cells
        .par_iter()
        .map(|cell| {
            let estimator = KnnEstimator(KnnConfig {
                k: cell.knn_k,
                variant: cell.variant,
                representation: grid.representation,
            });
            let pipeline = match (cell.space, cell.k_clusters, cell.n_aps) {
                (Some(space), Some(k), Some(n)) => {
                    let mi = model_index[&(cell.level, space, k)];
                    match &models[mi] {
                        Err(reason) => {
                            return Ok(SweepEntry {
                                cell: *cell,
                                outcome: CellOutcome::Skipped {
                                    reason: reason.clone(),
                                },
                            })
                        }
                        Ok(model) => Pipeline::clustered(
                            &refs,
                            pcfg,
                            &estimator,
                            model,
                            &tables[table_index[&(mi, n)]],
                        ),
                    }
                }
                _ => {
                    let p = Pipeline::baseline(&refs, pcfg, &estimator, cell.level);
                    if grid.pooled {
                        p.pooled()
                    } else {
                        p
                    }
                }
            };
            let pipeline = match &router {
                Some(r) => pipeline.with_router(r),
                None => pipeline,
            };
            let report = evaluate(&pipeline, test)?;
            Ok(SweepEntry {
                cell: *cell,
                outcome: CellOutcome::Done {
                    report: Box::new(report),
                },
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;

    Ok(SweepResult {
        grid: grid.clone(),
        entries,
    })
}
