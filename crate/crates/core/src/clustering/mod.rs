//! Partitioning a training radio map with K-Means.
//!
//! Under [`Level::Building`] each building is clustered on its own (or the
//! whole map at once in pooled mode); under [`Level::Floor`] each
//! `(building, floor)` pair is. Clusters never span scopes.

pub mod kmeans;

use std::collections::BTreeMap;
use std::fmt;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::RadioMap;
use crate::transform::{features, FeatureConfig, FeatureSpace};
pub use kmeans::{kmeans, Init, KMeansFit, KMeansParams};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("no points to cluster")]
    EmptyInput,
    #[error("feature vectors differ in length ({expected} vs {found})")]
    Dimension { expected: usize, found: usize },
    #[error("k = {k} exceeds the {distinct} distinct points{}", scope_suffix(.scope))]
    InfeasibleK {
        scope: String,
        k: usize,
        distinct: usize,
    },
    #[error("invalid clustering parameters: {0}")]
    InvalidParams(String),
    #[error("cluster model does not match the training map: {0}")]
    Mismatch(String),
    #[error("unsupported model format version {0}")]
    Version(u32),
}

fn scope_suffix(scope: &str) -> String {
    if scope.is_empty() {
        String::new()
    } else {
        format!(" in {scope}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Building,
    Floor,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Building => "building",
            Level::Floor => "floor",
        })
    }
}

impl std::str::FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "building" => Ok(Self::Building),
            "floor" => Ok(Self::Floor),
            _ => Err(format!("unknown level `{s}` (expected building or floor)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterStrategy {
    pub level: Level,
    pub space: FeatureSpace,
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
    #[serde(default)]
    pub init: Init,
    /// Building level only: cluster all buildings together.
    #[serde(default)]
    pub pooled: bool,
}

impl ClusterStrategy {
    pub fn new(level: Level, space: FeatureSpace, k: usize, seed: u64) -> Self {
        Self {
            level,
            space,
            k,
            seed,
            max_iter: KMeansParams::DEFAULT_MAX_ITER,
            tol: KMeansParams::DEFAULT_TOL,
            init: Init::Forgy,
            pooled: false,
        }
    }

    pub fn validate(&self) -> Result<(), ClusterError> {
        if self.k == 0 || self.max_iter == 0 || !(self.tol >= 0.0) {
            return Err(ClusterError::InvalidParams(format!(
                "k = {}, max_iter = {}, tol = {}",
                self.k, self.max_iter, self.tol
            )));
        }
        Ok(())
    }
}

/// splitmix64 of `seed` mixed with the scope position.
pub fn derive_seed(seed: u64, scope: usize) -> u64 {
    let mut z = seed ^ (scope as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Scope {
    /// `None` in pooled mode.
    pub building: Option<i32>,
    /// Set under [`Level::Floor`].
    pub floor: Option<i32>,
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.building, self.floor) {
            (Some(b), Some(fl)) => write!(f, "building {b} floor {fl}"),
            (Some(b), None) => write!(f, "building {b}"),
            (None, Some(fl)) => write!(f, "floor {fl}"),
            (None, None) => f.write_str("all buildings"),
        }
    }
}

/// A cluster: its scope's position in [`ClusterModel::scopes`] and its index
/// within that scope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClusterId {
    pub scope: usize,
    pub cluster: usize,
}

impl fmt::Display for ClusterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.scope, self.cluster)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScopeClusters {
    pub scope: Scope,
    pub centroids: Vec<Vec<f64>>,
    /// Floor label per cluster; only under [`Level::Floor`].
    pub floors: Vec<Option<i32>>,
    pub iterations: usize,
    pub sse: f64,
    /// Training indices per cluster, ascending.
    #[serde(skip)]
    pub members: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AssignmentEntry {
    id: String,
    scope: usize,
    cluster: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelRepr {
    format_version: u32,
    strategy: ClusterStrategy,
    features: FeatureConfig,
    scopes: Vec<ScopeClusters>,
    assignments: Vec<AssignmentEntry>,
    creation_time_ms: f64,
}

/// The result of clustering a training map. Immutable once fitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr", into = "ModelRepr")]
pub struct ClusterModel {
    strategy: ClusterStrategy,
    features: FeatureConfig,
    scopes: Vec<ScopeClusters>,
    /// Cluster of each training fingerprint, in map order.
    assignment: Vec<ClusterId>,
    train_ids: Vec<String>,
    creation_time: Duration,
}

impl From<ClusterModel> for ModelRepr {
    fn from(m: ClusterModel) -> Self {
        ModelRepr {
            format_version: MODEL_FORMAT_VERSION,
            strategy: m.strategy,
            features: m.features,
            assignments: m
                .train_ids
                .into_iter()
                .zip(&m.assignment)
                .map(|(id, c)| AssignmentEntry {
                    id,
                    scope: c.scope,
                    cluster: c.cluster,
                })
                .collect(),
            scopes: m.scopes,
            creation_time_ms: m.creation_time.as_secs_f64() * 1e3,
        }
    }
}

impl TryFrom<ModelRepr> for ClusterModel {
    type Error = ClusterError;

    fn try_from(r: ModelRepr) -> Result<Self, Self::Error> {
        if r.format_version != MODEL_FORMAT_VERSION {
            return Err(ClusterError::Version(r.format_version));
        }
        let mut scopes = r.scopes;
        for s in &mut scopes {
            s.members = vec![Vec::new(); s.centroids.len()];
        }
        let mut assignment = Vec::with_capacity(r.assignments.len());
        let mut train_ids = Vec::with_capacity(r.assignments.len());
        for (i, a) in r.assignments.into_iter().enumerate() {
            let slot = scopes
                .get_mut(a.scope)
                .and_then(|s| s.members.get_mut(a.cluster))
                .ok_or_else(|| {
                    ClusterError::Mismatch(format!("assignment of `{}` names a missing cluster", a.id))
                })?;
            slot.push(i);
            assignment.push(ClusterId {
                scope: a.scope,
                cluster: a.cluster,
            });
            train_ids.push(a.id);
        }
        Ok(ClusterModel {
            strategy: r.strategy,
            features: r.features,
            scopes,
            assignment,
            train_ids,
            creation_time: Duration::from_secs_f64(r.creation_time_ms.max(0.0) / 1e3),
        })
    }
}

impl ClusterModel {
    pub fn strategy(&self) -> &ClusterStrategy {
        &self.strategy
    }

    pub fn feature_config(&self) -> &FeatureConfig {
        &self.features
    }

    pub fn scopes(&self) -> &[ScopeClusters] {
        &self.scopes
    }

    /// Wall-clock time of the K-Means runs.
    pub fn creation_time(&self) -> Duration {
        self.creation_time
    }

    pub fn cluster_ids(&self) -> impl Iterator<Item = ClusterId> + '_ {
        self.scopes.iter().enumerate().flat_map(|(s, sc)| {
            (0..sc.centroids.len()).map(move |c| ClusterId { scope: s, cluster: c })
        })
    }

    pub fn cluster_count(&self) -> usize {
        self.scopes.iter().map(|s| s.centroids.len()).sum()
    }

    pub fn members(&self, id: ClusterId) -> &[usize] {
        &self.scopes[id.scope].members[id.cluster]
    }

    pub fn cluster_floor(&self, id: ClusterId) -> Option<i32> {
        self.scopes[id.scope].floors[id.cluster]
    }

    pub fn scope(&self, id: ClusterId) -> &Scope {
        &self.scopes[id.scope].scope
    }

    /// Cluster of training fingerprint `index`.
    pub fn assignment(&self, index: usize) -> ClusterId {
        self.assignment[index]
    }

    pub fn assignments(&self) -> &[ClusterId] {
        &self.assignment
    }

    /// Checks that `train` is the map this model was fitted on.
    pub fn check_compatible(&self, train: &RadioMap) -> Result<(), ClusterError> {
        if train.len() != self.train_ids.len() {
            return Err(ClusterError::Mismatch(format!(
                "model covers {} fingerprints, map has {}",
                self.train_ids.len(),
                train.len()
            )));
        }
        if let Some((fp, id)) = train
            .fingerprints()
            .iter()
            .zip(&self.train_ids)
            .find(|(fp, id)| &fp.id != *id)
        {
            return Err(ClusterError::Mismatch(format!(
                "fingerprint `{}` where the model expects `{id}`",
                fp.id
            )));
        }
        Ok(())
    }
}

/// Groups training indices by scope, in ascending scope order.
pub fn scope_members(train: &RadioMap, level: Level, pooled: bool) -> BTreeMap<Scope, Vec<usize>> {
    let mut scopes: BTreeMap<Scope, Vec<usize>> = BTreeMap::new();
    for (i, fp) in train.fingerprints().iter().enumerate() {
        let scope = Scope {
            building: (!pooled).then_some(fp.building),
            floor: (level == Level::Floor).then_some(fp.floor),
        };
        scopes.entry(scope).or_default().push(i);
    }
    scopes
}

/// Runs K-Means independently in every scope of `train`.
pub fn fit_clusters(
    train: &RadioMap,
    strategy: &ClusterStrategy,
    cfg: &FeatureConfig,
) -> Result<ClusterModel, ClusterError> {
    strategy.validate()?;
    let started = Instant::now();
    let pooled = strategy.pooled && strategy.level == Level::Building;
    let groups: Vec<(Scope, Vec<usize>)> = scope_members(train, strategy.level, pooled)
        .into_iter()
        .collect();
    let fps = train.fingerprints();

    let fitted: Vec<ScopeClusters> = groups
        .par_iter()
        .enumerate()
        .map(|(pos, (scope, idx))| {
            let points: Vec<Vec<f64>> = idx
                .iter()
                .map(|&i| features(&fps[i], strategy.space, cfg))
                .collect();
            let params = KMeansParams {
                k: strategy.k,
                seed: derive_seed(strategy.seed, pos),
                max_iter: strategy.max_iter,
                tol: strategy.tol,
                init: strategy.init,
            };
            let fit = kmeans(&points, &params).map_err(|e| match e {
                ClusterError::InfeasibleK { k, distinct, .. } => ClusterError::InfeasibleK {
                    scope: scope.to_string(),
                    k,
                    distinct,
                },
                other => other,
            })?;
            let mut members = vec![Vec::new(); strategy.k];
            for (&i, &l) in idx.iter().zip(&fit.labels) {
                members[l].push(i);
            }
            Ok(ScopeClusters {
                scope: *scope,
                floors: vec![scope.floor; strategy.k],
                iterations: fit.iterations,
                sse: fit.sse(),
                centroids: fit.centroids,
                members,
            })
        })
        .collect::<Result<_, ClusterError>>()?;

    let mut assignment = vec![ClusterId { scope: 0, cluster: 0 }; train.len()];
    for (s, sc) in fitted.iter().enumerate() {
        for (c, members) in sc.members.iter().enumerate() {
            for &i in members {
                assignment[i] = ClusterId { scope: s, cluster: c };
            }
        }
    }
    Ok(ClusterModel {
        strategy: *strategy,
        features: *cfg,
        scopes: fitted,
        assignment,
        train_ids: fps.iter().map(|f| f.id.clone()).collect(),
        creation_time: started.elapsed(),
    })
}
