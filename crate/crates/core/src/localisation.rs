//! Position and floor estimation inside a cluster.
//!
//! Three KNN variants share one neighbour search:
//!
//! * `Knn`: mean of the `k` nearest coordinates, modal floor.
//! * `Wknn`: inverse-distance weighted mean, floor with the largest weight sum.
//! * `WknnT`: as `Wknn`, plus every member tied with the `k`-th distance.
//!
//! Neighbours are ordered by `(distance, training index)`, so equal distances
//! resolve towards earlier training samples. Floor ties go to the lowest
//! label. If a weighted variant finds neighbours closer than
//! [`ZERO_DISTANCE`], it returns the plain mean of exactly those.

use std::collections::BTreeMap;
use std::fmt;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::{assign, ApCombinationTable, AssignError, Assignment, BuildingRouter};
use crate::clustering::{ClusterId, ClusterModel, Level};
use crate::ingest::{Fingerprint, RadioMap};
use crate::transform::{powed_vector, raw_vector, PowedConfig};

pub const ZERO_DISTANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum LocaliseError {
    #[error("vectors differ in length ({0} vs {1})")]
    Dimension(usize, usize),
    #[error("no candidate fingerprints to search")]
    NoMembers,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("building {0} has no training fingerprints")]
    UnknownBuilding(i32),
    #[error("floor {floor} of building {building} has no training fingerprints")]
    UnknownFloor { building: i32, floor: i32 },
    #[error(transparent)]
    Assign(#[from] AssignError),
}

/// Euclidean distance.
pub fn distance(a: &[f64], b: &[f64]) -> Result<f64, LocaliseError> {
    if a.len() != b.len() {
        return Err(LocaliseError::Dimension(a.len(), b.len()));
    }
    Ok(euclidean(a, b))
}

#[inline]
fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KnnVariant {
    Knn,
    Wknn,
    WknnT,
}

impl KnnVariant {
    pub const ALL: [KnnVariant; 3] = [KnnVariant::Knn, KnnVariant::Wknn, KnnVariant::WknnT];
}

impl fmt::Display for KnnVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KnnVariant::Knn => "knn",
            KnnVariant::Wknn => "wknn",
            KnnVariant::WknnT => "wknn-t",
        })
    }
}

impl std::str::FromStr for KnnVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "knn" => Ok(Self::Knn),
            "wknn" => Ok(Self::Wknn),
            "wknn-t" | "wknnt" => Ok(Self::WknnT),
            _ => Err(format!("unknown variant `{s}` (expected knn, wknn or wknn-t)")),
        }
    }
}

/// What the KNN distance is computed over.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    #[default]
    Powed,
    /// dBm with undetected APs at the training minimum.
    Raw,
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Representation::Powed => "powed",
            Representation::Raw => "raw",
        })
    }
}

impl std::str::FromStr for Representation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "powed" => Ok(Self::Powed),
            "raw" => Ok(Self::Raw),
            _ => Err(format!("unknown representation `{s}` (expected powed or raw)")),
        }
    }
}

pub fn represent(fp: &Fingerprint, pcfg: &PowedConfig, representation: Representation) -> Vec<f64> {
    match representation {
        Representation::Powed => powed_vector(fp, pcfg),
        Representation::Raw => raw_vector(fp, pcfg),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k: usize,
    pub variant: KnnVariant,
    pub representation: Representation,
}

impl KnnConfig {
    pub fn new(k: usize, variant: KnnVariant) -> Self {
        Self {
            k,
            variant,
            representation: Representation::Powed,
        }
    }
}

/// Training fingerprints in the feature space used for neighbour search.
#[derive(Debug, Clone)]
pub struct ReferenceSet {
    representation: Representation,
    features: Vec<Vec<f64>>,
    x: Vec<f64>,
    y: Vec<f64>,
    floor: Vec<i32>,
    building: Vec<i32>,
    ids: Vec<String>,
    all: Vec<usize>,
    by_building: BTreeMap<i32, Vec<usize>>,
}

impl ReferenceSet {
    pub fn new(train: &RadioMap, pcfg: &PowedConfig, representation: Representation) -> Self {
        let fps = train.fingerprints();
        let mut by_building: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
        for (i, fp) in fps.iter().enumerate() {
            by_building.entry(fp.building).or_default().push(i);
        }
        Self {
            representation,
            features: fps.iter().map(|f| represent(f, pcfg, representation)).collect(),
            x: fps.iter().map(|f| f.x).collect(),
            y: fps.iter().map(|f| f.y).collect(),
            floor: fps.iter().map(|f| f.floor).collect(),
            building: fps.iter().map(|f| f.building).collect(),
            ids: fps.iter().map(|f| f.id.clone()).collect(),
            all: (0..fps.len()).collect(),
            by_building,
        }
    }

    pub fn representation(&self) -> Representation {
        self.representation
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Feature length, zero for an empty set.
    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn features(&self, index: usize) -> &[f64] {
        &self.features[index]
    }

    pub fn position(&self, index: usize) -> (f64, f64) {
        (self.x[index], self.y[index])
    }

    pub fn floor(&self, index: usize) -> i32 {
        self.floor[index]
    }

    pub fn building(&self, index: usize) -> i32 {
        self.building[index]
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn all(&self) -> &[usize] {
        &self.all
    }

    pub fn building_members(&self, building: i32) -> Option<&[usize]> {
        self.by_building.get(&building).map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbour {
    pub index: usize,
    pub distance: f64,
}

fn by_distance(a: &Neighbour, b: &Neighbour) -> std::cmp::Ordering {
    a.distance
        .total_cmp(&b.distance)
        .then(a.index.cmp(&b.index))
}

/// The `min(k, members)` nearest members, ordered by `(distance, index)`.
/// With `include_ties`, members beyond the `k`-th at exactly its distance
/// are appended.
pub fn select_neighbours(
    query: &[f64],
    refs: &ReferenceSet,
    members: &[usize],
    k: usize,
    include_ties: bool,
) -> Result<Vec<Neighbour>, LocaliseError> {
    if k == 0 {
        return Err(LocaliseError::InvalidK);
    }
    if members.is_empty() {
        return Err(LocaliseError::NoMembers);
    }
    let mut all = Vec::with_capacity(members.len());
    for &index in members {
        all.push(Neighbour {
            index,
            distance: distance(query, &refs.features[index])?,
        });
    }
    let k = k.min(all.len());
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, by_distance);
    }
    let (head, tail) = all.split_at_mut(k);
    let kth = head.iter().map(|n| n.distance).fold(f64::NEG_INFINITY, f64::max);
    let mut out = head.to_vec();
    if include_ties {
        out.extend(tail.iter().filter(|n| n.distance == kth));
    }
    out.sort_unstable_by(by_distance);
    Ok(out)
}

/// Floor with the largest total vote; ties to the lowest label.
fn vote(votes: impl Iterator<Item = (i32, f64)>) -> i32 {
    let mut tally: BTreeMap<i32, f64> = BTreeMap::new();
    for (floor, w) in votes {
        *tally.entry(floor).or_default() += w;
    }
    let mut best: Option<(i32, f64)> = None;
    for (floor, w) in tally {
        if best.is_none_or(|(_, bw)| w > bw) {
            best = Some((floor, w));
        }
    }
    best.expect("at least one neighbour").0
}

fn unweighted(neigh: &[Neighbour], refs: &ReferenceSet) -> (f64, f64, i32) {
    let n = neigh.len() as f64;
    let x = neigh.iter().map(|nb| refs.x[nb.index]).sum::<f64>() / n;
    let y = neigh.iter().map(|nb| refs.y[nb.index]).sum::<f64>() / n;
    (x, y, vote(neigh.iter().map(|nb| (refs.floor[nb.index], 1.0))))
}

/// Combines selected neighbours into a position and floor.
pub fn combine(neigh: &[Neighbour], refs: &ReferenceSet, variant: KnnVariant) -> (f64, f64, i32) {
    match variant {
        KnnVariant::Knn => unweighted(neigh, refs),
        KnnVariant::Wknn | KnnVariant::WknnT => {
            let exact: Vec<Neighbour> = neigh
                .iter()
                .copied()
                .filter(|nb| nb.distance < ZERO_DISTANCE)
                .collect();
            if !exact.is_empty() {
                return unweighted(&exact, refs);
            }
            let w: Vec<f64> = neigh.iter().map(|nb| 1.0 / nb.distance).collect();
            let total: f64 = w.iter().sum();
            let x = neigh.iter().zip(&w).map(|(nb, w)| w * refs.x[nb.index]).sum::<f64>() / total;
            let y = neigh.iter().zip(&w).map(|(nb, w)| w * refs.y[nb.index]).sum::<f64>() / total;
            let floor = vote(neigh.iter().zip(&w).map(|(nb, &w)| (refs.floor[nb.index], w)));
            (x, y, floor)
        }
    }
}

/// Output of an [`Estimator`]: training indices of the neighbours used, if
/// any.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub x: f64,
    pub y: f64,
    pub floor: i32,
    pub neighbours: Vec<usize>,
}

/// Maps a query and a candidate set of training fingerprints to an
/// estimate. Implement this to plug an external regressor/classifier into
/// the pipeline.
pub trait Estimator: Send + Sync {
    fn estimate(
        &self,
        query: &[f64],
        refs: &ReferenceSet,
        members: &[usize],
    ) -> Result<Estimate, LocaliseError>;

    fn name(&self) -> String;

    /// The KNN settings, for estimators that have them.
    fn knn_config(&self) -> Option<KnnConfig> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnnEstimator(pub KnnConfig);

impl Estimator for KnnEstimator {
    fn estimate(
        &self,
        query: &[f64],
        refs: &ReferenceSet,
        members: &[usize],
    ) -> Result<Estimate, LocaliseError> {
        let cfg = self.0;
        let neigh = select_neighbours(query, refs, members, cfg.k, cfg.variant == KnnVariant::WknnT)?;
        let (x, y, floor) = combine(&neigh, refs, cfg.variant);
        Ok(Estimate {
            x,
            y,
            floor,
            neighbours: neigh.iter().map(|n| n.index).collect(),
        })
    }

    fn name(&self) -> String {
        format!("{}(k={})", self.0.variant, self.0.k)
    }

    fn knn_config(&self) -> Option<KnnConfig> {
        Some(self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionEstimate {
    pub x: f64,
    pub y: f64,
    pub floor: i32,
    pub cluster: Option<ClusterId>,
    pub neighbour_ids: Vec<String>,
}

/// Runs one KNN estimate of `query` against an ad-hoc member list.
pub fn knn_estimate(
    query: &Fingerprint,
    members: &[&Fingerprint],
    cfg: &KnnConfig,
    pcfg: &PowedConfig,
) -> Result<PositionEstimate, LocaliseError> {
    if members.is_empty() {
        return Err(LocaliseError::NoMembers);
    }
    let refs = ReferenceSet {
        representation: cfg.representation,
        features: members.iter().map(|f| represent(f, pcfg, cfg.representation)).collect(),
        x: members.iter().map(|f| f.x).collect(),
        y: members.iter().map(|f| f.y).collect(),
        floor: members.iter().map(|f| f.floor).collect(),
        building: members.iter().map(|f| f.building).collect(),
        ids: members.iter().map(|f| f.id.clone()).collect(),
        all: (0..members.len()).collect(),
        by_building: BTreeMap::new(),
    };
    let q = represent(query, pcfg, cfg.representation);
    let est = KnnEstimator(*cfg).estimate(&q, &refs, &refs.all)?;
    Ok(PositionEstimate {
        x: est.x,
        y: est.y,
        floor: est.floor,
        cluster: None,
        neighbour_ids: est.neighbours.iter().map(|&i| refs.ids[i].clone()).collect(),
    })
}

/// How a query's building is chosen before searching.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Routing {
    /// Use the query's labelled building.
    #[default]
    GroundTruth,
    /// Use [`BuildingRouter`].
    StrongestAp,
}

impl fmt::Display for Routing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Routing::GroundTruth => "ground-truth",
            Routing::StrongestAp => "strongest-ap",
        })
    }
}

impl std::str::FromStr for Routing {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ground-truth" | "groundtruth" => Ok(Self::GroundTruth),
            "strongest-ap" | "strongestap" => Ok(Self::StrongestAp),
            _ => Err(format!("unknown routing `{s}` (expected ground-truth or strongest-ap)")),
        }
    }
}

/// A table plus its per-building restrictions, built once per `(model, N)`.
#[derive(Debug, Clone)]
pub struct TableSet {
    global: ApCombinationTable,
    by_building: BTreeMap<i32, ApCombinationTable>,
}

impl TableSet {
    pub fn new(table: ApCombinationTable) -> Self {
        let buildings: std::collections::BTreeSet<i32> =
            table.clusters().iter().filter_map(|c| c.building).collect();
        let by_building = buildings
            .into_iter()
            .map(|b| (b, table.restrict_to_building(b)))
            .collect();
        Self {
            global: table,
            by_building,
        }
    }

    pub fn global(&self) -> &ApCombinationTable {
        &self.global
    }

    pub fn for_building(&self, building: i32) -> Option<&ApCombinationTable> {
        self.by_building.get(&building)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Mode<'a> {
    /// No clustering. Building level searches the whole building; floor level
    /// first votes a floor over the building, then searches that floor.
    Baseline { level: Level, pooled: bool },
    Clustered {
        model: &'a ClusterModel,
        tables: &'a TableSet,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub estimate: PositionEstimate,
    pub assignment: Option<Assignment>,
    pub assignment_time: Duration,
}

/// A trained model stack ready to answer queries.
pub struct Pipeline<'a> {
    refs: &'a ReferenceSet,
    pcfg: PowedConfig,
    estimator: &'a dyn Estimator,
    mode: Mode<'a>,
    routing: Routing,
    router: Option<&'a BuildingRouter>,
}

impl<'a> Pipeline<'a> {
    pub fn baseline(
        refs: &'a ReferenceSet,
        pcfg: PowedConfig,
        estimator: &'a dyn Estimator,
        level: Level,
    ) -> Self {
        Self {
            refs,
            pcfg,
            estimator,
            mode: Mode::Baseline { level, pooled: false },
            routing: Routing::GroundTruth,
            router: None,
        }
    }

    pub fn clustered(
        refs: &'a ReferenceSet,
        pcfg: PowedConfig,
        estimator: &'a dyn Estimator,
        model: &'a ClusterModel,
        tables: &'a TableSet,
    ) -> Self {
        Self {
            refs,
            pcfg,
            estimator,
            mode: Mode::Clustered { model, tables },
            routing: Routing::GroundTruth,
            router: None,
        }
    }

    /// Pools all buildings in baseline mode.
    pub fn pooled(mut self) -> Self {
        if let Mode::Baseline { level, .. } = self.mode {
            self.mode = Mode::Baseline { level, pooled: true };
        }
        self
    }

    pub fn with_router(mut self, router: &'a BuildingRouter) -> Self {
        self.routing = Routing::StrongestAp;
        self.router = Some(router);
        self
    }

    pub fn mode(&self) -> &Mode<'a> {
        &self.mode
    }

    pub fn routing(&self) -> Routing {
        self.routing
    }

    pub fn estimator(&self) -> &dyn Estimator {
        self.estimator
    }

    pub fn powed_config(&self) -> &PowedConfig {
        &self.pcfg
    }

    pub fn references(&self) -> &ReferenceSet {
        self.refs
    }

    fn building_of(&self, query: &Fingerprint) -> Result<i32, LocaliseError> {
        match (self.routing, self.router) {
            (Routing::StrongestAp, Some(router)) => Ok(router.route(query)?),
            _ => Ok(query.building),
        }
    }

    pub fn predict(&self, query: &Fingerprint) -> Result<PositionEstimate, LocaliseError> {
        self.predict_detailed(query).map(|p| p.estimate)
    }

    pub fn predict_detailed(&self, query: &Fingerprint) -> Result<Prediction, LocaliseError> {
        let q = represent(query, &self.pcfg, self.refs.representation);
        let refs = self.refs;
        let (est, cluster, assignment, assignment_time) = match self.mode {
            Mode::Baseline { level, pooled } => {
                let scope: &[usize] = if pooled {
                    refs.all()
                } else {
                    let b = self.building_of(query)?;
                    refs.building_members(b).ok_or(LocaliseError::UnknownBuilding(b))?
                };
                let est = match level {
                    Level::Building => self.estimator.estimate(&q, refs, scope)?,
                    Level::Floor => {
                        let floor = self.estimator.estimate(&q, refs, scope)?.floor;
                        let on_floor: Vec<usize> =
                            scope.iter().copied().filter(|&i| refs.floor[i] == floor).collect();
                        let mut est = self.estimator.estimate(&q, refs, &on_floor)?;
                        est.floor = floor;
                        est
                    }
                };
                (est, None, None, Duration::ZERO)
            }
            Mode::Clustered { model, tables } => {
                let table = if model.strategy().pooled && model.strategy().level == Level::Building {
                    tables.global()
                } else {
                    let b = self.building_of(query)?;
                    tables.for_building(b).ok_or(LocaliseError::UnknownBuilding(b))?
                };
                let started = Instant::now();
                let a = assign(query, table)?;
                let elapsed = started.elapsed();
                let mut est = self.estimator.estimate(&q, refs, model.members(a.cluster))?;
                if let Some(floor) = model.cluster_floor(a.cluster) {
                    est.floor = floor;
                }
                (est, Some(a.cluster), Some(a), elapsed)
            }
        };
        Ok(Prediction {
            estimate: PositionEstimate {
                x: est.x,
                y: est.y,
                floor: est.floor,
                cluster,
                neighbour_ids: est.neighbours.iter().map(|&i| refs.ids[i].clone()).collect(),
            },
            assignment,
            assignment_time,
        })
    }
}
