//! Cluster representatives built from strongest-AP combinations, and the
//! subset-scoring rule that routes an unseen fingerprint to a cluster.
//!
//! Training: each fingerprint contributes its `N` strongest APs as a set;
//! identical sets within a cluster are counted. Localisation: every
//! non-empty subset `S` of the query's strongest set credits each row whose
//! combination contains `S` with `freq · |S|`, and the best-scoring cluster
//! wins.
//!
//! A row sharing `c` APs with the query is matched by exactly the non-empty
//! subsets of those `c` APs, so its total credit is
//! `freq · Σ_{j=1..c} j·C(c, j) = freq · c · 2^(c−1)`. The scorer evaluates
//! that closed form over an inverted AP index instead of enumerating subsets.

use std::collections::{BTreeMap, HashMap};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{ClusterId, ClusterModel};
use crate::ingest::{Fingerprint, RadioMap};

/// Largest supported `N`; keeps `c · 2^(c−1) · freq` well inside `u64`.
pub const MAX_N: usize = 24;

#[derive(Debug, Error)]
pub enum AssignError {
    #[error("fingerprint `{0}` has no detected APs")]
    Undetectable(String),
    #[error("N must be in 1..={MAX_N}, got {0}")]
    InvalidN(usize),
    #[error("AP combination must be non-empty")]
    EmptyCombination,
    #[error("the representative table has no rows")]
    EmptyTable,
    #[error("cluster model does not match the training map: {0}")]
    Mismatch(String),
}

/// A non-empty set of AP indices in ascending order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct ApCombination(Vec<u32>);

impl ApCombination {
    pub fn new(aps: impl IntoIterator<Item = u32>) -> Result<Self, AssignError> {
        let mut v: Vec<u32> = aps.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        if v.is_empty() {
            return Err(AssignError::EmptyCombination);
        }
        Ok(Self(v))
    }

    pub fn aps(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, ap: u32) -> bool {
        self.0.binary_search(&ap).is_ok()
    }

    pub fn is_superset_of(&self, subset: &[u32]) -> bool {
        subset.iter().all(|&ap| self.contains(ap))
    }
}

impl TryFrom<Vec<u32>> for ApCombination {
    type Error = AssignError;

    fn try_from(v: Vec<u32>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<ApCombination> for Vec<u32> {
    fn from(c: ApCombination) -> Self {
        c.0
    }
}

/// The `min(n, detected)` strongest APs of `fp`. Equal readings prefer the
/// lower AP index.
pub fn top_n_aps(fp: &Fingerprint, n: usize) -> Result<ApCombination, AssignError> {
    if n == 0 || n > MAX_N {
        return Err(AssignError::InvalidN(n));
    }
    let mut detected: Vec<(usize, f64)> = fp.detected().collect();
    if detected.is_empty() {
        return Err(AssignError::Undetectable(fp.id.clone()));
    }
    let by_strength = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if detected.len() > n {
        detected.select_nth_unstable_by(n - 1, by_strength);
        detected.truncate(n);
    }
    ApCombination::new(detected.into_iter().map(|(ap, _)| ap as u32))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub combination: ApCombination,
    pub freq: u32,
    pub cluster: ClusterId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterInfo {
    pub id: ClusterId,
    /// All training members, detected or not.
    pub members: usize,
    pub building: Option<i32>,
    pub floor: Option<i32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TableRepr {
    n: usize,
    rows: Vec<TableRow>,
    clusters: Vec<ClusterInfo>,
    skipped_undetectable: usize,
    build_time_ms: f64,
    cluster_build_ms: Vec<f64>,
}

/// Every cluster's `(combination, frequency)` rows, concatenated.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "TableRepr", into = "TableRepr")]
pub struct ApCombinationTable {
    n: usize,
    rows: Vec<TableRow>,
    clusters: Vec<ClusterInfo>,
    skipped_undetectable: usize,
    build_time: Duration,
    cluster_build_times: Vec<Duration>,
    /// AP index → rows whose combination contains it.
    index: HashMap<u32, Vec<u32>>,
}

impl PartialEq for ApCombinationTable {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
            && self.rows == other.rows
            && self.clusters == other.clusters
            && self.skipped_undetectable == other.skipped_undetectable
    }
}

impl From<TableRepr> for ApCombinationTable {
    fn from(r: TableRepr) -> Self {
        Self::from_parts(
            r.n,
            r.rows,
            r.clusters,
            r.skipped_undetectable,
            Duration::from_secs_f64(r.build_time_ms.max(0.0) / 1e3),
            r.cluster_build_ms
                .into_iter()
                .map(|ms| Duration::from_secs_f64(ms.max(0.0) / 1e3))
                .collect(),
        )
    }
}

impl From<ApCombinationTable> for TableRepr {
    fn from(t: ApCombinationTable) -> Self {
        TableRepr {
            n: t.n,
            rows: t.rows,
            clusters: t.clusters,
            skipped_undetectable: t.skipped_undetectable,
            build_time_ms: t.build_time.as_secs_f64() * 1e3,
            cluster_build_ms: t
                .cluster_build_times
                .iter()
                .map(|d| d.as_secs_f64() * 1e3)
                .collect(),
        }
    }
}

impl ApCombinationTable {
    fn from_parts(
        n: usize,
        rows: Vec<TableRow>,
        mut clusters: Vec<ClusterInfo>,
        skipped_undetectable: usize,
        build_time: Duration,
        cluster_build_times: Vec<Duration>,
    ) -> Self {
        clusters.sort_by_key(|c| c.id);
        let mut index: HashMap<u32, Vec<u32>> = HashMap::new();
        for (r, row) in rows.iter().enumerate() {
            for &ap in row.combination.aps() {
                index.entry(ap).or_default().push(r as u32);
            }
        }
        Self {
            n,
            rows,
            clusters,
            skipped_undetectable,
            build_time,
            cluster_build_times,
            index,
        }
    }

    /// Builds a table from explicit rows, e.g. for testing. Cluster
    /// memberships default to the row frequency totals.
    pub fn from_rows(n: usize, rows: Vec<TableRow>) -> Result<Self, AssignError> {
        if n == 0 || n > MAX_N {
            return Err(AssignError::InvalidN(n));
        }
        let mut members: BTreeMap<ClusterId, usize> = BTreeMap::new();
        for r in &rows {
            *members.entry(r.cluster).or_default() += r.freq as usize;
        }
        let clusters = members
            .into_iter()
            .map(|(id, members)| ClusterInfo {
                id,
                members,
                building: None,
                floor: None,
            })
            .collect();
        Ok(Self::from_parts(n, rows, clusters, 0, Duration::ZERO, Vec::new()))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rows(&self) -> &[TableRow] {
        &self.rows
    }

    pub fn clusters(&self) -> &[ClusterInfo] {
        &self.clusters
    }

    pub fn cluster_info(&self, id: ClusterId) -> Option<&ClusterInfo> {
        self.clusters
            .binary_search_by_key(&id, |c| c.id)
            .ok()
            .map(|i| &self.clusters[i])
    }

    /// Training fingerprints left out because no AP was detected.
    pub fn skipped_undetectable(&self) -> usize {
        self.skipped_undetectable
    }

    pub fn build_time(&self) -> Duration {
        self.build_time
    }

    /// Construction time of each cluster's rows, in cluster order.
    pub fn cluster_build_times(&self) -> &[Duration] {
        &self.cluster_build_times
    }

    /// Σ freq of `cluster`'s rows.
    pub fn frequency_total(&self, cluster: ClusterId) -> usize {
        self.rows
            .iter()
            .filter(|r| r.cluster == cluster)
            .map(|r| r.freq as usize)
            .sum()
    }

    /// A table holding only the clusters of `building`.
    pub fn restrict_to_building(&self, building: i32) -> Self {
        let keep = |id: ClusterId| {
            self.cluster_info(id)
                .is_some_and(|c| c.building.is_none_or(|b| b == building))
        };
        let rows = self.rows.iter().filter(|r| keep(r.cluster)).cloned().collect();
        let clusters = self.clusters.iter().filter(|c| keep(c.id)).cloned().collect();
        Self::from_parts(
            self.n,
            rows,
            clusters,
            self.skipped_undetectable,
            self.build_time,
            self.cluster_build_times.clone(),
        )
    }
}

/// Counts every cluster's top-`n` combinations.
pub fn build_table(
    model: &ClusterModel,
    train: &RadioMap,
    n: usize,
) -> Result<ApCombinationTable, AssignError> {
    if n == 0 || n > MAX_N {
        return Err(AssignError::InvalidN(n));
    }
    model
        .check_compatible(train)
        .map_err(|e| AssignError::Mismatch(e.to_string()))?;
    let started = Instant::now();
    let fps = train.fingerprints();
    let mut rows = Vec::new();
    let mut clusters = Vec::new();
    let mut times = Vec::new();
    let mut skipped = 0;
    for id in model.cluster_ids() {
        let t = Instant::now();
        let mut counts: BTreeMap<ApCombination, u32> = BTreeMap::new();
        for &i in model.members(id) {
            match top_n_aps(&fps[i], n) {
                Ok(c) => *counts.entry(c).or_default() += 1,
                Err(AssignError::Undetectable(_)) => skipped += 1,
                Err(e) => return Err(e),
            }
        }
        rows.extend(counts.into_iter().map(|(combination, freq)| TableRow {
            combination,
            freq,
            cluster: id,
        }));
        let scope = model.scope(id);
        clusters.push(ClusterInfo {
            id,
            members: model.members(id).len(),
            building: scope.building,
            floor: model.cluster_floor(id),
        });
        times.push(t.elapsed());
    }
    Ok(ApCombinationTable::from_parts(
        n,
        rows,
        clusters,
        skipped,
        started.elapsed(),
        times,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub cluster: ClusterId,
    /// Non-zero cluster scores, ascending by cluster id.
    pub scores: Vec<(ClusterId, u64)>,
    /// No row matched; the largest cluster was chosen.
    pub fallback: bool,
}

impl Assignment {
    pub fn score_of(&self, cluster: ClusterId) -> u64 {
        self.scores
            .iter()
            .find(|(c, _)| *c == cluster)
            .map_or(0, |s| s.1)
    }
}

/// Credit of a row sharing `overlap` APs with the query.
fn row_credit(overlap: u32) -> u64 {
    if overlap == 0 {
        0
    } else {
        u64::from(overlap) << (overlap - 1)
    }
}

/// Picks the winning cluster from per-cluster scores. Ties prefer the
/// cluster with more training members, then the lower id. All-zero scores
/// fall back to the largest cluster.
pub fn select_cluster(
    scores: BTreeMap<ClusterId, u64>,
    table: &ApCombinationTable,
) -> Result<Assignment, AssignError> {
    let members = |id: ClusterId| table.cluster_info(id).map_or(0, |c| c.members);
    let scores: Vec<(ClusterId, u64)> = scores.into_iter().filter(|s| s.1 > 0).collect();
    let best = scores
        .iter()
        .copied()
        .max_by(|a, b| {
            a.1.cmp(&b.1)
                .then(members(a.0).cmp(&members(b.0)))
                .then(b.0.cmp(&a.0))
        });
    match best {
        Some((cluster, _)) => Ok(Assignment {
            cluster,
            scores,
            fallback: false,
        }),
        None => {
            let largest = table
                .clusters
                .iter()
                .max_by(|a, b| a.members.cmp(&b.members).then(b.id.cmp(&a.id)))
                .ok_or(AssignError::EmptyTable)?;
            Ok(Assignment {
                cluster: largest.id,
                scores,
                fallback: true,
            })
        }
    }
}

/// Routes `fp` to the best-scoring cluster of `table`.
pub fn assign(fp: &Fingerprint, table: &ApCombinationTable) -> Result<Assignment, AssignError> {
    if table.rows.is_empty() && table.clusters.is_empty() {
        return Err(AssignError::EmptyTable);
    }
    let query = top_n_aps(fp, table.n)?;
    let mut overlap: HashMap<u32, u32> = HashMap::new();
    for ap in query.aps() {
        if let Some(rows) = table.index.get(ap) {
            for &r in rows {
                *overlap.entry(r).or_default() += 1;
            }
        }
    }
    let mut scores: BTreeMap<ClusterId, u64> = BTreeMap::new();
    for (r, c) in overlap {
        let row = &table.rows[r as usize];
        *scores.entry(row.cluster).or_default() += u64::from(row.freq) * row_credit(c);
    }
    select_cluster(scores, table)
}

/// Guesses a query's building from its single strongest AP: the building in
/// which that AP was most often the strongest during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingRouter {
    votes: BTreeMap<u32, BTreeMap<i32, u32>>,
    default_building: i32,
}

impl BuildingRouter {
    pub fn fit(train: &RadioMap) -> Self {
        let mut votes: BTreeMap<u32, BTreeMap<i32, u32>> = BTreeMap::new();
        let mut sizes: BTreeMap<i32, usize> = BTreeMap::new();
        for fp in train.fingerprints() {
            *sizes.entry(fp.building).or_default() += 1;
            if let Ok(top) = top_n_aps(fp, 1) {
                *votes
                    .entry(top.aps()[0])
                    .or_default()
                    .entry(fp.building)
                    .or_default() += 1;
            }
        }
        let default_building = sizes
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map_or(0, |(&b, _)| b);
        Self {
            votes,
            default_building,
        }
    }

    pub fn route(&self, fp: &Fingerprint) -> Result<i32, AssignError> {
        let top = top_n_aps(fp, 1)?;
        Ok(self
            .votes
            .get(&top.aps()[0])
            .and_then(|v| v.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))))
            .map_or(self.default_building, |(&b, _)| b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fp(rssi: &[f64]) -> Fingerprint {
        Fingerprint {
            id: "q".into(),
            rssi: rssi.to_vec(),
            x: 0.0,
            y: 0.0,
            floor: 0,
            building: 0,
            sentinel: 100.0,
        }
    }

    fn cid(c: usize) -> ClusterId {
        ClusterId { scope: 0, cluster: c }
    }

    fn row(aps: &[u32], freq: u32, c: usize) -> TableRow {
        TableRow {
            combination: ApCombination::new(aps.iter().copied()).unwrap(),
            freq,
            cluster: cid(c),
        }
    }

    #[test]
    fn strongest_aps() {
        let top = top_n_aps(&fp(&[-40.0, -70.0, 100.0]), 2).unwrap();
        assert_eq!(top.aps(), &[0, 1]);
        let top = top_n_aps(&fp(&[-40.0, -40.0]), 1).unwrap();
        assert_eq!(top.aps(), &[0]);
        let top = top_n_aps(&fp(&[-80.0, 100.0, -20.0, -50.0]), 2).unwrap();
        assert_eq!(top.aps(), &[2, 3]);
        // Fewer detected than N.
        let top = top_n_aps(&fp(&[100.0, -60.0, 100.0]), 3).unwrap();
        assert_eq!(top.aps(), &[1]);
    }

    #[test]
    fn strongest_aps_errors() {
        assert!(matches!(
            top_n_aps(&fp(&[100.0, 100.0]), 2),
            Err(AssignError::Undetectable(_))
        ));
        assert!(matches!(top_n_aps(&fp(&[-1.0]), 0), Err(AssignError::InvalidN(0))));
    }

    #[test]
    fn combination_is_a_canonical_set() {
        let c = ApCombination::new([5, 1, 5, 3]).unwrap();
        assert_eq!(c.aps(), &[1, 3, 5]);
        assert!(c.is_superset_of(&[1, 5]));
        assert!(!c.is_superset_of(&[2]));
        assert!(ApCombination::new([]).is_err());
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(json, "[1,3,5]");
        assert!(serde_json::from_str::<ApCombination>("[]").is_err());
    }

    #[test]
    fn credit_closed_form() {
        // Σ_{j=1..c} j·C(c,j) for c = 0..5.
        let expected = [0u64, 1, 4, 12, 32, 80];
        for (c, e) in expected.iter().enumerate() {
            assert_eq!(row_credit(c as u32), *e);
        }
    }

    #[test]
    fn single_cluster_always_wins() {
        let t = ApCombinationTable::from_rows(2, vec![row(&[0, 1], 3, 0)]).unwrap();
        for q in [[-40.0, -50.0, -60.0], [100.0, 100.0, -60.0]] {
            let a = assign(&fp(&q), &t).unwrap();
            assert_eq!(a.cluster, cid(0));
        }
    }

    #[test]
    fn exact_match_wins() {
        let t = ApCombinationTable::from_rows(
            2,
            vec![row(&[0, 1], 1, 0), row(&[2, 3], 1, 1), row(&[4, 5], 1, 2)],
        )
        .unwrap();
        let a = assign(&fp(&[100.0, 100.0, -30.0, -35.0, -90.0, 100.0]), &t).unwrap();
        assert_eq!(a.cluster, cid(1));
        assert_eq!(a.scores, vec![(cid(1), 4)]);
        assert!(!a.fallback);
    }

    #[test]
    fn literal_scores() {
        // Query top-2 = {0, 1}. Row {0,1,2} matches {0},{1},{0,1}: 1+1+2 = 4 per freq.
        // Row {1,7} matches {1}: 1 per freq.
        let t = ApCombinationTable::from_rows(
            3,
            vec![row(&[0, 1, 2], 2, 0), row(&[1, 7, 8], 5, 1)],
        )
        .unwrap();
        let a = assign(&fp(&[-30.0, -31.0, 100.0]), &t).unwrap();
        assert_eq!(a.scores, vec![(cid(0), 8), (cid(1), 5)]);
        assert_eq!(a.cluster, cid(0));
    }

    #[test]
    fn ties_prefer_membership_then_lower_id() {
        let mut t = ApCombinationTable::from_rows(
            1,
            vec![row(&[0], 1, 0), row(&[0], 1, 1), row(&[9], 4, 1)],
        )
        .unwrap();
        // Cluster 1 has more members.
        assert_eq!(assign(&fp(&[-30.0]), &t).unwrap().cluster, cid(1));
        t = ApCombinationTable::from_rows(1, vec![row(&[0], 1, 2), row(&[0], 1, 1)]).unwrap();
        assert_eq!(assign(&fp(&[-30.0]), &t).unwrap().cluster, cid(1));
    }

    #[test]
    fn zero_score_falls_back_to_largest() {
        let t = ApCombinationTable::from_rows(1, vec![row(&[0], 1, 0), row(&[1], 9, 1)]).unwrap();
        let a = assign(&fp(&[100.0, 100.0, -50.0]), &t).unwrap();
        assert!(a.fallback);
        assert_eq!(a.cluster, cid(1));
        assert!(a.scores.is_empty());
    }

    #[test]
    fn empty_table_and_undetectable_query() {
        let t = ApCombinationTable::from_rows(1, vec![]).unwrap();
        assert!(matches!(assign(&fp(&[-50.0]), &t), Err(AssignError::EmptyTable)));
        let t = ApCombinationTable::from_rows(1, vec![row(&[0], 1, 0)]).unwrap();
        assert!(matches!(assign(&fp(&[100.0]), &t), Err(AssignError::Undetectable(_))));
    }

    #[test]
    fn table_serde_rebuilds_index() {
        let t = ApCombinationTable::from_rows(2, vec![row(&[0, 1], 2, 0), row(&[2, 3], 1, 1)]).unwrap();
        let back: ApCombinationTable = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        assert_eq!(back, t);
        let q = fp(&[100.0, 100.0, -40.0, -41.0]);
        assert_eq!(assign(&q, &back).unwrap(), assign(&q, &t).unwrap());
    }
}
