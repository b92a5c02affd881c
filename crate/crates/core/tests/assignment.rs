use std::collections::{BTreeMap, HashMap};

use clusterloc::assignment::{
    assign, build_table, top_n_aps, ApCombination, ApCombinationTable, TableRow,
};
use clusterloc::clustering::{fit_clusters, ClusterId, ClusterStrategy, Level};
use clusterloc::ingest::{synth_radio_map, Fingerprint, SynthSpec};
use clusterloc::transform::{FeatureConfig, FeatureSpace, PowedConfig};
use proptest::prelude::*;

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

fn combo(aps: &[u32]) -> ApCombination {
    ApCombination::new(aps.iter().copied()).unwrap()
}

fn cid(c: usize) -> ClusterId {
    ClusterId { scope: 0, cluster: c }
}

#[test]
fn top_n_examples() {
    assert_eq!(top_n_aps(&fp(&[-40.0, -70.0, 100.0]), 2).unwrap(), combo(&[0, 1]));
    assert_eq!(top_n_aps(&fp(&[-40.0, -40.0]), 1).unwrap(), combo(&[0]));
    assert!(top_n_aps(&fp(&[100.0, 100.0]), 1).is_err());
}

proptest! {
    #[test]
    fn top_n_equals_full_sort(
        readings in prop::collection::vec(prop_oneof![Just(100.0), (-100i32..=-20).prop_map(f64::from)], 10),
        n in 1usize..=5,
    ) {
        let f = fp(&readings);
        let mut detected: Vec<(usize, f64)> = readings
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 100.0)
            .map(|(i, &v)| (i, v))
            .collect();
        prop_assume!(!detected.is_empty());
        detected.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let want: Vec<u32> = detected.iter().take(n).map(|&(i, _)| i as u32).collect();
        prop_assert_eq!(top_n_aps(&f, n).unwrap(), combo(&want));
    }

    /// The closed-form row credit agrees with explicit subset enumeration.
    #[test]
    fn scores_equal_subset_enumeration(
        rows in prop::collection::vec(
            (prop::collection::btree_set(0u32..8, 1..=4), 1u32..10, 0usize..3),
            1..12,
        ),
        readings in prop::collection::vec(prop_oneof![Just(100.0), (-90i32..=-30).prop_map(f64::from)], 8),
        n in 1usize..=4,
    ) {
        prop_assume!(readings.iter().any(|&v| v != 100.0));
        let table_rows: Vec<TableRow> = rows
            .iter()
            .map(|(aps, freq, c)| TableRow {
                combination: ApCombination::new(aps.iter().copied()).unwrap(),
                freq: *freq,
                cluster: cid(*c),
            })
            .collect();
        let table = ApCombinationTable::from_rows(n, table_rows).unwrap();
        let q = fp(&readings);
        let top = top_n_aps(&q, n).unwrap();
        let mut want: BTreeMap<ClusterId, u64> = BTreeMap::new();
        for mask in 1u32..(1 << top.len()) {
            let subset: Vec<u32> = top
                .aps()
                .iter()
                .enumerate()
                .filter(|(b, _)| mask & (1 << b) != 0)
                .map(|(_, &a)| a)
                .collect();
            for (aps, freq, c) in &rows {
                if subset.iter().all(|a| aps.contains(a)) {
                    *want.entry(cid(*c)).or_default() += u64::from(*freq) * subset.len() as u64;
                }
            }
        }
        let got = assign(&q, &table).unwrap();
        for (c, s) in want {
            prop_assert_eq!(got.score_of(c), s);
        }
    }
}

#[test]
fn single_cluster_table_takes_every_query() {
    let table = ApCombinationTable::from_rows(
        2,
        vec![TableRow {
            combination: combo(&[0, 1]),
            freq: 3,
            cluster: cid(0),
        }],
    )
    .unwrap();
    for q in [[-40.0, -50.0, 100.0], [100.0, 100.0, -30.0], [-90.0, 100.0, -20.0]] {
        assert_eq!(assign(&fp(&q), &table).unwrap().cluster, cid(0));
    }
}

#[test]
fn unique_combination_wins_its_cluster() {
    let table = ApCombinationTable::from_rows(
        2,
        vec![
            TableRow {
                combination: combo(&[0, 1]),
                freq: 1,
                cluster: cid(0),
            },
            TableRow {
                combination: combo(&[2, 3]),
                freq: 50,
                cluster: cid(1),
            },
        ],
    )
    .unwrap();
    let a = assign(&fp(&[-40.0, -45.0, 100.0, 100.0]), &table).unwrap();
    assert_eq!(a.cluster, cid(0));
    assert_eq!(a.score_of(cid(0)), 4);
    assert_eq!(a.score_of(cid(1)), 0);
    assert!(!a.fallback);
}

#[test]
fn table_matches_naive_recount() {
    let spec = SynthSpec {
        buildings: 1,
        floors: 2,
        width: 24.0,
        depth: 20.0,
        ap_count: 25,
        detection_threshold: -85.0,
        ..SynthSpec::default()
    };
    let (train, _) = synth_radio_map(&spec, 12).unwrap();
    assert!(train.len() >= 200);
    let p = PowedConfig::from_training(&train, PowedConfig::DEFAULT_EXPONENT).unwrap();
    let cfg = FeatureConfig::new(p, 4.0).unwrap();
    let model = fit_clusters(&train, &ClusterStrategy::new(Level::Building, FeatureSpace::Rssi, 4, 12), &cfg).unwrap();
    for n in 1..=5 {
        let table = build_table(&model, &train, n).unwrap();
        let mut want: HashMap<(ClusterId, Vec<u32>), u32> = HashMap::new();
        let mut skipped = 0;
        for (i, f) in train.fingerprints().iter().enumerate() {
            let mut d: Vec<(usize, f64)> = f.detected().collect();
            if d.is_empty() {
                skipped += 1;
                continue;
            }
            d.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            let mut aps: Vec<u32> = d.iter().take(n).map(|&(a, _)| a as u32).collect();
            aps.sort_unstable();
            *want.entry((model.assignment(i), aps)).or_default() += 1;
        }
        let got: HashMap<(ClusterId, Vec<u32>), u32> = table
            .rows()
            .iter()
            .map(|r| ((r.cluster, r.combination.aps().to_vec()), r.freq))
            .collect();
        assert_eq!(got.len(), table.rows().len(), "duplicate rows at N={n}");
        assert_eq!(got, want, "N={n}");
        assert_eq!(table.skipped_undetectable(), skipped);
    }
}

#[test]
fn table_round_trips_through_json() {
    let (train, _) = synth_radio_map(&SynthSpec::default(), 13).unwrap();
    let p = PowedConfig::from_training(&train, PowedConfig::DEFAULT_EXPONENT).unwrap();
    let cfg = FeatureConfig::new(p, 4.0).unwrap();
    let model = fit_clusters(&train, &ClusterStrategy::new(Level::Floor, FeatureSpace::Xyz, 2, 13), &cfg).unwrap();
    let table = build_table(&model, &train, 3).unwrap();
    let back: ApCombinationTable = serde_json::from_str(&serde_json::to_string(&table).unwrap()).unwrap();
    assert_eq!(back, table);
    for f in train.fingerprints().iter().take(50) {
        assert_eq!(assign(f, &back).unwrap(), assign(f, &table).unwrap());
    }
}
