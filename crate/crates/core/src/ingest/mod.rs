//! Fingerprint datasets: the in-memory radio map, CSV loading and export,
//! and a log-distance path-loss generator for offline experiments.
//!
//! Raw readings are kept exactly as they appear in the source file. A reading
//! equal to the dataset's sentinel (100 in UJIIndoorLoc) means "AP not
//! detected"; it is only mapped to a number by [`crate::transform`].

mod csv_io;
mod schema;
mod synth;

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use csv_io::{load_csv, write_csv};
pub use schema::DatasetSchema;
pub use synth::{path_loss_rssi, synth_radio_map, ApSite, SynthSpec};

/// Weakest and strongest plausible detected RSSI, in dBm.
pub const RSSI_FLOOR_DBM: f64 = -110.0;
pub const RSSI_CEIL_DBM: f64 = 0.0;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot open {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: no AP columns with prefix `{prefix}`")]
    NoApColumns { path: PathBuf, prefix: String },
    #[error("line {line}: cannot parse `{value}` in column `{column}`")]
    Parse {
        line: u64,
        column: String,
        value: String,
    },
    #[error("line {line}: reading {value} in column `{column}` is neither the sentinel nor within [-110, 0] dBm")]
    OutOfRange { line: u64, column: String, value: f64 },
    #[error("{0}: dataset has no rows")]
    EmptyDataset(PathBuf),
    #[error("fingerprint `{id}` has {found} readings, expected {expected}")]
    ApCountMismatch {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("radio map must have at least one AP")]
    NoAps,
    #[error("radio map has no fingerprints")]
    NoFingerprints,
    #[error("no detected readings in the dataset")]
    NoDetectedReadings,
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("unknown schema preset `{0}` (expected ujiindoorloc, utsindoorloc or tut-generic)")]
    UnknownPreset(String),
    #[error("invalid synthetic spec: {0}")]
    Synth(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Test,
}

/// One Wi-Fi scan with its ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint {
    pub id: String,
    /// Raw readings, one per AP, in dBm or equal to `sentinel`.
    pub rssi: Vec<f64>,
    pub x: f64,
    pub y: f64,
    pub floor: i32,
    pub building: i32,
    /// The raw value meaning "not detected".
    pub sentinel: f64,
}

impl Fingerprint {
    pub fn is_detected(&self, raw: f64) -> bool {
        raw != self.sentinel && !raw.is_nan()
    }

    /// The reading of AP `ap`, or `None` if it was not detected.
    pub fn reading(&self, ap: usize) -> Option<f64> {
        let raw = self.rssi[ap];
        self.is_detected(raw).then_some(raw)
    }

    /// Detected `(ap index, dBm)` pairs in AP order.
    pub fn detected(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.rssi
            .iter()
            .enumerate()
            .filter(|(_, &v)| self.is_detected(v))
            .map(|(i, &v)| (i, v))
    }

    pub fn detected_count(&self) -> usize {
        self.detected().count()
    }

    pub fn sentinel_count(&self) -> usize {
        self.rssi.len() - self.detected_count()
    }
}

/// An immutable, validated set of fingerprints over a fixed AP registry.
#[derive(Debug, Clone, PartialEq)]
pub struct RadioMap {
    fingerprints: Vec<Fingerprint>,
    ap_names: Vec<String>,
    sentinel: f64,
    partition: Partition,
}

impl RadioMap {
    /// Validates every fingerprint against the AP registry and the plausible
    /// dBm range. Each fingerprint's sentinel is overwritten with `sentinel`.
    pub fn new(
        mut fingerprints: Vec<Fingerprint>,
        ap_names: Vec<String>,
        sentinel: f64,
        partition: Partition,
    ) -> Result<Self, IngestError> {
        if ap_names.is_empty() {
            return Err(IngestError::NoAps);
        }
        if fingerprints.is_empty() {
            return Err(IngestError::NoFingerprints);
        }
        for fp in &mut fingerprints {
            fp.sentinel = sentinel;
            if fp.rssi.len() != ap_names.len() {
                return Err(IngestError::ApCountMismatch {
                    id: fp.id.clone(),
                    expected: ap_names.len(),
                    found: fp.rssi.len(),
                });
            }
            if let Some((ap, value)) = fp
                .detected()
                .find(|&(_, v)| !(RSSI_FLOOR_DBM..=RSSI_CEIL_DBM).contains(&v))
            {
                return Err(IngestError::OutOfRange {
                    line: 0,
                    column: ap_names[ap].clone(),
                    value,
                });
            }
        }
        Ok(Self {
            fingerprints,
            ap_names,
            sentinel,
            partition,
        })
    }

    pub fn fingerprints(&self) -> &[Fingerprint] {
        &self.fingerprints
    }

    pub fn len(&self) -> usize {
        self.fingerprints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fingerprints.is_empty()
    }

    pub fn ap_count(&self) -> usize {
        self.ap_names.len()
    }

    pub fn ap_names(&self) -> &[String] {
        &self.ap_names
    }

    pub fn sentinel(&self) -> f64 {
        self.sentinel
    }

    pub fn partition(&self) -> Partition {
        self.partition
    }

    pub fn floors(&self) -> BTreeSet<i32> {
        self.fingerprints.iter().map(|f| f.floor).collect()
    }

    pub fn buildings(&self) -> BTreeSet<i32> {
        self.fingerprints.iter().map(|f| f.building).collect()
    }

    pub fn sentinel_count(&self) -> usize {
        self.fingerprints.iter().map(Fingerprint::sentinel_count).sum()
    }

    /// See [`compute_global_min`].
    pub fn global_min(&self) -> Result<f64, IngestError> {
        compute_global_min(self)
    }
}

/// Minimum detected RSSI in `train` minus 1 dBm.
pub fn compute_global_min(train: &RadioMap) -> Result<f64, IngestError> {
    train
        .fingerprints
        .iter()
        .flat_map(|fp| fp.detected().map(|(_, v)| v))
        .min_by(f64::total_cmp)
        .map(|m| m - 1.0)
        .ok_or(IngestError::NoDetectedReadings)
}
