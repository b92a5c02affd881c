//! Feature representations of fingerprints.
//!
//! The powed mapping sends a dBm reading into `[0, 1]`:
//!
//! ```text
//! powed(rssi) = (rssi − min)^e / (−min)^e
//! ```
//!
//! where `min` is the training set's weakest detected reading minus 1 dBm and
//! `e` controls the curvature. Undetected APs map to 0.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Fingerprint, IngestError, Partition, RadioMap};

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("powed exponent must be positive and finite, got {0}")]
    Exponent(f64),
    #[error("powed minimum must be negative and finite, got {0}")]
    Minimum(f64),
    #[error("floor height must be positive and finite, got {0}")]
    FloorHeight(f64),
    #[error("the powed minimum must come from a training partition")]
    NotTraining,
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowedConfig {
    exponent: f64,
    min: f64,
}

impl PowedConfig {
    pub const DEFAULT_EXPONENT: f64 = std::f64::consts::E;

    pub fn new(exponent: f64, min: f64) -> Result<Self, TransformError> {
        if !(exponent > 0.0 && exponent.is_finite()) {
            return Err(TransformError::Exponent(exponent));
        }
        if !(min < 0.0 && min.is_finite()) {
            return Err(TransformError::Minimum(min));
        }
        Ok(Self { exponent, min })
    }

    /// Derives `min` from a training map. Test partitions are rejected so
    /// that train and test always share the training minimum.
    pub fn from_training(train: &RadioMap, exponent: f64) -> Result<Self, TransformError> {
        if train.partition() != Partition::Train {
            return Err(TransformError::NotTraining);
        }
        Self::new(exponent, train.global_min()?)
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    /// Powed value of a reading; `None` is an undetected AP.
    pub fn powed(&self, reading: Option<f64>) -> f64 {
        match reading {
            None => 0.0,
            Some(dbm) => {
                let clamped = dbm.clamp(self.min, 0.0);
                if clamped <= self.min {
                    return 0.0;
                }
                ((clamped - self.min) / -self.min).powf(self.exponent)
            }
        }
    }

    /// Raw dBm with undetected APs at `min` and readings clamped to `[min, 0]`.
    pub fn raw(&self, reading: Option<f64>) -> f64 {
        reading.map_or(self.min, |dbm| dbm.clamp(self.min, 0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSpace {
    Xyz,
    Rssi,
}

impl std::fmt::Display for FeatureSpace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FeatureSpace::Xyz => "xyz",
            FeatureSpace::Rssi => "rssi",
        })
    }
}

impl std::str::FromStr for FeatureSpace {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "xyz" => Ok(Self::Xyz),
            "rssi" => Ok(Self::Rssi),
            _ => Err(format!("unknown feature space `{s}` (expected xyz or rssi)")),
        }
    }
}

/// Everything needed to turn a fingerprint into a feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub powed: PowedConfig,
    /// Metres per floor for the z coordinate of XYZ features.
    pub floor_height: f64,
}

impl FeatureConfig {
    pub const DEFAULT_FLOOR_HEIGHT: f64 = 4.0;

    pub fn new(powed: PowedConfig, floor_height: f64) -> Result<Self, TransformError> {
        if !(floor_height > 0.0 && floor_height.is_finite()) {
            return Err(TransformError::FloorHeight(floor_height));
        }
        Ok(Self {
            powed,
            floor_height,
        })
    }
}

pub fn powed_vector(fp: &Fingerprint, cfg: &PowedConfig) -> Vec<f64> {
    (0..fp.rssi.len()).map(|ap| cfg.powed(fp.reading(ap))).collect()
}

pub fn raw_vector(fp: &Fingerprint, cfg: &PowedConfig) -> Vec<f64> {
    (0..fp.rssi.len()).map(|ap| cfg.raw(fp.reading(ap))).collect()
}

pub fn xyz_vector(fp: &Fingerprint, floor_height: f64) -> Vec<f64> {
    vec![fp.x, fp.y, fp.floor as f64 * floor_height]
}

pub fn features(fp: &Fingerprint, space: FeatureSpace, cfg: &FeatureConfig) -> Vec<f64> {
    match space {
        FeatureSpace::Xyz => xyz_vector(fp, cfg.floor_height),
        FeatureSpace::Rssi => powed_vector(fp, &cfg.powed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> PowedConfig {
        PowedConfig::new(PowedConfig::DEFAULT_EXPONENT, -105.0).unwrap()
    }

    fn fp(rssi: &[f64]) -> Fingerprint {
        Fingerprint {
            id: "q".into(),
            rssi: rssi.to_vec(),
            x: 2.0,
            y: 3.0,
            floor: 1,
            building: 0,
            sentinel: 100.0,
        }
    }

    #[test]
    fn endpoints() {
        let c = cfg();
        assert_eq!(c.powed(Some(-105.0)), 0.0);
        assert_eq!(c.powed(Some(0.0)), 1.0);
        assert_eq!(c.powed(None), 0.0);
        assert_eq!(c.powed(Some(-130.0)), 0.0);
        assert_eq!(c.powed(Some(7.0)), 1.0);
    }

    #[test]
    fn mid_value_matches_high_precision_reference() {
        // (55/105)^e evaluated with 40-digit arithmetic.
        let v = cfg().powed(Some(-50.0));
        assert!((v - 0.172_438_457_858_635_7).abs() < 1e-15, "{v}");
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(PowedConfig::new(0.0, -100.0).is_err());
        assert!(PowedConfig::new(f64::NAN, -100.0).is_err());
        assert!(PowedConfig::new(2.0, 0.0).is_err());
        assert!(FeatureConfig::new(cfg(), 0.0).is_err());
    }

    #[test]
    fn feature_vectors() {
        let fc = FeatureConfig::new(cfg(), 4.0).unwrap();
        assert_eq!(features(&fp(&[100.0]), FeatureSpace::Xyz, &fc), vec![2.0, 3.0, 4.0]);
        assert_eq!(
            features(&fp(&[100.0, 100.0, 100.0]), FeatureSpace::Rssi, &fc),
            vec![0.0; 3]
        );
        assert_eq!(
            features(&fp(&[100.0, 0.0, 100.0]), FeatureSpace::Rssi, &fc),
            vec![0.0, 1.0, 0.0]
        );
        assert_eq!(raw_vector(&fp(&[100.0, -40.0, -200.0]), &fc.powed), vec![-105.0, -40.0, -105.0]);
    }

    #[test]
    fn training_partition_required() {
        use crate::ingest::RadioMap;
        let names = vec!["WAP1".to_string()];
        let test = RadioMap::new(vec![fp(&[-50.0])], names.clone(), 100.0, Partition::Test).unwrap();
        assert!(matches!(
            PowedConfig::from_training(&test, 2.0),
            Err(TransformError::NotTraining)
        ));
        let train = RadioMap::new(vec![fp(&[-50.0])], names, 100.0, Partition::Train).unwrap();
        assert_eq!(PowedConfig::from_training(&train, 2.0).unwrap().min(), -51.0);
    }

    proptest! {
        #[test]
        fn range_and_monotonicity(a in -150.0f64..20.0, b in -150.0f64..20.0, e in 0.1f64..6.0) {
            let c = PowedConfig::new(e, -105.0).unwrap();
            let (pa, pb) = (c.powed(Some(a)), c.powed(Some(b)));
            prop_assert!((0.0..=1.0).contains(&pa));
            if -105.0 < a && a < b && b <= 0.0 {
                prop_assert!(pa < pb);
            }
        }
    }
}
