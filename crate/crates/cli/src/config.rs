use std::path::{Path, PathBuf};

use clusterloc::clustering::{ClusterStrategy, Level};
use clusterloc::evaluation::SweepGrid;
use clusterloc::ingest::SynthSpec;
use clusterloc::localisation::{KnnConfig, KnnVariant, Representation, Routing};
use clusterloc::transform::{FeatureConfig, FeatureSpace, PowedConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Everything a run needs. Loaded from TOML, then overridden by flags; the
/// resolved value is written next to every run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Training CSV, or a directory holding `trainingData.csv` and
    /// `validationData.csv`.
    pub dataset: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Preset name or path to a schema TOML.
    pub schema: String,
    pub level: Level,
    pub space: FeatureSpace,
    /// Unset means no clustering.
    pub k_clusters: Option<usize>,
    pub n_aps: usize,
    pub knn_k: usize,
    pub variant: KnnVariant,
    pub representation: Representation,
    pub exponent: f64,
    pub floor_height: f64,
    pub seed: u64,
    pub pooled: bool,
    pub routing: Routing,
    pub out: PathBuf,
    pub sweep: SweepAxes,
    pub synth: SynthSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            test: None,
            schema: "ujiindoorloc".into(),
            level: Level::Building,
            space: FeatureSpace::Rssi,
            k_clusters: None,
            n_aps: 2,
            knn_k: 3,
            variant: KnnVariant::WknnT,
            representation: Representation::Powed,
            exponent: PowedConfig::DEFAULT_EXPONENT,
            floor_height: FeatureConfig::DEFAULT_FLOOR_HEIGHT,
            seed: 0,
            pooled: false,
            routing: Routing::GroundTruth,
            out: PathBuf::from("out"),
            sweep: SweepAxes::default(),
            synth: SynthSpec::default(),
        }
    }
}

/// Sweep axes. Shared settings (seed, exponent, representation, ...) come
/// from the top level of the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepAxes {
    pub levels: Vec<Level>,
    pub spaces: Vec<FeatureSpace>,
    pub n_aps: Vec<usize>,
    pub k_clusters: Vec<usize>,
    pub knn_k: Vec<usize>,
    pub variants: Vec<KnnVariant>,
    pub baseline: bool,
}

impl Default for SweepAxes {
    fn default() -> Self {
        let g = SweepGrid::default();
        Self {
            levels: g.levels,
            spaces: g.spaces,
            n_aps: g.n_aps,
            k_clusters: g.k_clusters,
            knn_k: g.knn_k,
            variants: g.variants,
            baseline: g.baseline,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("cannot serialise config: {e}")))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.k_clusters == Some(0) {
            return bad("k_clusters must be at least 1".into());
        }
        if self.n_aps == 0 || self.n_aps > clusterloc::assignment::MAX_N {
            return bad(format!("n_aps must be in 1..={}", clusterloc::assignment::MAX_N));
        }
        if self.knn_k == 0 {
            return bad("knn_k must be at least 1".into());
        }
        if !(self.exponent > 0.0 && self.exponent.is_finite()) {
            return bad(format!("exponent must be positive, got {}", self.exponent));
        }
        if !(self.floor_height > 0.0 && self.floor_height.is_finite()) {
            return bad(format!("floor_height must be positive, got {}", self.floor_height));
        }
        if self.sweep.n_aps.iter().any(|&n| n > clusterloc::assignment::MAX_N) {
            return bad(format!("sweep n_aps must be in 1..={}", clusterloc::assignment::MAX_N));
        }
        Ok(())
    }

    /// Training and test CSV paths.
    pub fn data_paths(&self) -> Result<(PathBuf, Option<PathBuf>), CliError> {
        let Some(dataset) = &self.dataset else {
            return Err(CliError::Config("no dataset given (--dataset or `dataset` in the config)".into()));
        };
        if dataset.is_dir() {
            let test = self.test.clone().unwrap_or_else(|| dataset.join("validationData.csv"));
            return Ok((dataset.join("trainingData.csv"), Some(test)));
        }
        Ok((dataset.clone(), self.test.clone()))
    }

    pub fn strategy(&self) -> Result<ClusterStrategy, CliError> {
        let k = self
            .k_clusters
            .ok_or_else(|| CliError::Config("k_clusters is required here (--k-clusters)".into()))?;
        Ok(ClusterStrategy {
            pooled: self.pooled,
            ..ClusterStrategy::new(self.level, self.space, k, self.seed)
        })
    }

    pub fn knn(&self) -> KnnConfig {
        KnnConfig {
            k: self.knn_k,
            variant: self.variant,
            representation: self.representation,
        }
    }

    pub fn grid(&self) -> SweepGrid {
        let a = &self.sweep;
        SweepGrid {
            levels: a.levels.clone(),
            spaces: a.spaces.clone(),
            n_aps: a.n_aps.clone(),
            k_clusters: a.k_clusters.clone(),
            knn_k: a.knn_k.clone(),
            variants: a.variants.clone(),
            baseline: a.baseline,
            representation: self.representation,
            exponent: self.exponent,
            floor_height: self.floor_height,
            seed: self.seed,
            pooled: self.pooled,
            routing: self.routing,
            ..SweepGrid::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let c = RunConfig {
            dataset: Some("data/train.csv".into()),
            k_clusters: Some(3),
            ..RunConfig::default()
        };
        let back: RunConfig = toml::from_str(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("levle = \"floor\"").is_err());
        assert!(toml::from_str::<RunConfig>("[sweep]\nk = [1]").is_err());
    }
}
