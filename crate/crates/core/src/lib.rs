//! Clustering-based Wi-Fi fingerprint indoor positioning.
//!
//! A training radio map is partitioned with K-Means per building or per
//! floor. Every cluster is summarised by the frequencies of its members'
//! strongest-AP combinations, and an unseen fingerprint is routed to the
//! cluster whose combinations best overlap its own strongest APs. Position
//! and floor are then estimated with KNN inside that cluster only.
//!
//! ```no_run
//! use clusterloc::prelude::*;
//!
//! let (train, test) = synth_radio_map(&SynthSpec::default(), 7)?;
//! let powed = PowedConfig::from_training(&train, PowedConfig::DEFAULT_EXPONENT)?;
//! let features = FeatureConfig::new(powed, FeatureConfig::DEFAULT_FLOOR_HEIGHT)?;
//! let strategy = ClusterStrategy::new(Level::Floor, FeatureSpace::Xyz, 4, 7);
//! let model = fit_clusters(&train, &strategy, &features)?;
//! let tables = TableSet::new(build_table(&model, &train, 3)?);
//! let refs = ReferenceSet::new(&train, &powed, Representation::Powed);
//! let knn = KnnEstimator(KnnConfig::new(3, KnnVariant::Wknn));
//! let pipeline = Pipeline::clustered(&refs, powed, &knn, &model, &tables);
//! let report = evaluate(&pipeline, &test)?;
//! println!("mean error {:.2} m", report.e2d.mean);
//! # Ok::<(), clusterloc::Error>(())
//! ```

pub mod assignment;
pub mod clustering;
pub mod evaluation;
pub mod ingest;
pub mod localisation;
pub mod transform;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Ingest(#[from] ingest::IngestError),
    #[error(transparent)]
    Transform(#[from] transform::TransformError),
    #[error(transparent)]
    Cluster(#[from] clustering::ClusterError),
    #[error(transparent)]
    Assign(#[from] assignment::AssignError),
    #[error(transparent)]
    Localise(#[from] localisation::LocaliseError),
    #[error(transparent)]
    Eval(#[from] evaluation::EvalError),
}

pub mod prelude {
    pub use crate::assignment::{
        assign, build_table, top_n_aps, ApCombination, ApCombinationTable, Assignment,
        BuildingRouter,
    };
    pub use crate::clustering::{fit_clusters, ClusterId, ClusterModel, ClusterStrategy, Level};
    pub use crate::evaluation::{evaluate, sweep, EvaluationReport, SweepGrid, SweepResult};
    pub use crate::ingest::{
        load_csv, synth_radio_map, DatasetSchema, Fingerprint, Partition, RadioMap, SynthSpec,
    };
    pub use crate::localisation::{
        knn_estimate, Estimator, KnnConfig, KnnEstimator, KnnVariant, Pipeline, PositionEstimate,
        ReferenceSet, Representation, TableSet,
    };
    pub use crate::transform::{FeatureConfig, FeatureSpace, PowedConfig};
}
