mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use clusterloc::assignment::{build_table, ApCombinationTable, BuildingRouter};
use clusterloc::clustering::{fit_clusters, ClusterError, ClusterModel, Level};
use clusterloc::evaluation::{
    evaluate, summary_rows, sweep, write_cdf_svg, write_report_json, write_rows_csv,
    write_samples_csv, write_summary_csv, EvalError, EvaluationReport,
};
use clusterloc::ingest::{load_csv, synth_radio_map, write_csv, DatasetSchema, Partition, RadioMap};
use clusterloc::localisation::{KnnEstimator, KnnVariant, Pipeline, ReferenceSet, Representation, Routing, TableSet};
use clusterloc::transform::{FeatureConfig, FeatureSpace, PowedConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Infeasible(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Infeasible(_) => 3,
        }
    }
}

impl From<clusterloc::Error> for CliError {
    fn from(e: clusterloc::Error) -> Self {
        use clusterloc::Error as E;
        let msg = e.to_string();
        match e {
            E::Cluster(ClusterError::InfeasibleK { .. })
            | E::Eval(EvalError::Cluster(ClusterError::InfeasibleK { .. })) => CliError::Infeasible(msg),
            E::Cluster(ClusterError::InvalidParams(_)) | E::Eval(EvalError::Grid(_)) => CliError::Config(msg),
            E::Ingest(clusterloc::ingest::IngestError::UnknownPreset(_))
            | E::Ingest(clusterloc::ingest::IngestError::Schema(_)) => CliError::Config(msg),
            _ => CliError::Data(msg),
        }
    }
}

macro_rules! via_core_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                clusterloc::Error::from(e).into()
            }
        }
    )*};
}

via_core_error!(
    clusterloc::ingest::IngestError,
    clusterloc::transform::TransformError,
    ClusterError,
    clusterloc::assignment::AssignError,
    clusterloc::localisation::LocaliseError,
    EvalError
);

/// Clustering-based Wi-Fi fingerprint positioning.
#[derive(Debug, Parser)]
#[command(name = "clusterloc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load a dataset, print its shape and write it back in canonical form.
    Ingest(Flags),
    /// Fit a cluster model and its AP combination table into a bundle.
    Fit(Flags),
    /// Evaluate one configuration on the test partition.
    Evaluate {
        #[command(flatten)]
        flags: Flags,
        /// Bundle written by `fit`; otherwise the model is fitted here.
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
    /// Evaluate every cell of a hyperparameter grid.
    Sweep {
        #[command(flatten)]
        flags: Flags,
        /// Leave out the unclustered cells.
        #[arg(long)]
        no_baseline: bool,
    },
    /// Generate a synthetic radio map.
    Synth(Flags),
}

/// Flags override the config file. List flags take comma-separated values;
/// only `sweep` accepts more than one.
#[derive(Debug, Args)]
struct Flags {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training CSV, or a directory with trainingData.csv and validationData.csv.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    /// Preset (ujiindoorloc, utsindoorloc, tut-generic) or schema TOML path.
    #[arg(long)]
    schema: Option<String>,
    #[arg(long, value_delimiter = ',')]
    level: Vec<Level>,
    #[arg(long, value_delimiter = ',')]
    space: Vec<FeatureSpace>,
    #[arg(long, value_delimiter = ',')]
    k_clusters: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    n_aps: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    knn_k: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    variant: Vec<KnnVariant>,
    #[arg(long)]
    representation: Option<Representation>,
    #[arg(long)]
    exponent: Option<f64>,
    #[arg(long)]
    floor_height: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    routing: Option<Routing>,
    /// Building level: cluster or search all buildings together.
    #[arg(long)]
    pooled: bool,
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn set<T: Clone>(dst: &mut Vec<T>, src: &[T]) {
    if !src.is_empty() {
        *dst = src.to_vec();
    }
}

fn single<T: Copy>(name: &str, values: &[T]) -> Result<Option<T>, CliError> {
    match values {
        [] => Ok(None),
        [v] => Ok(Some(*v)),
        _ => Err(CliError::Config(format!("--{name} takes one value outside `sweep`"))),
    }
}

impl Flags {
    fn resolve(&self, for_sweep: bool) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.dataset {
            c.dataset = Some(v.clone());
        }
        if let Some(v) = &self.test {
            c.test = Some(v.clone());
        }
        if let Some(v) = &self.schema {
            c.schema = v.clone();
        }
        if let Some(v) = self.representation {
            c.representation = v;
        }
        if let Some(v) = self.exponent {
            c.exponent = v;
        }
        if let Some(v) = self.floor_height {
            c.floor_height = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.routing {
            c.routing = v;
        }
        if let Some(v) = &self.out {
            c.out = v.clone();
        }
        c.pooled |= self.pooled;

        if for_sweep {
            let s = &mut c.sweep;
            set(&mut s.levels, &self.level);
            set(&mut s.spaces, &self.space);
            set(&mut s.k_clusters, &self.k_clusters);
            set(&mut s.n_aps, &self.n_aps);
            set(&mut s.knn_k, &self.knn_k);
            set(&mut s.variants, &self.variant);
        } else {
            if let Some(v) = single("level", &self.level)? {
                c.level = v;
            }
            if let Some(v) = single("space", &self.space)? {
                c.space = v;
            }
            if let Some(v) = single("k-clusters", &self.k_clusters)? {
                c.k_clusters = Some(v);
            }
            if let Some(v) = single("n-aps", &self.n_aps)? {
                c.n_aps = v;
            }
            if let Some(v) = single("knn-k", &self.knn_k)? {
                c.knn_k = v;
            }
            if let Some(v) = single("variant", &self.variant)? {
                c.variant = v;
            }
        }
        c.validate()?;
        if let Some(jobs) = self.jobs {
            if jobs == 0 {
                return Err(CliError::Config("--jobs must be at least 1".into()));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build_global()
                .map_err(|e| CliError::Config(format!("cannot size the worker pool: {e}")))?;
        }
        Ok(c)
    }
}

/// A fitted model with its table and the config that produced it.
#[derive(Debug, Serialize, Deserialize)]
struct Bundle {
    config: RunConfig,
    model: ClusterModel,
    table: ApCombinationTable,
}

fn out_dir(c: &RunConfig) -> Result<&Path, CliError> {
    std::fs::create_dir_all(&c.out)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", c.out.display())))?;
    Ok(&c.out)
}

fn write_snapshot(c: &RunConfig) -> Result<(), CliError> {
    let path = out_dir(c)?.join("config.toml");
    std::fs::write(&path, c.to_toml()?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load(c: &RunConfig, need_test: bool) -> Result<(RadioMap, Option<RadioMap>), CliError> {
    let schema = DatasetSchema::resolve(&c.schema)?;
    let (train_path, test_path) = c.data_paths()?;
    let train = load_csv(&train_path, &schema, Partition::Train)?;
    let test = match test_path {
        Some(p) => Some(load_csv(&p, &schema, Partition::Test)?),
        None if need_test => {
            return Err(CliError::Config("no test partition given (--test)".into()));
        }
        None => None,
    };
    Ok((train, test))
}

fn cmd_ingest(c: &RunConfig) -> Result<(), CliError> {
    let (train, test) = load(c, false)?;
    println!(
        "APs: {}, train: {}, test: {}",
        train.ap_count(),
        train.len(),
        test.as_ref().map_or(0, RadioMap::len)
    );
    println!(
        "buildings: {}, floors: {}, global_min: {} dBm",
        train.buildings().len(),
        train.floors().len(),
        train.global_min()?
    );
    let schema = DatasetSchema::resolve(&c.schema)?;
    let dir = out_dir(c)?;
    write_csv(&train, &schema, &dir.join("train.csv"))?;
    if let Some(test) = &test {
        write_csv(test, &schema, &dir.join("test.csv"))?;
    }
    write_snapshot(c)
}

fn fit(c: &RunConfig, train: &RadioMap) -> Result<(ClusterModel, ApCombinationTable), CliError> {
    let pcfg = PowedConfig::from_training(train, c.exponent)?;
    let fcfg = FeatureConfig::new(pcfg, c.floor_height)?;
    let model = fit_clusters(train, &c.strategy()?, &fcfg)?;
    let table = build_table(&model, train, c.n_aps)?;
    Ok((model, table))
}

fn cmd_fit(c: &RunConfig) -> Result<(), CliError> {
    let (train, _) = load(c, false)?;
    let (model, table) = fit(c, &train)?;
    println!(
        "clusters: {}, creation time: {:.3} ms, table build: {:.3} ms",
        model.cluster_count(),
        model.creation_time().as_secs_f64() * 1e3,
        table.build_time().as_secs_f64() * 1e3
    );
    let path = out_dir(c)?.join("bundle.json");
    let bundle = Bundle {
        config: c.clone(),
        model,
        table,
    };
    write_report_json(&bundle, &path)?;
    println!("wrote {}", path.display());
    write_snapshot(c)
}

fn read_bundle(path: &Path) -> Result<Bundle, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn print_report(label: &str, r: &EvaluationReport) {
    print!("{label}: e2D {:.3} m (p50 {:.3}, p95 {:.3})", r.e2d.mean, r.e2d.p50, r.e2d.p95);
    if let Some(cf) = r.e2d_cf {
        print!(", e2D|cf {:.3} m", cf.mean);
    }
    println!(
        ", FDR {:.4}, evaluated {}, skipped {}, fallbacks {}",
        r.fdr, r.evaluated, r.skipped_undetectable, r.fallbacks
    );
}

fn cmd_evaluate(c: &RunConfig, bundle: Option<&Path>) -> Result<(), CliError> {
    let (train, test) = load(c, true)?;
    let test = test.expect("required");
    let fitted = match bundle {
        Some(p) => {
            let b = read_bundle(p)?;
            b.model.check_compatible(&train)?;
            Some((b.model, b.table))
        }
        None if c.k_clusters.is_some() => Some(fit(c, &train)?),
        None => None,
    };
    let pcfg = match &fitted {
        Some((model, _)) => model.feature_config().powed,
        None => PowedConfig::from_training(&train, c.exponent)?,
    };
    let refs = ReferenceSet::new(&train, &pcfg, c.representation);
    let estimator = KnnEstimator(c.knn());
    let router = (c.routing == Routing::StrongestAp).then(|| BuildingRouter::fit(&train));
    let tables = fitted.as_ref().map(|(_, t)| TableSet::new(t.clone()));
    let pipeline = match (&fitted, &tables) {
        (Some((model, _)), Some(tables)) => Pipeline::clustered(&refs, pcfg, &estimator, model, tables),
        _ => {
            let p = Pipeline::baseline(&refs, pcfg, &estimator, c.level);
            if c.pooled {
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
    let report = evaluate(&pipeline, &test)?;
    print_report(&report.config.mode, &report);

    let dir = out_dir(c)?;
    write_report_json(&report, &dir.join("report.json"))?;
    write_samples_csv(&report, &dir.join("samples.csv"))?;
    let errors = report.samples.iter().map(|s| s.e2d).collect();
    write_cdf_svg(&[(report.config.mode.clone(), errors)], &dir.join("cdf.svg"))?;
    write_snapshot(c)
}

fn cmd_sweep(c: &RunConfig) -> Result<(), CliError> {
    let (train, test) = load(c, true)?;
    let test = test.expect("required");
    let result = sweep(&train, &test, &c.grid())?;
    let rows = summary_rows(&result);

    let dir = out_dir(c)?;
    write_summary_csv(&rows, &dir.join("summary.csv"))?;
    write_rows_csv(&result, &dir.join("rows.csv"))?;
    write_report_json(&result, &dir.join("sweep.json"))?;

    // One CDF curve per approach, from its best cell.
    let mut best: Vec<(String, &EvaluationReport)> = Vec::new();
    for (cell, r) in result.reports() {
        let label = cell.space.map_or_else(|| "baseline".to_string(), |s| s.to_string());
        match best.iter_mut().find(|(l, _)| *l == label) {
            Some((_, b)) if r.e2d.mean < b.e2d.mean => *b = r,
            Some(_) => {}
            None => best.push((label, r)),
        }
    }
    let series: Vec<(String, Vec<f64>)> = best
        .iter()
        .map(|(l, r)| (l.clone(), r.samples.iter().map(|s| s.e2d).collect()))
        .collect();
    write_cdf_svg(&series, &dir.join("cdf.svg"))?;

    println!(
        "cells: {}, evaluated: {}, skipped: {}",
        result.entries.len(),
        result.reports().count(),
        result.skipped()
    );
    if let Some(b) = result.best() {
        let r = b.outcome.report().expect("finished");
        let cell = &b.cell;
        let label = match (cell.space, cell.k_clusters, cell.n_aps) {
            (Some(s), Some(k), Some(n)) => format!("best {} {s} K={k} N={n} {} k={}", cell.level, cell.variant, cell.knn_k),
            _ => format!("best {} baseline {} k={}", cell.level, cell.variant, cell.knn_k),
        };
        print_report(&label, r);
    }
    write_snapshot(c)
}

fn cmd_synth(c: &RunConfig) -> Result<(), CliError> {
    let schema = DatasetSchema::resolve(&c.schema)?;
    let (train, test) = synth_radio_map(&c.synth, c.seed)?;
    let dir = out_dir(c)?;
    write_csv(&train, &schema, &dir.join("train.csv"))?;
    write_csv(&test, &schema, &dir.join("test.csv"))?;
    println!("APs: {}, train: {}, test: {}", train.ap_count(), train.len(), test.len());
    write_snapshot(c)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest(f) => cmd_ingest(&f.resolve(false)?),
        Command::Fit(f) => cmd_fit(&f.resolve(false)?),
        Command::Evaluate { flags, bundle } => cmd_evaluate(&flags.resolve(false)?, bundle.as_deref()),
        Command::Sweep { flags, no_baseline } => {
            let mut c = flags.resolve(true)?;
            c.sweep.baseline &= !no_baseline;
            cmd_sweep(&c)
        }
        Command::Synth(f) => cmd_synth(&f.resolve(false)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
