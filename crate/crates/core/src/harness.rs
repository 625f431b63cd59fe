//! Config-driven experiment harness.
//!
//! A run expands into cells, one per (dataset, split, method). Each cell
//! trains on the split's train fold, selects an epoch on its validation fold,
//! and only then evaluates the selected model on the test fold and on every
//! held-out dataset. Cells are independent and may run in parallel; results
//! are collected in a fixed order so output files do not depend on
//! scheduling.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{self, DataError, DatasetTable, LabelSet, SynthSpec};
use crate::methods::{Family, Method, MethodConfig, MethodError};
use crate::par::{self, Parallelism};
use crate::split::{self, SplitError, SplitMode, SplitSpec};
use crate::stats::{self, RankSummary, ResultMatrix, StatsError};
use crate::train::{self, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Method(#[from] MethodError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// A dataset given either as a manifest path or as a synthetic spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Optional declared label set for manifests; inferred when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
}

impl DatasetEntry {
    pub fn synthetic(name: impl Into<String>, spec: SynthSpec) -> Self {
        Self { name: name.into(), path: None, labels: None, synth: Some(spec) }
    }

    /// Loads or generates the table. Relative paths resolve against `base_dir`.
    pub fn materialize(&self, base_dir: &Path) -> Result<DatasetTable, HarnessError> {
        let table = match (&self.path, &self.synth) {
            (Some(p), None) => {
                let p = if p.is_relative() { base_dir.join(p) } else { p.clone() };
                match &self.labels {
                    Some(l) => data::load_dataset_with_labels(&p, &LabelSet::new(l.clone())?)?,
                    None => data::load_dataset(&p)?,
                }
            }
            (None, Some(spec)) => data::generate_synthetic(spec)?,
            _ => {
                return Err(HarnessError::Config(format!(
                    "dataset {} needs exactly one of `path` or `synth`",
                    self.name
                )))
            }
        };
        Ok(table.renamed(self.name.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub mode: SplitMode,
    pub fractions: [f64; 3],
    pub n_splits: usize,
    pub base_seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { mode: SplitMode::SubjectExclusive, fractions: [0.6, 0.2, 0.2], n_splits: 5, base_seed: 0 }
    }
}

/// Experiment description, read from JSON.
///
/// ```json
/// {
///   "datasets": [{"name": "synth", "synth": {"n_identities": 50}}],
///   "held_out": [{"name": "other", "path": "other.csv"}],
///   "split": {"mode": "subject-exclusive", "fractions": [0.6, 0.2, 0.2], "n_splits": 5, "base_seed": 0},
///   "methods": [{"family": "cross-entropy"}, {"family": "dldl", "sigma": 2.0}],
///   "train": {"epochs": 50, "batch_size": 32, "hidden_dims": [64, 64]},
///   "output_dir": "out"
/// }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub datasets: Vec<DatasetEntry>,
    /// Datasets used only for cross-dataset evaluation: every sample is a
    /// test sample for models trained on each entry of `datasets`.
    #[serde(default)]
    pub held_out: Vec<DatasetEntry>,
    #[serde(default)]
    pub split: SplitConfig,
    pub methods: Vec<MethodConfig>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Worker bound for grid cells; 0 uses every core.
    #[serde(default)]
    pub jobs: usize,
    /// Record measured wall time per cell. Off by default so reruns produce
    /// byte-identical run records.
    #[serde(default)]
    pub record_wall_time: bool,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("ordibench-out")
}

impl ExperimentConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.datasets.is_empty() {
            return Err(HarnessError::Config("at least one dataset is required".into()));
        }
        if self.methods.is_empty() {
            return Err(HarnessError::Config("at least one method is required".into()));
        }
        if self.split.n_splits == 0 {
            return Err(HarnessError::Config("n_splits must be >= 1".into()));
        }
        let mut names: Vec<&str> = self.datasets.iter().chain(&self.held_out).map(|d| d.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(HarnessError::Config("dataset names must be unique".into()));
        }
        let mut methods: Vec<String> = self.methods.iter().map(MethodConfig::display_name).collect();
        methods.sort_unstable();
        if methods.windows(2).any(|w| w[0] == w[1]) {
            return Err(HarnessError::Config("method names must be unique; set `name` to disambiguate".into()));
        }
        if self.datasets.iter().chain(&self.held_out).any(|d| d.name.contains([',', '#']) || d.name.contains("->")) {
            return Err(HarnessError::Config("dataset names may not contain ',', '#' or '->'".into()));
        }
        for m in &self.methods {
            m.validate()?;
        }
        self.train.validate()?;
        Ok(())
    }
}

/// One evaluated (row, method, split) triple. Cross-dataset rows are named
/// `train_dataset->held_out_dataset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub dataset: String,
    pub method: String,
    pub split: usize,
    pub seed: u64,
    pub val_mae: f64,
    pub test_mae: f64,
    pub selected_epoch: usize,
    pub wall_time: f64,
}

pub const RUN_RECORD_HEADER: &str = "dataset,method,split,seed,val_mae,test_mae,selected_epoch,wall_time";

pub fn write_run_records<W: Write>(records: &[RunRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{RUN_RECORD_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{:?},{:?},{},{:.3}",
            r.dataset, r.method, r.split, r.seed, r.val_mae, r.test_mae, r.selected_epoch, r.wall_time
        )?;
    }
    Ok(())
}

pub fn parse_run_records(text: &str) -> Result<Vec<RunRecord>, HarnessError> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(RUN_RECORD_HEADER) {
        return Err(HarnessError::Config("run record header mismatch".into()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            let c: Vec<&str> = l.split(',').collect();
            let bad = || HarnessError::Config(format!("malformed run record on data line {}", i + 1));
            if c.len() != 8 {
                return Err(bad());
            }
            Ok(RunRecord {
                dataset: c[0].into(),
                method: c[1].into(),
                split: c[2].parse().map_err(|_| bad())?,
                seed: c[3].parse().map_err(|_| bad())?,
                val_mae: c[4].parse().map_err(|_| bad())?,
                test_mae: c[5].parse().map_err(|_| bad())?,
                selected_epoch: c[6].parse().map_err(|_| bad())?,
                wall_time: c[7].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub dataset: String,
    pub method: String,
    pub split: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    pub records: Vec<RunRecord>,
    pub failures: Vec<CellFailure>,
    /// Rows: datasets then cross-dataset rows; cells: mean over splits.
    pub matrix: ResultMatrix,
    /// Same cells, one row per (row, split), named `row#split`.
    pub split_matrix: ResultMatrix,
    pub splits: Vec<(String, Vec<SplitSpec>)>,
}

struct Cell<'a> {
    table: &'a DatasetTable,
    split_index: usize,
    split: &'a SplitSpec,
    method: &'a MethodConfig,
}

/// Seed used to initialize the model for split `split_index`; shared by all
/// methods so they start from the same hidden-layer weights.
pub fn training_seed(cfg: &TrainConfig, split_index: usize) -> u64 {
    cfg.seed.wrapping_add(split_index as u64)
}

fn run_cell(cell: &Cell<'_>, held_out: &[DatasetTable], cfg: &ExperimentConfig) -> Result<Vec<RunRecord>, HarnessError> {
    let start = Instant::now();
    let method = Method::new(cell.method.clone(), cell.table.label_set().clone())?;
    let train_cfg = TrainConfig { seed: training_seed(&cfg.train, cell.split_index), ..cfg.train.clone() };

    // the trainer only ever receives the train and validation rows
    let folds = cell.split.train_val(cell.table)?;
    let run = train::train(cell.table, &folds, &method, &train_cfg)?;

    let test_rows = cell.split.test_indices(cell.table)?;
    let model = &run.best_model;
    let mut rows = vec![(cell.table.name().to_string(), train::evaluate_mae(model, cell.table, &test_rows, &method, Parallelism::Sequential)?)];
    for h in held_out {
        let all: Vec<usize> = (0..h.len()).collect();
        let mae = train::evaluate_mae(model, h, &all, &method, Parallelism::Sequential)?;
        rows.push((format!("{}->{}", cell.table.name(), h.name()), mae));
    }
    let wall = if cfg.record_wall_time { start.elapsed().as_secs_f64() } else { 0.0 };
    Ok(rows
        .into_iter()
        .map(|(dataset, test_mae)| RunRecord {
            dataset,
            method: cell.method.display_name(),
            split: cell.split_index,
            seed: train_cfg.seed,
            val_mae: run.best_val_mae(),
            test_mae,
            selected_epoch: run.selected_epoch,
            wall_time: wall,
        })
        .collect())
}

/// Runs the whole grid. Failing cells are reported in `failures` and the
/// remaining cells still run.
pub fn run_grid(cfg: &ExperimentConfig, base_dir: &Path, par: Parallelism) -> Result<GridOutcome, HarnessError> {
    cfg.validate()?;
    let tables = cfg.datasets.iter().map(|d| d.materialize(base_dir)).collect::<Result<Vec<_>, _>>()?;
    let held_out = cfg.held_out.iter().map(|d| d.materialize(base_dir)).collect::<Result<Vec<_>, _>>()?;
    for h in &held_out {
        for t in &tables {
            if h.dimension() != t.dimension() {
                return Err(HarnessError::Config(format!(
                    "held-out dataset {} has dimension {}, {} has {}",
                    h.name(),
                    h.dimension(),
                    t.name(),
                    t.dimension()
                )));
            }
        }
    }
    let splits: Vec<(String, Vec<SplitSpec>)> = tables
        .iter()
        .map(|t| {
            split::make_split_series(t, cfg.split.mode, cfg.split.fractions, cfg.split.base_seed, cfg.split.n_splits)
                .map(|s| (t.name().to_string(), s))
        })
        .collect::<Result<_, _>>()?;

    let mut cells = Vec::new();
    for (t, (_, series)) in tables.iter().zip(&splits) {
        for (si, sp) in series.iter().enumerate() {
            for m in &cfg.methods {
                cells.push(Cell { table: t, split_index: si, split: sp, method: m });
            }
        }
    }
    let results = par::with_jobs(cfg.jobs, || par.map_slice(&cells, |c| run_cell(c, &held_out, cfg)));

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (cell, res) in cells.iter().zip(results) {
        match res {
            Ok(r) => records.extend(r),
            Err(e) => {
                log::warn!("cell {}/{}/{} failed: {e}", cell.table.name(), cell.method.display_name(), cell.split_index);
                failures.push(CellFailure {
                    dataset: cell.table.name().to_string(),
                    method: cell.method.display_name(),
                    split: cell.split_index,
                    error: e.to_string(),
                });
            }
        }
    }

    let methods: Vec<String> = cfg.methods.iter().map(MethodConfig::display_name).collect();
    let mut row_names = Vec::new();
    for t in &tables {
        row_names.push(t.name().to_string());
        for h in &held_out {
            row_names.push(format!("{}->{}", t.name(), h.name()));
        }
    }
    let order_key = |r: &RunRecord| {
        (
            row_names.iter().position(|n| *n == r.dataset).unwrap_or(usize::MAX),
            methods.iter().position(|m| *m == r.method).unwrap_or(usize::MAX),
            r.split,
        )
    };
    records.sort_by_key(order_key);

    let (matrix, split_matrix) = build_matrices(&records, &row_names, &methods, cfg.split.n_splits)?;
    Ok(GridOutcome { records, failures, matrix, split_matrix, splits })
}

fn build_matrices(
    records: &[RunRecord],
    rows: &[String],
    methods: &[String],
    n_splits: usize,
) -> Result<(ResultMatrix, ResultMatrix), HarnessError> {
    let lookup = |row: &str, m: &str, s: usize| {
        records.iter().find(|r| r.dataset == row && r.method == m && r.split == s).map(|r| r.test_mae)
    };
    let (mut names, mut mae, mut std) = (Vec::new(), Vec::new(), Vec::new());
    let (mut split_names, mut split_mae) = (Vec::new(), Vec::new());
    for row in rows {
        let mut means = Vec::new();
        let mut stds = Vec::new();
        let mut complete = true;
        for m in methods {
            let vals: Vec<f64> = (0..n_splits).filter_map(|s| lookup(row, m, s)).collect();
            if vals.len() != n_splits {
                complete = false;
                break;
            }
            let (mu, sd) = stats::aggregate_splits(&vals)?;
            means.push(mu);
            stds.push(sd);
        }
        if !complete {
            log::warn!("row {row} has failed cells and is left out of the MAE matrix");
            continue;
        }
        names.push(row.clone());
        mae.push(means);
        std.push(stds);
        for s in 0..n_splits {
            split_names.push(format!("{row}#{s}"));
            split_mae.push(methods.iter().map(|m| lookup(row, m, s).expect("complete row")).collect());
        }
    }
    let mut matrix = ResultMatrix::new(names, methods.to_vec(), mae)?;
    matrix.std = Some(std);
    let split_matrix = ResultMatrix::new(split_names, methods.to_vec(), split_mae)?;
    Ok((matrix, split_matrix))
}

/// Which rows feed the rank test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowLevel {
    Datasets,
    Splits,
}

/// Rank test on the per-dataset means, falling back to per-split rows when
/// fewer than two datasets are available.
pub fn rank_outcome(outcome: &GridOutcome, alpha: f64) -> Result<(RowLevel, RankSummary), HarnessError> {
    if outcome.matrix.datasets.len() >= 2 {
        Ok((RowLevel::Datasets, stats::friedman_test(&outcome.matrix, alpha)?))
    } else {
        Ok((RowLevel::Splits, stats::friedman_test(&outcome.split_matrix, alpha)?))
    }
}

pub fn rank_report_json(level: Option<RowLevel>, summary: &RankSummary) -> serde_json::Value {
    let mut v = summary.to_json();
    if let Some(level) = level {
        v["row_level"] = serde_json::to_value(level).expect("row level serializes");
    }
    v
}

/// Writes every output file of a run into `dir`.
pub fn write_outputs(outcome: &GridOutcome, dir: &Path, alpha: f64) -> Result<Option<RankSummary>, HarnessError> {
    fs::create_dir_all(dir.join("splits"))?;
    let mut buf = Vec::new();
    write_run_records(&outcome.records, &mut buf)?;
    fs::write(dir.join("runs.csv"), buf)?;

    let mut buf = Vec::new();
    outcome.matrix.write_csv(&mut buf)?;
    fs::write(dir.join("mae_matrix.csv"), buf)?;
    let mut buf = Vec::new();
    outcome.matrix.write_std_csv(&mut buf)?;
    fs::write(dir.join("mae_std.csv"), buf)?;
    let mut buf = Vec::new();
    outcome.split_matrix.write_csv(&mut buf)?;
    fs::write(dir.join("mae_matrix_splits.csv"), buf)?;

    for (name, series) in &outcome.splits {
        for (i, s) in series.iter().enumerate() {
            split::save_split(s, dir.join("splits").join(format!("{name}_split{i}.json")))?;
        }
    }
    let failures_path = dir.join("failures.json");
    if outcome.failures.is_empty() {
        if failures_path.exists() {
            fs::remove_file(&failures_path)?;
        }
    } else {
        fs::write(&failures_path, serde_json::to_string_pretty(&outcome.failures)?)?;
    }

    let k = outcome.matrix.methods.len();
    let enough_rows = outcome.matrix.datasets.len() >= 2 || outcome.split_matrix.datasets.len() >= 2;
    if k >= 2 && k <= 10 && enough_rows {
        let (level, summary) = rank_outcome(outcome, alpha)?;
        fs::write(dir.join("rank_report.txt"), summary.to_string())?;
        fs::write(dir.join("rank_report.json"), serde_json::to_string_pretty(&rank_report_json(Some(level), &summary))?)?;
        return Ok(Some(summary));
    }
    Ok(None)
}

/// Settings for the random-vs-subject-exclusive leakage demonstration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LeakageConfig {
    pub synth: SynthSpec,
    pub method: MethodConfig,
    pub train: TrainConfig,
    pub fractions: [f64; 3],
    pub n_seeds: usize,
    pub base_seed: u64,
}

impl Default for LeakageConfig {
    fn default() -> Self {
        Self {
            synth: SynthSpec {
                n_identities: 60,
                samples_per_identity: 8,
                dimension: 16,
                age_range: [20, 60],
                identity_noise: 2.0,
                observation_noise: 0.5,
                seed: 0,
            },
            method: MethodConfig::new(Family::CrossEntropy),
            train: TrainConfig::default(),
            fractions: [0.6, 0.2, 0.2],
            n_seeds: 5,
            base_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakagePair {
    pub seed: u64,
    pub rs_mae: f64,
    pub se_mae: f64,
    /// `se_mae - rs_mae`; positive when the random split looks better.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub method: String,
    pub identity_noise: f64,
    pub observation_noise: f64,
    pub pairs: Vec<LeakagePair>,
    pub mean_gap: f64,
    pub std_gap: f64,
    pub rs_better: usize,
}

impl std::fmt::Display for LeakageReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "# leakage demo: method={} identity_noise={} observation_noise={}",
            self.method, self.identity_noise, self.observation_noise
        )?;
        writeln!(f, "seed,rs_mae,se_mae,gap")?;
        for p in &self.pairs {
            writeln!(f, "{},{:.4},{:.4},{:.4}", p.seed, p.rs_mae, p.se_mae, p.gap)?;
        }
        writeln!(f, "# mean_gap={:.4} std_gap={:.4}", self.mean_gap, self.std_gap)?;
        write!(f, "# random split better in {} of {} seeds", self.rs_better, self.pairs.len())
    }
}

fn leakage_task(cfg: &LeakageConfig, seed: u64, mode: SplitMode) -> Result<f64, HarnessError> {
    let table = data::generate_synthetic(&SynthSpec { seed, ..cfg.synth.clone() })?;
    let split = split::make_split(&table, mode, cfg.fractions, seed)?;
    let method = Method::new(cfg.method.clone(), table.label_set().clone())?;
    let train_cfg = TrainConfig { seed, ..cfg.train.clone() };
    let folds = split.train_val(&table)?;
    let run = train::train(&table, &folds, &method, &train_cfg)?;
    let test = split.test_indices(&table)?;
    Ok(train::evaluate_mae(&run.best_model, &table, &test, &method, Parallelism::Sequential)?)
}

/// Trains the same method on random and subject-exclusive splits of the same
/// synthetic data for each seed and reports the paired test MAEs.
pub fn leakage_demo(cfg: &LeakageConfig, par: Parallelism) -> Result<LeakageReport, HarnessError> {
    if cfg.n_seeds == 0 {
        return Err(HarnessError::Config("leakage demo needs at least one seed".into()));
    }
    let tasks: Vec<(u64, SplitMode)> = (0..cfg.n_seeds as u64)
        .flat_map(|i| {
            let s = cfg.base_seed.wrapping_add(i);
            [(s, SplitMode::Random), (s, SplitMode::SubjectExclusive)]
        })
        .collect();
    let maes = par.map_slice(&tasks, |&(seed, mode)| leakage_task(cfg, seed, mode));
    let mut pairs = Vec::with_capacity(cfg.n_seeds);
    let mut it = tasks.iter().zip(maes);
    while let (Some((&(seed, _), rs)), Some((_, se))) = (it.next(), it.next()) {
        let (rs_mae, se_mae) = (rs?, se?);
        pairs.push(LeakagePair { seed, rs_mae, se_mae, gap: se_mae - rs_mae });
    }
    let gaps: Vec<f64> = pairs.iter().map(|p| p.gap).collect();
    let (mean_gap, std_gap) = stats::aggregate_splits(&gaps)?;
    Ok(LeakageReport {
        method: cfg.method.display_name(),
        identity_noise: cfg.synth.identity_noise,
        observation_noise: cfg.synth.observation_noise,
        rs_better: pairs.iter().filter(|p| p.rs_mae < p.se_mae).count(),
        pairs,
        mean_gap,
        std_gap,
    })
}
