//! The `eta x degree x seed` experiment grid.
//!
//! Runs are matched across `eta` and degree: every run with the same seed
//! trains on the same dataset from the same initial weights with the same
//! minibatch order, so differences between grid cells come from the feature
//! alone.

mod report;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ModelConfig, TaskSource};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::feature::{Degree, FeatureConfig};
use crate::nn::{train, Model, RunStatus, TrainConfig};
use crate::rng::derive_seed;

pub use report::{
    emit_report, plot_data, read_aggregates_csv, read_rows_csv, write_aggregates_csv,
    write_rows_csv, ReportFormat,
};

const INIT_STREAM: u64 = 0x494e_4954;
const TRAIN_STREAM: u64 = 0x5452_4e53;

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub eta_grid: Vec<f64>,
    pub degrees: Vec<Degree>,
    pub seeds: Vec<u64>,
    pub task: TaskSource,
    pub train: TrainConfig,
    pub model: ModelConfig,
    /// Whether `eta` is trained; the grid value is then its initial value.
    pub eta_learnable: bool,
    pub parallelism: usize,
    pub user_seed: u64,
}

impl SweepSpec {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        SweepSpec {
            eta_grid: cfg.sweep.eta_grid.clone(),
            degrees: cfg.sweep.degrees.clone(),
            seeds: cfg.sweep.seeds.clone(),
            task: cfg.task.clone(),
            train: cfg.train,
            model: cfg.model,
            eta_learnable: cfg.feature.eta_learnable,
            parallelism: cfg.sweep.parallelism,
            user_seed: cfg.sweep.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eta_grid.is_empty() {
            return Err(Error::invalid("eta_grid must not be empty"));
        }
        if self.eta_grid.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return Err(Error::invalid(
                "eta_grid values must be positive and finite",
            ));
        }
        if self.eta_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("eta_grid must be strictly increasing"));
        }
        if self.degrees.is_empty() {
            return Err(Error::invalid("degrees must not be empty"));
        }
        let mut degrees = self.degrees.clone();
        degrees.sort();
        degrees.dedup();
        if degrees.len() != self.degrees.len() {
            return Err(Error::invalid("degrees must be distinct"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("seeds must not be empty"));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(Error::invalid("seeds must be distinct"));
        }
        if self.parallelism == 0 {
            return Err(Error::invalid("parallelism must be at least 1"));
        }
        self.train.validate()
    }

    /// Canonical run order: degree, then `eta`, then seed, all ascending.
    pub fn jobs(&self) -> Vec<(Degree, f64, u64)> {
        let mut degrees = self.degrees.clone();
        degrees.sort();
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        let mut jobs = Vec::with_capacity(degrees.len() * self.eta_grid.len() * seeds.len());
        for &degree in &degrees {
            for &eta in &self.eta_grid {
                for &seed in &seeds {
                    jobs.push((degree, eta, seed));
                }
            }
        }
        jobs
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowStatus {
    Completed,
    /// Training hit a non-finite value; accuracies come from the best
    /// snapshot before that point.
    Diverged,
    /// The run errored; accuracies are NaN and the row is left out of
    /// aggregates.
    Failed,
}

impl From<RunStatus> for RowStatus {
    fn from(s: RunStatus) -> Self {
        match s {
            RunStatus::Completed => RowStatus::Completed,
            RunStatus::Diverged => RowStatus::Diverged,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub degree: Degree,
    pub eta: f64,
    pub seed: u64,
    pub test_accuracy: f64,
    pub best_val_accuracy: f64,
    pub epochs_run: usize,
    pub status: RowStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub degree: Degree,
    pub eta: f64,
    pub mean_accuracy: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std_accuracy: f64,
    pub max_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<RunRow>,
    pub aggregates: Vec<AggregateRow>,
}

impl SweepResult {
    pub fn from_rows(rows: Vec<RunRow>) -> Self {
        let aggregates = aggregate(&rows);
        SweepResult { rows, aggregates }
    }

    pub fn aggregate_for(&self, degree: Degree, eta: f64) -> Option<&AggregateRow> {
        self.aggregates
            .iter()
            .find(|a| a.degree == degree && a.eta == eta)
    }

    /// The grid cell with the highest mean accuracy for `degree`, earliest
    /// `eta` on ties. Cells with no usable runs are skipped.
    pub fn best_eta(&self, degree: Degree) -> Option<&AggregateRow> {
        self.aggregates
            .iter()
            .filter(|a| a.degree == degree && !a.mean_accuracy.is_nan())
            .fold(None, |best: Option<&AggregateRow>, a| match best {
                Some(b) if b.mean_accuracy >= a.mean_accuracy => Some(b),
                _ => Some(a),
            })
    }
}

/// Groups rows by `(degree, eta)` in order of first appearance. Failed rows
/// are excluded; a cell whose runs all failed reports NaN.
pub fn aggregate(rows: &[RunRow]) -> Vec<AggregateRow> {
    let mut keys: Vec<(Degree, f64)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|&(d, e)| d == r.degree && e == r.eta) {
            keys.push((r.degree, r.eta));
        }
    }
    keys.into_iter()
        .map(|(degree, eta)| {
            let acc: Vec<f64> = rows
                .iter()
                .filter(|r| r.degree == degree && r.eta == eta && r.status != RowStatus::Failed)
                .map(|r| r.test_accuracy)
                .collect();
            let (mean_accuracy, std_accuracy, max_accuracy) = summarize(&acc);
            AggregateRow {
                degree,
                eta,
                mean_accuracy,
                std_accuracy,
                max_accuracy,
            }
        })
        .collect()
}

fn summarize(xs: &[f64]) -> (f64, f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (mean, std, max)
}

/// Builds the task's dataset and runs the full grid.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let dataset = spec.task.load()?;
    run_sweep_on(spec, &dataset, |_| {})
}

/// Runs the grid on an already loaded dataset. `on_run` sees each row as
/// soon as its run finishes, in completion order; the returned rows are
/// always in canonical order.
pub fn run_sweep_on<F>(spec: &SweepSpec, dataset: &Dataset, on_run: F) -> Result<SweepResult>
where
    F: Fn(&RunRow) + Sync,
{
    spec.validate()?;
    dataset.validate()?;
    let jobs = spec.jobs();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.parallelism)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    let rows: Vec<RunRow> = pool.install(|| {
        jobs.par_iter()
            .with_max_len(1)
            .map(|&(degree, eta, seed)| {
                let row = run_one(spec, dataset, degree, eta, seed);
                on_run(&row);
                row
            })
            .collect()
    });
    Ok(SweepResult::from_rows(rows))
}

/// One grid cell. The init and shuffle seeds depend on the user seed and the
/// run seed only, never on `eta` or degree.
pub fn run_one(spec: &SweepSpec, dataset: &Dataset, degree: Degree, eta: f64, seed: u64) -> RunRow {
    let attempt = || -> Result<RunRow> {
        let mut feature = FeatureConfig::new(degree, eta)?;
        feature.eta_learnable = spec.eta_learnable;
        let arch = spec.model.resolve(&spec.task, dataset.vocab_size);
        let mut model = Model::init(
            &arch,
            &feature,
            derive_seed(&[spec.user_seed, seed, INIT_STREAM]),
        )?;
        let tc = TrainConfig {
            seed: derive_seed(&[spec.user_seed, seed, TRAIN_STREAM]),
            ..spec.train
        };
        let record = train(&mut model, dataset, &tc)?;
        Ok(RunRow {
            degree,
            eta,
            seed,
            test_accuracy: record.test_accuracy,
            best_val_accuracy: record.best_val_accuracy,
            epochs_run: record.epochs.len(),
            status: record.status.into(),
        })
    };
    attempt().unwrap_or(RunRow {
        degree,
        eta,
        seed,
        test_accuracy: f64::NAN,
        best_val_accuracy: f64::NAN,
        epochs_run: 0,
        status: RowStatus::Failed,
    })
}

/// Relative reduction in classification error of accuracy `acc_a` over the
/// reference accuracy `acc_b`: `((1 - b) - (1 - a)) / (1 - b)`.
pub fn relative_error_reduction(acc_a: f64, acc_b: f64) -> Result<f64> {
    for acc in [acc_a, acc_b] {
        if !(0.0..=1.0).contains(&acc) {
            return Err(Error::invalid(format!("accuracy {acc} outside [0, 1]")));
        }
    }
    if acc_b == 1.0 {
        return Err(Error::invalid(
            "reference accuracy 1 has no error to reduce",
        ));
    }
    Ok(((1.0 - acc_b) - (1.0 - acc_a)) / (1.0 - acc_b))
}
