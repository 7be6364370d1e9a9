//! Per-trial experiment pipelines and axis sweeps.
//!
//! One trial: collect an offline dataset, train the reward decoder, break
//! the decoder symmetry, train the output policy through the bandit oracle,
//! and evaluate on the held-out pool. Trials draw their randomness from
//! independent streams of the master seed, so runs reproduce row for row.

use std::fs;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{EnvChoice, ExperimentConfig};
use super::CliError;
use crate::bandit::{decoded_return, evaluate, train_policy};
use crate::env::{collect, Context, FeedbackSpec, IglEnv, MnistEnv, SyntheticEnv, UniformPolicy};
use crate::trainer::{select_decoder, train, EpochLog, TrainError};

#[derive(Debug, Clone)]
pub enum TrialStatus {
    Ok,
    Failed(String),
}

#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub status: TrialStatus,
    pub accuracy: f64,
    pub decoded_return: f64,
    pub true_return: f64,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub label: String,
    pub trials: Vec<TrialRecord>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub std_err: f64,
    pub excluded: usize,
}

/// Construct the configured environment.
pub fn build_env(cfg: &ExperimentConfig) -> Result<Box<dyn IglEnv>, CliError> {
    let spec = FeedbackSpec::new(cfg.noise, cfg.noise_level)?;
    match cfg.env {
        EnvChoice::Synthetic => Ok(Box::new(SyntheticEnv::new(
            cfg.contexts,
            cfg.actions,
            cfg.feedback_dim,
            spec,
            cfg.env_seed,
        )?)),
        EnvChoice::Mnist => {
            let dir = cfg
                .mnist_dir
                .as_ref()
                .ok_or_else(|| CliError::Config("mnist env needs --mnist <dir>".into()))?;
            Ok(Box::new(MnistEnv::load(dir, cfg.emnist_dir.as_deref(), spec)?))
        }
    }
}

fn test_pool(env: &dyn IglEnv, n: usize, master_seed: u64) -> Vec<Context> {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(u64::MAX); // never shared with any trial stream
    (0..n).map(|_| env.draw_test_context(&mut rng)).collect()
}

/// Run `trials` independent pipelines and write per-trial, summary, and
/// per-trial training-log CSVs under `cfg.out`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunSummary, CliError> {
    fs::create_dir_all(&cfg.out)
        .map_err(|e| CliError::Io { path: cfg.out.clone(), source: e })?;
    let env = build_env(cfg)?;
    let pool = test_pool(env.as_ref(), cfg.test_pool, cfg.seed);
    let behavior = UniformPolicy { num_actions: env.num_actions() };

    let trials_path = cfg.out.join("trials.csv");
    let mut trials_csv = CsvWriter::create(&trials_path, TRIAL_COLUMNS)?;

    let mut records = Vec::with_capacity(cfg.trials);
    for trial in 0..cfg.trials {
        // Independent randomness per (master seed, trial index).
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1 + trial as u64);
        let collect_seed: u64 = rng.random();
        let train_seed: u64 = rng.random();
        let policy_seed: u64 = rng.random();

        let record = run_trial(
            cfg,
            env.as_ref(),
            &behavior,
            &pool,
            trial,
            collect_seed,
            train_seed,
            policy_seed,
        )?;
        write_trial_row(&mut trials_csv, cfg, &record)?;
        log::info!(
            "trial {trial}: {}",
            match &record.status {
                TrialStatus::Ok => format!("accuracy {:.4}", record.accuracy),
                TrialStatus::Failed(reason) => format!("failed ({reason})"),
            }
        );
        records.push(record);
    }

    let summary = summarize(cfg.label(), records);
    write_summary_row(&mut trials_csv, cfg, &summary)?;
    trials_csv.flush()?;

    let summary_path = cfg.out.join("summary.csv");
    let mut summary_csv = CsvWriter::create(&summary_path, SUMMARY_COLUMNS)?;
    append_summary(&mut summary_csv, cfg, &summary)?;
    summary_csv.flush()?;
    Ok(summary)
}

#[allow(clippy::too_many_arguments)]
fn run_trial(
    cfg: &ExperimentConfig,
    env: &dyn IglEnv,
    behavior: &UniformPolicy,
    pool: &[Context],
    trial: usize,
    collect_seed: u64,
    train_seed: u64,
    policy_seed: u64,
) -> Result<TrialRecord, CliError> {
    let dataset = collect(env, behavior, cfg.k, collect_seed)?;

    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = train_seed;
    let trained = match train(&dataset, &train_cfg) {
        Ok(t) => t,
        Err(TrainError::NonFinite { epoch, value }) => {
            return Ok(TrialRecord {
                trial,
                seed: train_seed,
                status: TrialStatus::Failed(format!("non-finite objective {value} at epoch {epoch}")),
                accuracy: f64::NAN,
                decoded_return: f64::NAN,
                true_return: f64::NAN,
            });
        }
        Err(e) => return Err(e.into()),
    };
    write_train_log(&cfg.out.join(format!("trial_{trial}_train.csv")), &trained.log)?;

    let (selected, _behavior_return) = select_decoder(trained.decoder, dataset.samples());

    let mut policy_cfg = cfg.policy.clone();
    policy_cfg.seed = policy_seed;
    let policy = train_policy(&dataset, &selected, behavior, &policy_cfg)?;
    let dec_return = decoded_return(&policy, &dataset, &selected, behavior);
    let report = evaluate(&policy, pool, dec_return);
    Ok(TrialRecord {
        trial,
        seed: train_seed,
        status: TrialStatus::Ok,
        accuracy: report.accuracy,
        decoded_return: report.decoded_return,
        true_return: report.true_return,
    })
}

fn summarize(label: String, trials: Vec<TrialRecord>) -> RunSummary {
    let ok: Vec<f64> = trials
        .iter()
        .filter(|t| matches!(t.status, TrialStatus::Ok))
        .map(|t| t.accuracy)
        .collect();
    let excluded = trials.len() - ok.len();
    let (mean, std, se) = mean_std_se(&ok);
    RunSummary { label, trials, mean_accuracy: mean, std_accuracy: std, std_err: se, excluded }
}

pub(crate) fn mean_std_se(values: &[f64]) -> (f64, f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    (mean, std, std / n.sqrt())
}

/// Axis of a sweep; each value produces one full [`run`].
#[derive(Debug, Clone)]
pub enum SweepAxis {
    Beta(Vec<f64>),
    NoiseLevel(Vec<f64>),
    FPair(Vec<(crate::fdiv::FDivergence, crate::fdiv::FDivergence)>),
    InputMode(Vec<crate::trainer::InputMode>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Beta(_) => "beta",
            SweepAxis::NoiseLevel(_) => "noise-level",
            SweepAxis::FPair(_) => "f-pair",
            SweepAxis::InputMode(_) => "input-mode",
        }
    }

    fn is_empty(&self) -> bool {
        match self {
            SweepAxis::Beta(v) => v.is_empty(),
            SweepAxis::NoiseLevel(v) => v.is_empty(),
            SweepAxis::FPair(v) => v.is_empty(),
            SweepAxis::InputMode(v) => v.is_empty(),
        }
    }
}

/// One [`run`] per axis value; per-value artifacts land in subdirectories
/// and the aggregated table in `sweep.csv`.
pub fn sweep(cfg: &ExperimentConfig, axis: &SweepAxis) -> Result<Vec<RunSummary>, CliError> {
    if axis.is_empty() {
        return Err(CliError::Config("sweep axis has no values".into()));
    }
    fs::create_dir_all(&cfg.out)
        .map_err(|e| CliError::Io { path: cfg.out.clone(), source: e })?;
    let mut variants: Vec<(String, ExperimentConfig)> = Vec::new();
    match axis {
        SweepAxis::Beta(values) => {
            for &b in values {
                let mut c = cfg.clone();
                c.train.beta = b;
                variants.push((format!("beta_{b}"), c));
            }
        }
        SweepAxis::NoiseLevel(values) => {
            for &p in values {
                let mut c = cfg.clone();
                c.noise_level = p;
                variants.push((format!("noise_{p}"), c));
            }
        }
        SweepAxis::FPair(values) => {
            for &(f1, f2) in values {
                let mut c = cfg.clone();
                c.train.f1 = f1;
                c.train.f2 = f2;
                variants.push((format!("f_{f1}-{f2}"), c));
            }
        }
        SweepAxis::InputMode(values) => {
            for &mode in values {
                let mut c = cfg.clone();
                c.train.input_mode = mode;
                variants.push((format!("input_{mode}"), c));
            }
        }
    }

    let sweep_path = cfg.out.join("sweep.csv");
    let mut sweep_csv = CsvWriter::create(&sweep_path, SUMMARY_COLUMNS)?;
    let mut summaries = Vec::with_capacity(variants.len());
    for (tag, mut variant) in variants {
        variant.out = cfg.out.join(&tag);
        let summary = run(&variant)?;
        append_summary(&mut sweep_csv, &variant, &summary)?;
        summaries.push(summary);
    }
    sweep_csv.flush()?;
    Ok(summaries)
}

/// Write a per-epoch training log.
pub fn write_train_log(path: &Path, log: &[EpochLog]) -> Result<(), CliError> {
    let mut csv = CsvWriter::create(
        path,
        &["epoch", "objective", "cond_mi", "reg_mi", "decoded_return_behavior", "wall_ms", "skipped"],
    )?;
    for row in log {
        csv.row(&[
            row.epoch.to_string(),
            fmt(row.objective),
            fmt(row.cond_mi),
            fmt(row.reg_mi),
            fmt(row.decoded_return_behavior),
            format!("{:.3}", row.wall_ms),
            (row.skipped as u8).to_string(),
        ])?;
    }
    csv.flush()
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

const TRIAL_COLUMNS: &[&str] = &[
    "kind",
    "trial",
    "seed",
    "env",
    "noise",
    "noise_level",
    "beta",
    "f1",
    "f2",
    "input_mode",
    "status",
    "accuracy",
    "decoded_return",
    "true_return",
    "std_err",
    "excluded",
];

const SUMMARY_COLUMNS: &[&str] = &[
    "env",
    "noise",
    "noise_level",
    "beta",
    "f1",
    "f2",
    "input_mode",
    "trials",
    "excluded",
    "mean_accuracy",
    "std_accuracy",
    "std_err",
];

fn config_cells(cfg: &ExperimentConfig) -> [String; 7] {
    [
        cfg.env.to_string(),
        cfg.noise.to_string(),
        cfg.noise_level.to_string(),
        cfg.train.beta.to_string(),
        cfg.train.f1.to_string(),
        cfg.train.f2.to_string(),
        cfg.train.input_mode.to_string(),
    ]
}

fn write_trial_row(
    csv: &mut CsvWriter,
    cfg: &ExperimentConfig,
    record: &TrialRecord,
) -> Result<(), CliError> {
    let c = config_cells(cfg);
    csv.row(&[
        "trial".into(),
        record.trial.to_string(),
        record.seed.to_string(),
        c[0].clone(),
        c[1].clone(),
        c[2].clone(),
        c[3].clone(),
        c[4].clone(),
        c[5].clone(),
        c[6].clone(),
        match &record.status {
            TrialStatus::Ok => "ok".into(),
            TrialStatus::Failed(reason) => format!("failed: {reason}"),
        },
        fmt(record.accuracy),
        fmt(record.decoded_return),
        fmt(record.true_return),
        String::new(),
        String::new(),
    ])
}

fn write_summary_row(
    csv: &mut CsvWriter,
    cfg: &ExperimentConfig,
    summary: &RunSummary,
) -> Result<(), CliError> {
    let c = config_cells(cfg);
    csv.row(&[
        "summary".into(),
        String::new(),
        String::new(),
        c[0].clone(),
        c[1].clone(),
        c[2].clone(),
        c[3].clone(),
        c[4].clone(),
        c[5].clone(),
        c[6].clone(),
        "ok".into(),
        fmt(summary.mean_accuracy),
        String::new(),
        String::new(),
        fmt(summary.std_err),
        summary.excluded.to_string(),
    ])
}

fn append_summary(
    csv: &mut CsvWriter,
    cfg: &ExperimentConfig,
    summary: &RunSummary,
) -> Result<(), CliError> {
    let c = config_cells(cfg);
    csv.row(&[
        c[0].clone(),
        c[1].clone(),
        c[2].clone(),
        c[3].clone(),
        c[4].clone(),
        c[5].clone(),
        c[6].clone(),
        summary.trials.len().to_string(),
        summary.excluded.to_string(),
        fmt(summary.mean_accuracy),
        fmt(summary.std_accuracy),
        fmt(summary.std_err),
    ])
}

/// Minimal CSV writer that pins the column count per file.
pub(crate) struct CsvWriter {
    writer: BufWriter<File>,
    path: PathBuf,
    columns: usize,
}

impl CsvWriter {
    pub(crate) fn create(path: &Path, header: &[&str]) -> Result<Self, CliError> {
        let file =
            File::create(path).map_err(|e| CliError::Io { path: path.into(), source: e })?;
        let mut w = CsvWriter {
            writer: BufWriter::new(file),
            path: path.into(),
            columns: header.len(),
        };
        let cells: Vec<String> = header.iter().map(|s| s.to_string()).collect();
        w.row(&cells)?;
        Ok(w)
    }

    pub(crate) fn row<S: AsRef<str>>(&mut self, cells: &[S]) -> Result<(), CliError> {
        assert_eq!(cells.len(), self.columns, "csv row width drifted");
        let line: Vec<&str> = cells.iter().map(|c| c.as_ref()).collect();
        writeln!(self.writer, "{}", line.join(","))
            .map_err(|e| CliError::Io { path: self.path.clone(), source: e })
    }

    pub(crate) fn flush(&mut self) -> Result<(), CliError> {
        self.writer
            .flush()
            .map_err(|e| CliError::Io { path: self.path.clone(), source: e })
    }
}
