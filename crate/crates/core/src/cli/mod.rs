//! Batch driver: runs experiment cells from a config file and writes the
//! results bundle (`records.ndjson`, `timings.ndjson`, `summary.tsv`).

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::algorithm::check_compatible;
use crate::domain::{validate_dataset, Dataset, MasterMode};
use crate::error::{Error, Result};
use crate::evaluation::{cross_validate, generalization_ratios, CvConfig, CvResult, Experiment, GeneralizationRatios, Method, ScoreReport};
use crate::evaluation::FoldThresholds;
use crate::learners::{LearnerKind, LearnerSpec};

pub use config::{cell_label, grid_methods, parse_config, read_config, run_methods, ExperimentConfig};

/// Bumped whenever a record field changes meaning or shape.
pub const BUNDLE_VERSION: u32 = 1;
pub const WORKERS_ENV: &str = "MT_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "mt", about = "Constrained learning by alternating label adjustment and retraining")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the cells listed under [[runs]] for every dataset.
    Run(RunArgs),
    /// Run the parameter grid (ptr, five alpha/beta pairs, ideal case).
    Grid(RunArgs),
    /// Check the config and datasets without training.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads; defaults to the available cores.
    #[arg(long, env = WORKERS_ENV)]
    pub workers: Option<usize>,
    /// Replaces the config's seed.
    #[arg(long)]
    pub seed_override: Option<u64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SplitRecord {
    pub s_mean: f64,
    pub s_std: f64,
    pub c_mean: f64,
    pub c_std: f64,
    pub any_capped: bool,
    pub s: Vec<f64>,
    /// Displayed (capped) C per fold.
    pub c: Vec<f64>,
    /// Uncapped C per fold; null when infinite (zero threshold).
    pub c_raw: Vec<Option<f64>>,
}

impl From<&ScoreReport> for SplitRecord {
    fn from(r: &ScoreReport) -> Self {
        Self {
            s_mean: r.s_mean,
            s_std: r.s_std,
            c_mean: r.c_mean,
            c_std: r.c_std,
            any_capped: r.any_capped,
            s: r.s.clone(),
            c: r.c.iter().map(|v| v.reported()).collect(),
            c_raw: r.c.iter().map(|v| v.value.is_finite().then_some(v.value)).collect(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct IterationSummary {
    pub k: usize,
    pub master_mode: MasterMode,
    pub beta_fallback: bool,
    pub loss_to_ground_truth: f64,
    pub constraint_violation: Option<f64>,
    pub predictions_feasible: bool,
    pub master_objective: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FoldRecord {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub thresholds: FoldThresholds,
    pub train_s: f64,
    pub test_s: f64,
    pub train_c: f64,
    pub test_c: f64,
    pub history: Option<Vec<IterationSummary>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CellResult {
    pub train: SplitRecord,
    pub test: SplitRecord,
    pub ratios: GeneralizationRatios,
    pub folds: Vec<FoldRecord>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConfigEcho {
    pub learner: LearnerKind,
    pub constraint: config::ConstraintConfig,
    pub scaling: crate::data::Scaling,
    pub folds: usize,
    pub seed: u64,
    pub skip_pretraining: bool,
    pub selection: crate::algorithm::ModelSelection,
    pub warm_start: bool,
}

/// One line of `records.ndjson`.
#[derive(Clone, Debug, Serialize)]
pub struct RunRecord {
    pub version: u32,
    pub experiment: String,
    pub dataset: String,
    pub cell: String,
    pub method: Method,
    pub config: ConfigEcho,
    pub status: &'static str,
    pub error: Option<String>,
    pub result: Option<CellResult>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FoldTiming {
    pub fold: usize,
    pub wall_time: f64,
    pub master_wall_time: Vec<f64>,
    pub learner_wall_time: Vec<f64>,
}

/// One line of `timings.ndjson`; the only nondeterministic output.
#[derive(Clone, Debug, Serialize)]
pub struct TimingRecord {
    pub version: u32,
    pub dataset: String,
    pub cell: String,
    pub folds: Vec<FoldTiming>,
}

fn cell_result(res: &CvResult<f64>) -> Result<(CellResult, Vec<FoldTiming>)> {
    let ratios = generalization_ratios(&res.train, &res.test)?;
    let mut folds = Vec::new();
    let mut timings = Vec::new();
    for f in &res.folds {
        let history = f.history.as_ref().map(|h| {
            h.iterations
                .iter()
                .map(|r| IterationSummary {
                    k: r.k,
                    master_mode: r.master_mode,
                    beta_fallback: r.beta_fallback,
                    loss_to_ground_truth: r.loss_to_ground_truth,
                    constraint_violation: r.constraint_violation.is_finite().then_some(r.constraint_violation),
                    predictions_feasible: r.predictions_feasible,
                    master_objective: r.master_objective,
                })
                .collect()
        });
        folds.push(FoldRecord {
            fold: f.fold,
            train_size: f.train_indices.len(),
            test_size: f.test_indices.len(),
            thresholds: f.thresholds.clone(),
            train_s: f.train_s,
            test_s: f.test_s,
            train_c: f.train_c.reported(),
            test_c: f.test_c.reported(),
            history,
        });
        let (master, learner) = f
            .history
            .as_ref()
            .map(|h| {
                (
                    h.iterations.iter().map(|r| r.master_wall_time).collect(),
                    h.iterations.iter().map(|r| r.learner_wall_time).collect(),
                )
            })
            .unwrap_or_default();
        timings.push(FoldTiming {
            fold: f.fold,
            wall_time: f.wall_time,
            master_wall_time: master,
            learner_wall_time: learner,
        });
    }
    Ok((
        CellResult {
            train: SplitRecord::from(&res.train),
            test: SplitRecord::from(&res.test),
            ratios,
            folds,
        },
        timings,
    ))
}

struct Cell<'a> {
    dataset: &'a config::DatasetConfig,
    data: &'a std::result::Result<Dataset<f64>, String>,
    method: Method,
}

fn run_cell(cfg: &ExperimentConfig, cell: &Cell<'_>) -> (RunRecord, TimingRecord) {
    let learner = cell.dataset.learner.clone().unwrap_or_else(|| cfg.learner.clone());
    let label = cell_label(&cell.method);
    let echo = ConfigEcho {
        learner: learner.clone(),
        constraint: cell.dataset.constraint.clone(),
        scaling: cell.dataset.scaling,
        folds: cfg.folds,
        seed: cfg.seed,
        skip_pretraining: cfg.skip_pretraining,
        selection: cfg.selection,
        warm_start: cfg.warm_start,
    };
    let outcome = cell.data.as_ref().map_err(|e| e.clone()).and_then(|data| {
        let exp = Experiment {
            method: cell.method,
            learner: LearnerSpec::new(learner, cfg.seed),
            constraint: cell.dataset.constraint.recipe(),
            skip_pretraining: cfg.skip_pretraining,
            selection: cfg.selection,
            warm_start: cfg.warm_start,
        };
        let cv = CvConfig {
            folds: cfg.folds,
            seed: cfg.seed,
            scaling: cell.dataset.scaling,
        };
        cross_validate(&exp, data, &cv)
            .and_then(|r| cell_result(&r))
            .map_err(|e| e.to_string())
    });
    let (status, error, result, folds) = match outcome {
        Ok((r, t)) => ("ok", None, Some(r), t),
        Err(e) => ("error", Some(e), None, Vec::new()),
    };
    match &error {
        Some(e) => log::error!("{} / {label}: {e}", cell.dataset.name),
        None => log::info!("{} / {label}: done", cell.dataset.name),
    }
    (
        RunRecord {
            version: BUNDLE_VERSION,
            experiment: cfg.name.clone(),
            dataset: cell.dataset.name.clone(),
            cell: label.clone(),
            method: cell.method,
            config: echo,
            status,
            error,
            result,
        },
        TimingRecord {
            version: BUNDLE_VERSION,
            dataset: cell.dataset.name.clone(),
            cell: label,
            folds,
        },
    )
}

/// Outcome of a batch: how many cells ran and how many failed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchSummary {
    pub cells: usize,
    pub failed: usize,
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_else(|| "NA".into())
}

const SUMMARY_HEADER: &str = "dataset\tcell\tstatus\ttrain_S\ttrain_S_std\ttrain_C\ttrain_C_std\ttrain_C_capped\ttest_S\ttest_S_std\ttest_C\ttest_C_std\ttest_C_capped\tratio_S\tratio_C";

fn summary_row(r: &RunRecord) -> String {
    let mut row = format!("{}\t{}\t{}", r.dataset, r.cell, r.status);
    match &r.result {
        Some(res) => {
            for s in [&res.train, &res.test] {
                write!(
                    row,
                    "\t{}\t{}\t{}\t{}\t{}",
                    fmt(s.s_mean),
                    fmt(s.s_std),
                    fmt(s.c_mean),
                    fmt(s.c_std),
                    s.any_capped
                )
                .expect("writing to a String");
            }
            write!(row, "\t{}\t{}", fmt_opt(res.ratios.s.value), fmt_opt(res.ratios.c.value)).expect("writing to a String");
        }
        None => row.push_str(&"\tNA".repeat(12)),
    }
    row
}

/// Table-style view: one row per dataset and score, one column per cell.
fn wide_table(records: &[RunRecord], methods: &[Method]) -> String {
    let labels: Vec<String> = methods.iter().map(cell_label).collect();
    let mut out = format!("dataset\tscore\t{}\n", labels.join("\t"));
    let mut datasets: Vec<&str> = Vec::new();
    for r in records {
        if !datasets.contains(&r.dataset.as_str()) {
            datasets.push(&r.dataset);
        }
    }
    for d in datasets {
        for score in ["S", "C"] {
            let mut row = format!("{d}\t{score}");
            for l in &labels {
                let cell = records.iter().find(|r| r.dataset == d && &r.cell == l);
                let text = match cell.and_then(|r| r.result.as_ref()) {
                    Some(res) if score == "S" => format!("{} ± {}", fmt(res.train.s_mean), fmt(res.train.s_std)),
                    Some(res) => format!("{} ± {}", fmt(res.train.c_mean), fmt(res.train.c_std)),
                    None => "error".into(),
                };
                row.push('\t');
                row.push_str(&text);
            }
            out.push_str(&row);
            out.push('\n');
        }
    }
    out
}

fn worker_pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let n = workers
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::Usage(format!("cannot start {n} workers: {e}")))
}

fn execute(args: &RunArgs, grid: bool) -> Result<BatchSummary> {
    let mut cfg = read_config(&args.config)?;
    if let Some(seed) = args.seed_override {
        cfg.seed = seed;
    }
    let methods = if grid { grid_methods(&cfg)? } else { run_methods(&cfg) };
    let base = base_dir(&args.config);
    let pool = worker_pool(args.workers)?;
    let (records, timings): (Vec<RunRecord>, Vec<TimingRecord>) = pool.install(|| {
        let datasets: Vec<std::result::Result<Dataset<f64>, String>> = cfg
            .datasets
            .par_iter()
            .map(|d| config::load_dataset(d, &base).map_err(|e| e.to_string()))
            .collect();
        let cells: Vec<Cell<'_>> = cfg
            .datasets
            .iter()
            .zip(&datasets)
            .flat_map(|(dataset, data)| methods.iter().map(move |&method| Cell { dataset, data, method }))
            .collect();
        cells.par_iter().map(|c| run_cell(&cfg, c)).unzip()
    });

    fs::create_dir_all(&args.out)?;
    let mut lines = String::new();
    for r in &records {
        lines.push_str(&serde_json::to_string(r)?);
        lines.push('\n');
    }
    fs::write(args.out.join("records.ndjson"), lines)?;
    let mut lines = String::new();
    for t in &timings {
        lines.push_str(&serde_json::to_string(t)?);
        lines.push('\n');
    }
    fs::write(args.out.join("timings.ndjson"), lines)?;
    let mut summary = format!("{SUMMARY_HEADER}\n");
    for r in &records {
        summary.push_str(&summary_row(r));
        summary.push('\n');
    }
    fs::write(args.out.join("summary.tsv"), summary)?;
    if grid {
        fs::write(args.out.join("grid.tsv"), wide_table(&records, &methods))?;
    }
    Ok(BatchSummary {
        cells: records.len(),
        failed: records.iter().filter(|r| r.status != "ok").count(),
    })
}

/// Runs the configured cells and writes the bundle to `args.out`.
pub fn cmd_run(args: &RunArgs) -> Result<BatchSummary> {
    execute(args, false)
}

/// Runs the default parameter grid (optionally restricted by `[grid]`).
pub fn cmd_grid(args: &RunArgs) -> Result<BatchSummary> {
    execute(args, true)
}

/// Parses the config and checks every dataset without training. Returns
/// one diagnostic per problem; empty means valid.
pub fn cmd_validate(config_path: &Path) -> Result<Vec<String>> {
    let cfg = read_config(config_path)?;
    let base = base_dir(config_path);
    let mut out = Vec::new();
    if let Err(e) = grid_methods(&cfg) {
        out.push(e.to_string());
    }
    for d in &cfg.datasets {
        let data: Dataset<f64> = match config::load_dataset(d, &base) {
            Ok(data) => data,
            Err(e) => {
                out.push(format!("dataset '{}': {e}", d.name));
                continue;
            }
        };
        for v in validate_dataset(&data) {
            out.push(format!("dataset '{}': {v}", d.name));
        }
        let bound = d
            .constraint
            .recipe::<f64>()
            .build(&data)
            .and_then(|spec| check_compatible(&spec, data.task, data.len()));
        if let Err(e) = bound {
            out.push(format!("dataset '{}': {e}", d.name));
        }
    }
    Ok(out)
}
