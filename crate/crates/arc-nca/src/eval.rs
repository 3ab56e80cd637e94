//! Inference, per-task scoring, and the batch benchmark driver.
//!
//! Inference is deterministic: the cell-update mask is disabled, so a trained
//! model always produces the same output for a given input. A task counts as
//! solved only when every test output is reproduced exactly; pixel accuracy
//! is tracked per test pair so near misses are visible.

use std::fs::{self, File};
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{
    classify_feasibility, decode_argmax, filter_dataset, load_task_dir, one_hot_encode,
    Feasibility, FeasibilityRecord, FilterCounts, Grid, Task,
};
use crate::model::{rollout, MaskConfig, ModelParams, ModelSpec};
use crate::seeds;
use crate::tensor::Scalar;
use crate::trainer::{train_task, TrainConfig, TrainError};

/// Runs the model on one input grid for a fixed number of steps and decodes
/// the most probable color per cell.
///
/// The input is one-hot encoded (hidden channels zero), rolled out with cell
/// updates applied everywhere (no stochastic masking), and the final state's
/// color channels are collapsed by argmax.
pub fn infer<S: Scalar>(params: &ModelParams<S>, input: &Grid, steps: usize) -> Grid {
    let init = one_hot_encode::<S>(input, params.spec.total_channels())
        .expect("state always has at least the color channels");
    let traj = rollout(
        params,
        &init,
        steps,
        MaskConfig::disabled(),
        &mut seeds::stream(0, &[]),
    )
    .expect("encoded state matches the model's channel count");
    decode_argmax(traj.final_state())
}

/// Fraction of cells on which two same-shaped grids agree. Returns 0.0 when
/// the shapes differ (a shape miss can never be partially right).
pub fn pixel_accuracy(a: &Grid, b: &Grid) -> f64 {
    if a.shape() != b.shape() {
        return 0.0;
    }
    let total = a.cells().len();
    if total == 0 {
        return 1.0;
    }
    let hits = a
        .cells()
        .iter()
        .zip(b.cells())
        .filter(|(x, y)| x == y)
        .count();
    hits as f64 / total as f64
}

/// Training-side context carried into a task's evaluation record.
#[derive(Debug, Clone, Copy, Default)]
pub struct EvalMeta {
    /// Mean training loss at the final epoch.
    pub final_train_loss: f64,
    /// Seed the task was trained with.
    pub seed: u64,
}

/// Outcome of evaluating one trained model on one task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: String,
    /// True only if every test output was reproduced exactly.
    pub solved: bool,
    /// Per-test-pair fraction of correct cells.
    pub pixel_accuracy: Vec<f64>,
    pub final_train_loss: f64,
    /// Wall-clock seconds spent training and evaluating the task.
    pub wall_time: f64,
    pub seed: u64,
}

impl TaskResult {
    /// The worst pixel accuracy across the task's test pairs: the task-level
    /// score a multi-test task must clear on all of them.
    pub fn min_pixel_accuracy(&self) -> f64 {
        self.pixel_accuracy
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
            .min(1.0)
    }
}

/// Scores a trained model against every test pair of a task.
pub fn evaluate_task<S: Scalar>(
    params: &ModelParams<S>,
    task: &Task,
    steps: usize,
    meta: EvalMeta,
) -> TaskResult {
    let start = Instant::now();
    let mut accuracies = Vec::with_capacity(task.test.len());
    let mut solved = !task.test.is_empty();
    for pair in &task.test {
        let got = infer(params, &pair.input, steps);
        let acc = pixel_accuracy(&got, &pair.output);
        solved &= acc == 1.0;
        accuracies.push(acc);
    }
    TaskResult {
        task_id: task.id.clone(),
        solved,
        pixel_accuracy: accuracies,
        final_train_loss: meta.final_train_loss,
        wall_time: start.elapsed().as_secs_f64(),
        seed: meta.seed,
    }
}

/// Aggregate of one benchmark run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    /// Per-task results sorted by task id.
    pub results: Vec<TaskResult>,
    /// How the directory partitioned under the feasibility filter.
    pub filter_counts: FilterCounts,
    /// Files that failed to parse and were skipped.
    pub unreadable_files: usize,
    /// Feasible tasks whose training run failed outright.
    pub failed_tasks: usize,
}

impl BenchmarkSummary {
    /// Number of feasible tasks a model was trained and scored on.
    pub fn attempted(&self) -> usize {
        self.results.len()
    }

    /// Tasks whose every test output was exact.
    pub fn solved_count(&self) -> usize {
        self.results.iter().filter(|r| r.solved).count()
    }

    /// Tasks that ended training with mean loss below the threshold.
    pub fn loss_below(&self, threshold: f64) -> usize {
        self.results
            .iter()
            .filter(|r| r.final_train_loss < threshold)
            .count()
    }

    /// Tasks whose worst test pair still matched more than the given fraction
    /// of cells.
    pub fn pixel_above(&self, threshold: f64) -> usize {
        self.results
            .iter()
            .filter(|r| r.min_pixel_accuracy() > threshold)
            .count()
    }

    /// The headline rows written to `summary.json`.
    pub fn headline(&self) -> serde_json::Value {
        serde_json::json!({
            "attempted": self.attempted(),
            "solved": self.solved_count(),
            "solved_rate": if self.attempted() == 0 {
                0.0
            } else {
                self.solved_count() as f64 / self.attempted() as f64
            },
            "loss_below_0.01": self.loss_below(0.01),
            "pixel_above_0.9": self.pixel_above(0.9),
            "filter": {
                "feasible": self.filter_counts.feasible,
                "size_mismatch": self.filter_counts.size_mismatch,
                "color_novel": self.filter_counts.color_novel,
            },
            "unreadable_files": self.unreadable_files,
            "failed_tasks": self.failed_tasks,
        })
    }
}

/// Knobs of a benchmark run that are not part of the training recipe.
#[derive(Debug, Clone)]
pub struct BenchOptions {
    /// Rollout steps at evaluation time.
    pub steps: usize,
    /// Worker threads for the task-parallel loop.
    pub workers: usize,
    /// Where to write result files; `None` keeps everything in memory.
    pub out_dir: Option<PathBuf>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            steps: 10,
            workers: 1,
            out_dir: None,
        }
    }
}

/// One line of `results.partial.jsonl`, written as each task finishes.
#[derive(Serialize)]
struct PartialRecord<'a> {
    #[serde(flatten)]
    result: &'a TaskResult,
}

/// Trains one model per feasible task in a directory and scores each on its
/// test pairs.
///
/// Task order on disk does not matter: each task's seed is derived from the
/// base seed and the task id, and the task-parallel loop collects in input
/// order, so the final artifacts are identical for any worker count. While
/// running, finished tasks are appended to `results.partial.jsonl` (progress
/// order, not deterministic); the sorted `results.jsonl`, `results.csv`, and
/// `summary.json` are written at the end.
pub fn run_benchmark<S: Scalar>(
    dir: &Path,
    spec: ModelSpec,
    cfg: &TrainConfig,
    opts: &BenchOptions,
) -> Result<BenchmarkSummary, TrainError> {
    cfg.validate()?;
    let (tasks, errors) = load_task_dir(dir).map_err(TrainError::Data)?;
    for (path, err) in &errors {
        eprintln!("skipping {}: {err}", path.display());
    }
    let (filter_counts, feasible) = filter_dataset(tasks).map_err(TrainError::Data)?;

    if let Some(out) = &opts.out_dir {
        fs::create_dir_all(out).map_err(TrainError::Log)?;
    }
    let partial = match &opts.out_dir {
        Some(out) => {
            let file = File::create(out.join("results.partial.jsonl")).map_err(TrainError::Log)?;
            Some(Mutex::new(BufWriter::new(file)))
        }
        None => None,
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .expect("thread pool construction");
    let outcomes: Vec<Result<TaskResult, (String, TrainError)>> = pool.install(|| {
        use rayon::prelude::*;
        feasible
            .par_iter()
            .map(|task| {
                let started = Instant::now();
                let mut task_cfg = cfg.clone();
                task_cfg.seed = seeds::derive_key(cfg.seed, &[seeds::hash_str(&task.id)]);
                let (params, history) = train_task::<S>(task, spec, &task_cfg)
                    .map_err(|e| (task.id.clone(), e))?;
                let meta = EvalMeta {
                    final_train_loss: history.final_loss,
                    seed: task_cfg.seed,
                };
                let mut result = evaluate_task::<S>(&params, task, opts.steps, meta);
                result.wall_time = started.elapsed().as_secs_f64();
                if let Some(writer) = &partial {
                    let mut guard = writer.lock().expect("partial writer lock");
                    let line = serde_json::to_string(&PartialRecord { result: &result })
                        .expect("task result serializes");
                    let _ = writeln!(guard, "{line}");
                    let _ = guard.flush();
                }
                Ok(result)
            })
            .collect()
    });

    let mut results = Vec::new();
    let mut failed_tasks = 0;
    for outcome in outcomes {
        match outcome {
            Ok(result) => results.push(result),
            Err((id, err)) => {
                eprintln!("training failed for {id}: {err}");
                failed_tasks += 1;
            }
        }
    }
    results.sort_by(|a, b| a.task_id.cmp(&b.task_id));

    let summary = BenchmarkSummary {
        results,
        filter_counts,
        unreadable_files: errors.len(),
        failed_tasks,
    };
    if let Some(out) = &opts.out_dir {
        write_benchmark_files(out, &summary).map_err(TrainError::Log)?;
    }
    Ok(summary)
}

/// Writes the sorted, deterministic artifacts of a finished run.
fn write_benchmark_files(out: &Path, summary: &BenchmarkSummary) -> std::io::Result<()> {
    let mut jsonl = BufWriter::new(File::create(out.join("results.jsonl"))?);
    for result in &summary.results {
        let line = serde_json::to_string(result).expect("task result serializes");
        writeln!(jsonl, "{line}")?;
    }
    jsonl.flush()?;

    let mut csv = BufWriter::new(File::create(out.join("results.csv"))?);
    writeln!(csv, "id,solved,min_pixel_acc,final_loss,seconds")?;
    for r in &summary.results {
        writeln!(
            csv,
            "{},{},{:.6},{:.6},{:.3}",
            r.task_id,
            r.solved,
            r.min_pixel_accuracy(),
            r.final_train_loss,
            r.wall_time
        )?;
    }
    csv.flush()?;

    let mut file = BufWriter::new(File::create(out.join("summary.json"))?);
    serde_json::to_writer_pretty(&mut file, &summary.headline())
        .map_err(std::io::Error::other)?;
    writeln!(file)?;
    file.flush()
}

/// Writes one feasibility record per task (sorted by id) as JSON lines.
pub fn write_filter_report(path: &Path, records: &[FeasibilityRecord]) -> std::io::Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    for record in records {
        let line = serde_json::to_string(record).expect("feasibility record serializes");
        writeln!(writer, "{line}")?;
    }
    writer.flush()
}

/// Classifies every task in a directory without training anything.
pub fn filter_directory(
    dir: &Path,
) -> Result<(FilterCounts, Vec<FeasibilityRecord>, usize), crate::data::DataError> {
    let (tasks, errors) = load_task_dir(dir)?;
    for (path, err) in &errors {
        eprintln!("skipping {}: {err}", path.display());
    }
    let mut counts = FilterCounts::default();
    let mut records = Vec::with_capacity(tasks.len());
    for task in &tasks {
        let report = classify_feasibility(task);
        match report.status {
            Feasibility::Feasible => counts.feasible += 1,
            Feasibility::SizeMismatch => counts.size_mismatch += 1,
            Feasibility::ColorNovel => counts.color_novel += 1,
        }
        records.push(FeasibilityRecord {
            id: task.id.clone(),
            status: report.status,
            novel_colors: report.novel_colors.into_iter().collect(),
        });
    }
    records.sort_by(|a, b| a.id.cmp(&b.id));
    Ok((counts, records, errors.len()))
}

/// Scores a model's size generalization: infer the spiral on a blank square
/// grid of the given side and compare against the generated spiral.
pub fn scaled_spiral_check<S: Scalar>(params: &ModelParams<S>, side: usize, steps: usize) -> f64 {
    let input = crate::spiral::spiral_input(side, side);
    let expected = crate::spiral::spiral_grid(side, side, 3);
    let got = infer(params, &input, steps);
    pixel_accuracy(&got, &expected)
}
