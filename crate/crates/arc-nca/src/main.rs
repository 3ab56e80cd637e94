//! Command-line front end: filter, train, eval, bench, render, gradcheck.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use arc_nca::checkpoint::{load_checkpoint, save_checkpoint};
use arc_nca::data::{load_task_file, Grid};
use arc_nca::eval::{
    evaluate_task, filter_directory, run_benchmark, write_filter_report, BenchOptions, EvalMeta,
};
use arc_nca::model::ModelSpec;
use arc_nca::render::{render_ascii, render_png_bytes, rollout_frames, Palette};
use arc_nca::trainer::{grad_check, train_task_with, TrainConfig};

#[derive(Parser)]
#[command(
    name = "arcnca",
    version,
    about = "Train neural cellular automata on grid puzzles and benchmark them"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Architecture dimensions.
#[derive(Args, Clone, Copy)]
struct ModelArgs {
    /// Hidden state channels beyond the 10 color channels
    #[arg(long, default_value_t = 20)]
    hidden: usize,
    /// Perception convolution filters
    #[arg(long, default_value_t = 24)]
    filters: usize,
    /// Width of the first dense layer
    #[arg(long, default_value_t = 64)]
    dense_width: usize,
}

impl ModelArgs {
    fn spec(&self) -> ModelSpec {
        ModelSpec {
            hidden_channels: self.hidden,
            perception_filters: self.filters,
            dense_width: self.dense_width,
        }
    }
}

/// Training recipe. Defaults follow the reference configuration.
#[derive(Args, Clone, Copy)]
struct TrainArgs {
    /// Optimizer steps (one aggregated update per epoch)
    #[arg(long, default_value_t = 800)]
    epochs: usize,
    /// Rollout steps per trial
    #[arg(long, default_value_t = 10)]
    steps: usize,
    /// Stochastic rollouts per training example per epoch
    #[arg(long, default_value_t = 128)]
    trials: usize,
    /// Lower bound of the per-rollout cell-mask probability
    #[arg(long, default_value_t = 0.0)]
    mask_lo: f64,
    /// Upper bound of the per-rollout cell-mask probability
    #[arg(long, default_value_t = 0.75)]
    mask_hi: f64,
    /// Learning rate at epoch 0
    #[arg(long, default_value_t = 2e-3)]
    lr_start: f64,
    /// Learning rate the linear schedule ends at
    #[arg(long, default_value_t = 1e-4)]
    lr_end: f64,
    /// Decoupled weight decay applied to every parameter
    #[arg(long, default_value_t = 0.01)]
    weight_decay: f64,
    /// First-moment decay of the optimizer
    #[arg(long, default_value_t = 0.9)]
    beta1: f64,
    /// Second-moment decay of the optimizer
    #[arg(long, default_value_t = 0.999)]
    beta2: f64,
    /// Epsilon inside the optimizer's denominator
    #[arg(long, default_value_t = 1e-8)]
    adam_epsilon: f64,
    /// Global gradient-norm cap (rescale above this)
    #[arg(long, default_value_t = 100.0)]
    grad_norm_cap: f64,
    /// Base seed for initialization and rollout randomness
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            steps: self.steps,
            trials_per_example: self.trials,
            mask_lo: self.mask_lo,
            mask_hi: self.mask_hi,
            lr_start: self.lr_start,
            lr_end: self.lr_end,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_epsilon: self.adam_epsilon,
            grad_norm_cap: self.grad_norm_cap,
            seed: self.seed,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Classify every task file in a directory without training anything
    Filter {
        /// Directory of task JSON files
        dir: PathBuf,
        /// Write one JSON line per task (id, status, novel colors) here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a fresh model on one task file
    Train {
        /// Task JSON file
        task: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Write the trained model checkpoint here
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write one JSON line per epoch (epoch, lr, mean_loss) here
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a task file's test pairs
    Eval {
        /// Checkpoint written by `train`
        checkpoint: PathBuf,
        /// Task JSON file
        task: PathBuf,
        /// Rollout steps at evaluation time
        #[arg(long, default_value_t = 10)]
        steps: usize,
    },
    /// Train and evaluate every feasible task in a directory
    Bench {
        /// Directory of task JSON files
        dir: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Worker threads (falls back to NCA_ARC_THREADS, then 1)
        #[arg(long)]
        workers: Option<usize>,
        /// Rollout steps at evaluation time
        #[arg(long, default_value_t = 10)]
        eval_steps: usize,
        /// Directory for results.jsonl, results.csv, summary.json
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw a task's pairs, or a checkpoint's rollout, as PNG or ASCII
    Render {
        /// Task JSON file, or a checkpoint when --input is given
        source: PathBuf,
        /// Task JSON file supplying the rollout input (source is then a
        /// checkpoint)
        #[arg(long)]
        input: Option<PathBuf>,
        /// Which test pair of the input task to roll out
        #[arg(long, default_value_t = 0)]
        pair: usize,
        /// Rollout steps
        #[arg(long, default_value_t = 10)]
        steps: usize,
        /// Output PNG path
        #[arg(long, default_value = "render.png")]
        out: PathBuf,
        /// Cell size in pixels
        #[arg(long, default_value_t = 8)]
        cell_px: u32,
        /// Print ASCII grids to stdout instead of writing a PNG
        #[arg(long)]
        ascii: bool,
        /// JSON file with ten "#RRGGBB" colors
        #[arg(long)]
        palette: Option<PathBuf>,
    },
    /// Compare analytic gradients against finite differences on tiny models
    Gradcheck {
        /// Random instances to check
        #[arg(long, default_value_t = 24)]
        trials: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            std::process::exit(code);
        }
    };
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(2);
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Filter { dir, out } => cmd_filter(&dir, out.as_deref()),
        Command::Train {
            task,
            model,
            train,
            out,
            log,
        } => cmd_train(&task, model, train, out.as_deref(), log.as_deref()),
        Command::Eval {
            checkpoint,
            task,
            steps,
        } => cmd_eval(&checkpoint, &task, steps),
        Command::Bench {
            dir,
            model,
            train,
            workers,
            eval_steps,
            out,
        } => cmd_bench(&dir, model, train, workers, eval_steps, out),
        Command::Render {
            source,
            input,
            pair,
            steps,
            out,
            cell_px,
            ascii,
            palette,
        } => cmd_render(&source, input.as_deref(), pair, steps, &out, cell_px, ascii, palette.as_deref()),
        Command::Gradcheck { trials, seed } => cmd_gradcheck(trials, seed),
    }
}

fn cmd_filter(dir: &Path, out: Option<&Path>) -> anyhow::Result<i32> {
    let (counts, records, _unreadable) =
        filter_directory(dir).with_context(|| format!("filtering {}", dir.display()))?;
    if let Some(path) = out {
        write_filter_report(path, &records)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    println!(
        "size_mismatch={} color_novel={} feasible={}",
        counts.size_mismatch, counts.color_novel, counts.feasible
    );
    Ok(0)
}

fn cmd_train(
    task_path: &Path,
    model: ModelArgs,
    train: TrainArgs,
    out: Option<&Path>,
    log: Option<&Path>,
) -> anyhow::Result<i32> {
    let task = load_task_file(task_path)?;
    let spec = model.spec();
    let cfg = train.config();

    let mut log_file = match log {
        Some(path) => Some(std::io::BufWriter::new(
            std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
        )),
        None => None,
    };
    let mut log_err: Option<std::io::Error> = None;
    let progress_every = (cfg.epochs / 10).max(1);
    let (params, history) = train_task_with::<f32>(&task, spec, &cfg, |rec| {
        if let (Some(w), None) = (log_file.as_mut(), log_err.as_ref()) {
            let line = serde_json::to_string(rec).expect("epoch record serializes");
            if let Err(e) = writeln!(w, "{line}") {
                log_err = Some(e);
            }
        }
        if rec.epoch % progress_every == 0 || rec.epoch + 1 == cfg.epochs {
            eprintln!(
                "epoch {:>4}/{} loss {:.6} lr {:.6}",
                rec.epoch + 1,
                cfg.epochs,
                rec.mean_loss,
                rec.lr
            );
        }
    })?;
    if let Some(e) = log_err {
        return Err(e).context("writing the epoch log");
    }
    if let Some(mut w) = log_file {
        w.flush().context("writing the epoch log")?;
    }

    if let Some(path) = out {
        save_checkpoint(path, &params, &cfg.digest())
            .with_context(|| format!("writing {}", path.display()))?;
    }
    println!(
        "{}",
        serde_json::json!({
            "task": task.id,
            "epochs": cfg.epochs,
            "params": spec.param_count(),
            "final_loss": history.final_loss,
            "wall_time": history.wall_time,
            "checkpoint": out.map(|p| p.display().to_string()),
        })
    );
    Ok(0)
}

fn cmd_eval(checkpoint: &Path, task_path: &Path, steps: usize) -> anyhow::Result<i32> {
    let (params, _digest) =
        load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let task = load_task_file(task_path)?;
    let result = evaluate_task(&params, &task, steps, EvalMeta::default());
    println!("{}", serde_json::to_string_pretty(&result)?);
    Ok(0)
}

fn cmd_bench(
    dir: &Path,
    model: ModelArgs,
    train: TrainArgs,
    workers: Option<usize>,
    eval_steps: usize,
    out: Option<PathBuf>,
) -> anyhow::Result<i32> {
    let workers = workers
        .or_else(|| {
            std::env::var("NCA_ARC_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(1);
    let opts = BenchOptions {
        steps: eval_steps,
        workers,
        out_dir: out,
    };
    let summary = run_benchmark::<f32>(dir, model.spec(), &train.config(), &opts)
        .with_context(|| format!("benchmarking {}", dir.display()))?;
    println!("{}", serde_json::to_string_pretty(&summary.headline())?);
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn cmd_render(
    source: &Path,
    input: Option<&Path>,
    pair: usize,
    steps: usize,
    out: &Path,
    cell_px: u32,
    ascii: bool,
    palette: Option<&Path>,
) -> anyhow::Result<i32> {
    let palette = match palette {
        Some(path) => Palette::from_json_file(path)
            .with_context(|| format!("reading palette {}", path.display()))?,
        None => Palette::default(),
    };
    let grids: Vec<Grid> = match input {
        None => {
            let task = load_task_file(source)?;
            task.train
                .iter()
                .chain(task.test.iter())
                .flat_map(|p| [p.input.clone(), p.output.clone()])
                .collect()
        }
        Some(input_path) => {
            let (params, _) = load_checkpoint(source)
                .with_context(|| format!("loading {}", source.display()))?;
            let task = load_task_file(input_path)?;
            let Some(test_pair) = task.test.get(pair) else {
                bail!(
                    "task {} has {} test pairs; --pair {pair} is out of range",
                    task.id,
                    task.test.len()
                );
            };
            rollout_frames(&params, &test_pair.input, steps)
        }
    };
    if ascii {
        let mut stdout = std::io::stdout().lock();
        for grid in &grids {
            writeln!(stdout, "{}", render_ascii(grid))?;
        }
    } else {
        let bytes = render_png_bytes(&grids, cell_px, &palette)?;
        std::fs::write(out, bytes).with_context(|| format!("writing {}", out.display()))?;
        eprintln!("wrote {}", out.display());
    }
    Ok(0)
}

fn cmd_gradcheck(trials: usize, seed: u64) -> anyhow::Result<i32> {
    let report = grad_check(trials, seed);
    for (i, case) in report.cases.iter().enumerate() {
        println!(
            "case {:>2}: {}x{} grid, {} channels, {} steps, mask {:.2} -> rel err {:.3e}",
            i,
            case.rows,
            case.cols,
            case.channels,
            case.steps,
            case.mask_probability,
            case.rel_err
        );
    }
    let pass = report.max_rel_err < 1e-6;
    println!(
        "max_rel_err={:.3e} threshold=1.0e-6 {}",
        report.max_rel_err,
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(if pass { 0 } else { 2 })
}
