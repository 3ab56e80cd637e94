//! Acceptance suite: one test per release criterion, named `c01`..`c10` in
//! the order the project tracks them. Each prints its measured numbers to
//! stderr so a run doubles as a report.
//!
//! Criteria that need the public ARC training set (c01, c05-c08) are
//! `#[ignore]`d by default and run with `cargo test --test acceptance --
//! --ignored` once the dataset is available; `arc_training_dir` documents
//! where to put it. Every such criterion also has an always-on `*_fixture`
//! counterpart exercising the same machinery on the bundled task files.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;
use std::time::Instant;

use arc_nca::checkpoint::{load_checkpoint, save_checkpoint};
use arc_nca::data::{decode_argmax, load_task_file, one_hot_encode, Grid, Task};
use arc_nca::eval::{
    evaluate_task, filter_directory, pixel_accuracy, run_benchmark, scaled_spiral_check,
    BenchOptions, EvalMeta,
};
use arc_nca::model::{
    init_params_seeded, rollout, MaskConfig, ModelParams, ModelSpec,
};
use arc_nca::seeds;
use arc_nca::spiral::validate_spiral_recipe;
use arc_nca::tensor::{
    conv3x3_forward, cross_entropy, layernorm_forward, softmax10, Tensor3,
};
use arc_nca::trainer::{grad_check, train_task, TrainConfig};
use rand::Rng;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

/// Where the 400 public ARC training task files live: `$ARC_DATA_DIR`, or
/// `data/arc/training/` at the repository root.
fn arc_training_dir() -> PathBuf {
    if let Ok(dir) = std::env::var("ARC_DATA_DIR") {
        let path = PathBuf::from(dir);
        assert!(
            path.is_dir(),
            "ARC_DATA_DIR={} is not a directory",
            path.display()
        );
        return path;
    }
    let fallback = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/arc/training");
    assert!(
        fallback.is_dir(),
        "public ARC training set not found; set ARC_DATA_DIR or place the \
         400 task JSON files under data/arc/training/ at the repository root"
    );
    fallback
}

fn load_named_task(id: &str) -> Task {
    let path = arc_training_dir().join(format!("{id}.json"));
    load_task_file(&path).unwrap_or_else(|e| panic!("loading {}: {e}", path.display()))
}

/// Serial-execution training pool so wall-clock assertions measure one core.
fn single_thread<T: Send>(work: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("pool builds")
        .install(work)
}

// ---------------------------------------------------------------------------
// c01: the feasibility filter reproduces the published dataset split.
// ---------------------------------------------------------------------------

#[test]
#[ignore = "requires the public ARC training set"]
fn c01_public_set_feasibility_counts() {
    let dir = arc_training_dir();
    let start = Instant::now();
    let (counts, records, unreadable) = filter_directory(&dir).expect("filter runs");
    let elapsed = start.elapsed().as_secs_f64();
    eprintln!(
        "c01: size_mismatch={} color_novel={} feasible={} unreadable={} in {elapsed:.2}s",
        counts.size_mismatch, counts.color_novel, counts.feasible, unreadable
    );
    assert_eq!(unreadable, 0, "every dataset file must parse");
    assert_eq!(records.len(), 400, "the public training set has 400 tasks");
    assert_eq!(counts.size_mismatch, 138);
    assert_eq!(counts.color_novel, 90);
    assert_eq!(counts.feasible, 172);
    assert!(elapsed < 5.0, "filter took {elapsed:.2}s, budget is 5s");
}

// ---------------------------------------------------------------------------
// c02: analytic rollout gradients agree with finite differences.
// ---------------------------------------------------------------------------

#[test]
fn c02_rollout_gradients_match_finite_differences() {
    let start = Instant::now();
    let report = grad_check(24, 2024);
    let elapsed = start.elapsed().as_secs_f64();
    eprintln!(
        "c02: {} instances, max_rel_err={:.3e} in {elapsed:.1}s",
        report.cases.len(),
        report.max_rel_err
    );
    assert!(report.cases.len() >= 20);
    assert!(
        report.cases.iter().any(|c| c.mask_probability == 0.0)
            && report.cases.iter().any(|c| c.mask_probability == 0.5),
        "both synchronous and masked rollouts must be differenced"
    );
    for case in &report.cases {
        assert!(case.rows <= 4 && case.cols <= 4 && case.channels <= 12 && case.steps <= 3);
    }
    assert!(
        report.max_rel_err < 1e-6,
        "max relative error {:.3e} breaches 1e-6",
        report.max_rel_err
    );
    assert!(elapsed < 120.0, "gradcheck took {elapsed:.1}s, budget is 2min");
}

// ---------------------------------------------------------------------------
// c03: the numeric kernels match their closed forms.
// ---------------------------------------------------------------------------

#[test]
fn c03_numeric_kernels_match_closed_forms() {
    let mut rng = seeds::stream(303, &[]);

    // Interior convolution cells equal the explicit 9-term-per-channel sum,
    // accumulated in the same (channel, tap) order, so equality is exact.
    let (c_in, filters, rows, cols) = (3usize, 2usize, 5usize, 6usize);
    let input = Tensor3::<f64>::from_data(
        c_in,
        rows,
        cols,
        (0..c_in * rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    );
    let kernel: Vec<f64> = (0..filters * c_in * 9)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let bias: Vec<f64> = (0..filters).map(|_| rng.random_range(-1.0..1.0)).collect();
    let out = conv3x3_forward(&input, &kernel, &bias);
    for f in 0..filters {
        for y in 1..rows - 1 {
            for x in 1..cols - 1 {
                let mut want = bias[f];
                for c in 0..c_in {
                    for tap in 0..9 {
                        let dy = tap / 3 - 1;
                        let dx = tap % 3 - 1;
                        want += kernel[(f * c_in + c) * 9 + tap as usize]
                            * input.at(
                                c,
                                (y as i64 + dy) as usize,
                                (x as i64 + dx) as usize,
                            );
                    }
                }
                assert_eq!(out.at(f, y, x), want, "interior cell ({f},{y},{x})");
            }
        }
    }

    // Cross-entropy of all-zero logits is ln(10) for any target.
    let logits = Tensor3::<f64>::zeros(10, 2, 3);
    let target = Grid::from_rows(vec![vec![0, 5, 9], vec![3, 3, 7]]).unwrap();
    let ce = cross_entropy(&logits, &target).unwrap();
    eprintln!("c03: ce(zero logits)={ce:.12}, ln(10)={:.12}", 10f64.ln());
    assert!((ce - 10f64.ln()).abs() < 1e-9);

    // Softmax rows sum to one even under extreme logits.
    let logits = Tensor3::<f32>::from_data(
        10,
        2,
        2,
        (0..40).map(|_| rng.random_range(-30.0..30.0)).collect(),
    );
    let probs = softmax10(&logits);
    for y in 0..2 {
        for x in 0..2 {
            let sum: f32 = (0..10).map(|c| probs.at(c, y, x)).sum();
            assert!((sum - 1.0).abs() < 1e-6, "cell ({y},{x}) sums to {sum}");
            for c in 0..10 {
                assert!(probs.at(c, y, x) >= 0.0);
            }
        }
    }

    // Layer normalization of a per-cell constant vector returns the shift.
    let channels = 7;
    let input = Tensor3::<f32>::from_data(channels, 2, 2, vec![4.25; channels * 4]);
    let gain: Vec<f32> = (0..channels).map(|_| rng.random_range(0.5..2.0)).collect();
    let shift: Vec<f32> = (0..channels).map(|_| rng.random_range(-1.0..1.0)).collect();
    let out = layernorm_forward(&input, &gain, &shift, 1e-5);
    for c in 0..channels {
        for &v in out.plane(c) {
            assert_eq!(v, shift[c], "channel {c} must pass the shift through");
        }
    }
}

// ---------------------------------------------------------------------------
// c04: the bundled identity task memorizes fast on one core.
// ---------------------------------------------------------------------------

#[test]
fn c04_identity_task_memorizes_quickly() {
    let task = load_task_file(&fixture("identity.json")).unwrap();
    let cfg = TrainConfig {
        epochs: 200,
        trials_per_example: 16,
        steps: 10,
        seed: 0,
        ..TrainConfig::default()
    };
    let (_, history) =
        single_thread(|| train_task::<f32>(&task, ModelSpec::default(), &cfg)).unwrap();
    eprintln!(
        "c04: final_loss={:.5} wall_time={:.1}s",
        history.final_loss, history.wall_time
    );
    assert!(
        history.final_loss < 0.01,
        "loss {:.5} must fall below 0.01 within 200 epochs",
        history.final_loss
    );
    assert!(
        history.wall_time < 60.0,
        "training took {:.1}s, budget is 60s",
        history.wall_time
    );
}

// ---------------------------------------------------------------------------
// c05: named dataset tasks solve across seeds; fixture counterpart uses the
// bundled spiral-growth task.
// ---------------------------------------------------------------------------

/// Dataset-scale configuration with the documented trials reduction (128 to
/// 32) that keeps one run inside the 15-minute budget on one core.
fn dataset_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        trials_per_example: 32,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
#[ignore = "requires the public ARC training set"]
fn c05_named_arc_tasks_solve_across_seeds() {
    for id in ["28e73c20", "3aa6fb7a"] {
        let task = load_named_task(id);
        let mut solves = 0;
        for seed in 0..5u64 {
            let start = Instant::now();
            let (params, history) =
                train_task::<f32>(&task, ModelSpec::default(), &dataset_cfg(seed)).unwrap();
            let result = evaluate_task(&params, &task, 10, EvalMeta::default());
            let mins = start.elapsed().as_secs_f64() / 60.0;
            eprintln!(
                "c05: {id} seed {seed}: solved={} loss={:.4} in {mins:.1}min",
                result.solved, history.final_loss
            );
            assert!(mins < 15.0, "{id} seed {seed} took {mins:.1}min, budget is 15min");
            if result.solved {
                solves += 1;
            }
            if solves >= 3 {
                break;
            }
        }
        assert!(solves >= 3, "{id} solved in {solves}/5 seeds, need 3");
    }
}

fn fixture_cfg(epochs: usize, mask_hi: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        trials_per_example: 8,
        steps: 10,
        mask_hi,
        seed,
        ..TrainConfig::default()
    }
}

static SPIRAL_SEED0: OnceLock<ModelParams<f32>> = OnceLock::new();

/// The seed-0 spiral-growth model at fixture scale, shared by the spiral
/// tests so the 30-second training run happens once.
fn spiral_seed0_model() -> &'static ModelParams<f32> {
    SPIRAL_SEED0.get_or_init(|| {
        let task = load_task_file(&fixture("spiral_growth.json")).unwrap();
        let (params, history) =
            train_task::<f32>(&task, ModelSpec::default(), &fixture_cfg(150, 0.75, 0)).unwrap();
        eprintln!(
            "spiral fixture model: final_loss={:.4} wall_time={:.1}s",
            history.final_loss, history.wall_time
        );
        params
    })
}

#[test]
fn c05_fixture_spiral_task_solves() {
    let task = load_task_file(&fixture("spiral_growth.json")).unwrap();
    let mut solved_by = None;
    for seed in [0u64, 1, 2] {
        let result = if seed == 0 {
            evaluate_task(spiral_seed0_model(), &task, 10, EvalMeta::default())
        } else {
            let (params, _) =
                train_task::<f32>(&task, ModelSpec::default(), &fixture_cfg(150, 0.75, seed))
                    .unwrap();
            evaluate_task(&params, &task, 10, EvalMeta::default())
        };
        eprintln!(
            "c05 fixture: seed {seed} solved={} min_acc={:.4}",
            result.solved,
            result.min_pixel_accuracy()
        );
        if result.solved {
            solved_by = Some(seed);
            break;
        }
    }
    assert!(
        solved_by.is_some(),
        "no seed in [0,1,2] reproduced the held-out 12x12 spiral exactly"
    );
}

// ---------------------------------------------------------------------------
// c06: stochastic cell masking during training must help. On the dataset
// this is the named-task solve-rate comparison; the fixture counterpart
// shows masked training survives asynchronous evaluation where synchronous
// training degrades.
// ---------------------------------------------------------------------------

#[test]
#[ignore = "requires the public ARC training set"]
fn c06_masking_improves_named_task_solve_rate() {
    let task = load_named_task("3aa6fb7a");
    let mut solves = [0usize; 2]; // [masked, unmasked]
    for (slot, mask_hi) in [(0usize, 0.75), (1usize, 0.0)] {
        for seed in 0..5u64 {
            let cfg = TrainConfig {
                mask_hi,
                ..dataset_cfg(seed)
            };
            let (params, _) = train_task::<f32>(&task, ModelSpec::default(), &cfg).unwrap();
            let result = evaluate_task(&params, &task, 10, EvalMeta::default());
            eprintln!(
                "c06: mask_hi={mask_hi} seed {seed}: solved={}",
                result.solved
            );
            if result.solved {
                solves[slot] += 1;
            }
        }
    }
    eprintln!("c06: masked {}/5, unmasked {}/5", solves[0], solves[1]);
    assert!(
        solves[0] > solves[1],
        "masked training solved {}/5, unmasked {}/5; masking must strictly win",
        solves[0],
        solves[1]
    );
}

/// Mean accuracy over five stochastic rollouts (half the cells skip each
/// step, doubled step budget) on the task's held-out pair.
fn async_accuracy(params: &ModelParams<f32>, task: &Task, steps: usize, seed: u64) -> f64 {
    let pair = &task.test[0];
    let mut total = 0.0;
    for trial in 0..5u64 {
        let init = one_hot_encode::<f32>(&pair.input, params.spec.total_channels()).unwrap();
        let mut rng = seeds::stream(seed ^ 0xA5A5, &[trial]);
        let traj = rollout(
            params,
            &init,
            steps * 2,
            MaskConfig::with_probability(0.5),
            &mut rng,
        )
        .unwrap();
        total += pixel_accuracy(&decode_argmax(traj.final_state()), &pair.output);
    }
    total / 5.0
}

#[test]
fn c06_fixture_masked_training_survives_async_evaluation() {
    let task = load_task_file(&fixture("spiral_growth.json")).unwrap();
    let mut means = [0.0f64; 2]; // [masked, unmasked]
    for (slot, mask_hi) in [(0usize, 0.75), (1usize, 0.0)] {
        for seed in [0u64, 1] {
            let (params, _) =
                train_task::<f32>(&task, ModelSpec::default(), &fixture_cfg(100, mask_hi, seed))
                    .unwrap();
            let mean = async_accuracy(&params, &task, 10, seed);
            eprintln!("c06 fixture: mask_hi={mask_hi} seed {seed}: async acc {mean:.4}");
            means[slot] += mean / 2.0;
        }
    }
    eprintln!(
        "c06 fixture: masked {:.4}, unmasked {:.4}",
        means[0], means[1]
    );
    assert!(
        means[0] >= 0.93,
        "masked training must stay accurate under asynchronous evaluation, got {:.4}",
        means[0]
    );
    assert!(
        means[0] > means[1] + 0.03,
        "masked {:.4} must beat unmasked {:.4} by a clear margin",
        means[0],
        means[1]
    );
}

// ---------------------------------------------------------------------------
// c07: a spiral model extends far beyond its training sizes. The dataset
// variant trains the named task with 30-step rollouts and must hit 0.99 at
// 100x100; the fixture counterpart checks the bundled task generalizes from
// sides <= 10 to 50 and 100 with proportional step budgets.
// ---------------------------------------------------------------------------

#[test]
#[ignore = "requires the public ARC training set"]
fn c07_spiral_model_scales_to_100x100() {
    let task = load_named_task("28e73c20");
    // The procedural oracle must reproduce the task's own training pairs
    // before it is trusted as ground truth at 100x100.
    let mut colors: Vec<u8> = task
        .train
        .iter()
        .flat_map(|p| p.output.colors())
        .filter(|&c| c != 0)
        .collect();
    colors.sort_unstable();
    colors.dedup();
    assert_eq!(colors.len(), 1, "expected one spiral color, got {colors:?}");
    validate_spiral_recipe(&task, colors[0])
        .expect("procedural spiral oracle must reproduce the training outputs");

    let mut best = 0.0f64;
    for seed in 0..5u64 {
        let cfg = TrainConfig {
            steps: 30,
            ..dataset_cfg(seed)
        };
        let (params, _) = train_task::<f32>(&task, ModelSpec::default(), &cfg).unwrap();
        let acc = scaled_spiral_check(&params, 100, 110);
        eprintln!("c07: seed {seed}: 100x100 accuracy {acc:.4}");
        best = best.max(acc);
        if best >= 0.99 {
            break;
        }
    }
    assert!(
        best >= 0.99,
        "best 100x100 accuracy across seeds was {best:.4}, need 0.99"
    );
}

#[test]
fn c07_fixture_spiral_scales_beyond_training_sizes() {
    let params = spiral_seed0_model();
    let acc12 = scaled_spiral_check(params, 12, 10);
    let acc50 = scaled_spiral_check(params, 50, 60);
    let acc100 = scaled_spiral_check(params, 100, 110);
    eprintln!("c07 fixture: acc12={acc12:.4} acc50={acc50:.4} acc100={acc100:.4}");
    assert!(acc12 >= 0.99, "in-distribution size must solve, got {acc12:.4}");
    assert!(
        acc50 >= 0.90 && acc100 >= 0.90,
        "trained on sides <= 10, accuracy must stay >= 0.90 at 50 ({acc50:.4}) and 100 ({acc100:.4})"
    );
}

// ---------------------------------------------------------------------------
// c08: the benchmark aggregate lands in the published band; the fixture
// counterpart runs the same pipeline over the bundled tasks.
// ---------------------------------------------------------------------------

#[test]
#[ignore = "requires the public ARC training set"]
fn c08_benchmark_aggregate_floors() {
    let dir = arc_training_dir();
    let out = tempfile::tempdir().unwrap();
    let workers = std::env::var("NCA_ARC_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(1);
    let opts = BenchOptions {
        steps: 10,
        workers,
        out_dir: Some(out.path().to_path_buf()),
    };
    let cfg = TrainConfig::default();
    let summary = run_benchmark::<f32>(&dir, ModelSpec::default(), &cfg, &opts).unwrap();
    let solved = summary.solved_count();
    let loss_below = summary.loss_below(0.01);
    let pixel_above = summary.pixel_above(0.9);
    eprintln!(
        "c08: attempted={} solved={solved} loss<0.01={loss_below} pixel>0.9={pixel_above}",
        summary.attempted()
    );
    assert_eq!(summary.attempted(), 172);
    assert!(solved >= 12, "solved {solved}, floor is 12");
    assert!(
        (67..=123).contains(&loss_below),
        "loss<0.01 count {loss_below} outside 95 +/- 30%"
    );
    assert!(
        (29..=67).contains(&pixel_above),
        "pixel>0.9 count {pixel_above} outside 48 +/- 40%"
    );
}

#[test]
fn c08_fixture_benchmark_on_bundled_tasks() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = dir.path().join("tasks");
    std::fs::create_dir(&tasks).unwrap();
    for name in ["identity.json", "spiral_growth.json"] {
        std::fs::copy(fixture(name), tasks.join(name)).unwrap();
    }
    let out = dir.path().join("results");
    let opts = BenchOptions {
        steps: 10,
        workers: 1,
        out_dir: Some(out.clone()),
    };
    let cfg = TrainConfig {
        epochs: 150,
        trials_per_example: 8,
        ..TrainConfig::default()
    };
    let summary = run_benchmark::<f32>(&tasks, ModelSpec::default(), &cfg, &opts).unwrap();
    for r in &summary.results {
        eprintln!(
            "c08 fixture: {} solved={} min_acc={:.4} loss={:.4}",
            r.task_id,
            r.solved,
            r.min_pixel_accuracy(),
            r.final_train_loss
        );
    }
    assert_eq!(summary.attempted(), 2);
    assert_eq!(summary.failed_tasks, 0);
    assert_eq!(summary.unreadable_files, 0);
    let by_id = |id: &str| {
        summary
            .results
            .iter()
            .find(|r| r.task_id == id)
            .unwrap_or_else(|| panic!("no result for {id}"))
    };
    // The spiral generalizes to its held-out size; identity memorizes its
    // training pairs (its unseen test grid is a generalization question this
    // budget does not answer).
    assert!(
        by_id("spiral_growth").solved,
        "spiral_growth must solve its 12x12 test pair"
    );
    assert!(
        by_id("identity").final_train_loss < 0.05,
        "identity training loss must collapse, got {:.4}",
        by_id("identity").final_train_loss
    );
    assert_eq!(summary.solved_count(), 1);
    for name in ["results.jsonl", "results.csv", "summary.json"] {
        assert!(out.join(name).exists(), "missing {name}");
    }
}

// ---------------------------------------------------------------------------
// c09: repeated runs are deterministic, including across worker counts.
// ---------------------------------------------------------------------------

fn run_cli(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_arcnca"))
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "arcnca {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Parses JSON and nulls the wall-clock fields (and the echoed output path,
/// which is an argument, not a result) so comparisons ignore them.
fn without_timing(json: &str) -> serde_json::Value {
    let mut value: serde_json::Value = serde_json::from_str(json).expect("JSON parses");
    for key in ["wall_time", "seconds", "checkpoint"] {
        if value.get(key).is_some() {
            value[key] = serde_json::Value::Null;
        }
    }
    value
}

/// results.csv with the trailing seconds column stripped from every row.
fn csv_without_seconds(path: &Path) -> String {
    let text = std::fs::read_to_string(path).expect("csv reads");
    text.lines()
        .map(|line| {
            let cut = line.rfind(',').expect("csv rows have columns");
            &line[..cut]
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn c09_repeat_runs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let task = fixture("identity.json");
    let task_arg = task.to_str().unwrap();
    let flags = ["--epochs", "4", "--trials", "3", "--steps", "3", "--seed", "5"];

    // Same train invocation twice: identical checkpoint, log, and summary.
    let mut artifacts = Vec::new();
    for round in 0..2 {
        let ck = dir.path().join(format!("model{round}.ck"));
        let log = dir.path().join(format!("log{round}.jsonl"));
        let mut args = vec!["train", task_arg];
        args.extend_from_slice(&flags);
        args.extend_from_slice(&["--out", ck.to_str().unwrap(), "--log", log.to_str().unwrap()]);
        let out = run_cli(&args);
        artifacts.push((
            std::fs::read(&ck).unwrap(),
            std::fs::read_to_string(&log).unwrap(),
            without_timing(&String::from_utf8(out.stdout).unwrap()),
        ));
    }
    assert_eq!(artifacts[0].0, artifacts[1].0, "checkpoints must match byte for byte");
    assert_eq!(artifacts[0].1, artifacts[1].1, "epoch logs must match");
    assert_eq!(artifacts[0].2, artifacts[1].2, "train summaries must match");

    // Same eval invocation twice.
    let ck = dir.path().join("model0.ck");
    let evals: Vec<serde_json::Value> = (0..2)
        .map(|_| {
            let out = run_cli(&["eval", ck.to_str().unwrap(), task_arg, "--steps", "3"]);
            without_timing(&String::from_utf8(out.stdout).unwrap())
        })
        .collect();
    assert_eq!(evals[0], evals[1], "eval results must match");

    // Bench with one and two workers: identical files apart from timing.
    let tasks = dir.path().join("tasks");
    std::fs::create_dir(&tasks).unwrap();
    std::fs::copy(&task, tasks.join("identity.json")).unwrap();
    let mut bench = Vec::new();
    for workers in ["1", "2"] {
        let out_dir = dir.path().join(format!("bench{workers}"));
        let mut args = vec!["bench", tasks.to_str().unwrap()];
        args.extend_from_slice(&flags);
        args.extend_from_slice(&["--eval-steps", "3", "--workers", workers]);
        args.extend_from_slice(&["--out", out_dir.to_str().unwrap()]);
        run_cli(&args);
        let rows: Vec<serde_json::Value> = std::fs::read_to_string(out_dir.join("results.jsonl"))
            .unwrap()
            .lines()
            .map(without_timing)
            .collect();
        bench.push((
            rows,
            csv_without_seconds(&out_dir.join("results.csv")),
            std::fs::read_to_string(out_dir.join("summary.json")).unwrap(),
        ));
    }
    assert_eq!(bench[0].0, bench[1].0, "result rows must not depend on worker count");
    assert_eq!(bench[0].1, bench[1].1, "csv must not depend on worker count");
    assert_eq!(bench[0].2, bench[1].2, "summary must not depend on worker count");
}

// ---------------------------------------------------------------------------
// c10: a checkpoint round-trip changes nothing, bit for bit.
// ---------------------------------------------------------------------------

#[test]
fn c10_checkpoint_roundtrip_is_bitwise() {
    let task = load_task_file(&fixture("identity.json")).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        trials_per_example: 2,
        steps: 3,
        seed: 9,
        ..TrainConfig::default()
    };
    let (params, _) = train_task::<f32>(&task, ModelSpec::default(), &cfg).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ck");
    save_checkpoint(&path, &params, &cfg.digest()).unwrap();
    let (loaded, digest) = load_checkpoint(&path).unwrap();
    assert_eq!(digest, cfg.digest());

    let (a, b) = (params.weights.to_flat(), loaded.weights.to_flat());
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(&b).enumerate() {
        assert_eq!(x.to_bits(), y.to_bits(), "weight {i} must survive the round-trip");
    }

    // Evaluations agree bitwise: same decoded grids, same final state tensor.
    let reference = evaluate_task(&params, &task, 10, EvalMeta::default());
    let reloaded = evaluate_task(&loaded, &task, 10, EvalMeta::default());
    assert_eq!(reference.solved, reloaded.solved);
    assert_eq!(reference.pixel_accuracy, reloaded.pixel_accuracy);

    let init = one_hot_encode::<f32>(&task.test[0].input, params.spec.total_channels()).unwrap();
    let mut rng_a = seeds::stream(0, &[]);
    let mut rng_b = seeds::stream(0, &[]);
    let state_a = rollout(&params, &init, 10, MaskConfig::disabled(), &mut rng_a).unwrap();
    let state_b = rollout(&loaded, &init, 10, MaskConfig::disabled(), &mut rng_b).unwrap();
    for (x, y) in state_a
        .final_state()
        .data()
        .iter()
        .zip(state_b.final_state().data())
    {
        assert_eq!(x.to_bits(), y.to_bits(), "rollout states must match bitwise");
    }

    // Seeded initialization is reproducible, so checkpoints of a fresh model
    // are stable artifacts too.
    let fresh_a = init_params_seeded::<f32>(ModelSpec::default(), 7);
    let fresh_b = init_params_seeded::<f32>(ModelSpec::default(), 7);
    assert_eq!(fresh_a.weights.to_flat(), fresh_b.weights.to_flat());
}
