//! Per-task training: stochastic rollouts, backpropagation through time, and
//! one aggregated AdamW step per epoch.
//!
//! Each epoch runs `trials_per_example` rollouts for every training pair.
//! A rollout draws its own mask probability from the configured range, runs
//! `steps` update steps from the one-hot encoded input, scores *every* step's
//! logits against the training output with pixel-wise cross-entropy (mean
//! over steps), and backpropagates through the whole unrolled sequence.
//! The gradients of all rollouts are averaged, clipped to a global norm cap,
//! and applied in a single AdamW update with a linearly decaying learning
//! rate.
//!
//! Rollouts are distributed over a rayon pool, but each one derives its own
//! random stream from (seed, epoch, example, trial) and results are reduced
//! in job order, so training is bit-reproducible at any worker count.

use crate::data::{classify_feasibility, one_hot_encode, DataError, Feasibility, Grid, Task};
use crate::model::{
    backward_rollout, init_params, rollout_retained, rollout_with_blends, MaskConfig, ModelError,
    ModelParams, ModelSpec, ParamSet, Trajectory,
};
use crate::seeds;
use crate::tensor::{cross_entropy, cross_entropy_backward, Scalar, ShapeMismatch, Tensor3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

/// Stream-context tags so different uses of the same seed never collide.
const TAG_INIT: u64 = 0x494e_4954; // "INIT"
const TAG_ROLLOUT: u64 = 0x524f_4c4c; // "ROLL"
const TAG_GRADCHECK: u64 = 0x4743_4b21; // "GCK!"

/// Everything that parametrizes a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Optimizer epochs; one aggregated update each (default 800).
    pub epochs: usize,
    /// Rollout length in update steps (default 10).
    pub steps: usize,
    /// Rollouts per training example per epoch (default 128).
    pub trials_per_example: usize,
    /// Lower bound of the per-rollout mask probability range (default 0).
    pub mask_lo: f64,
    /// Upper bound of the per-rollout mask probability range (default 0.75).
    pub mask_hi: f64,
    /// Learning rate at epoch 0 (default 0.002).
    pub lr_start: f64,
    /// Learning rate the linear decay reaches at the final epoch (default 0.0001).
    pub lr_end: f64,
    /// Decoupled weight decay applied to every parameter (default 0.01).
    pub weight_decay: f64,
    /// AdamW beta1 (default 0.9).
    pub beta1: f64,
    /// AdamW beta2 (default 0.999).
    pub beta2: f64,
    /// AdamW epsilon (default 1e-8).
    pub adam_epsilon: f64,
    /// Gradients above this global L2 norm are rescaled onto it (default 100).
    pub grad_norm_cap: f64,
    /// Run seed; every random stream in the run derives from it (default 0).
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 800,
            steps: 10,
            trials_per_example: 128,
            mask_lo: 0.0,
            mask_hi: 0.75,
            lr_start: 2e-3,
            lr_end: 1e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            grad_norm_cap: 100.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 || self.steps == 0 || self.trials_per_example == 0 {
            return Err(TrainError::BadConfig(
                "epochs, steps, and trials must all be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.mask_lo)
            || !(0.0..=1.0).contains(&self.mask_hi)
            || self.mask_lo > self.mask_hi
        {
            return Err(TrainError::BadConfig(format!(
                "mask range [{}, {}] must satisfy 0 <= lo <= hi <= 1",
                self.mask_lo, self.mask_hi
            )));
        }
        if self.lr_start <= 0.0 || self.lr_end <= 0.0 {
            return Err(TrainError::BadConfig("learning rates must be positive".into()));
        }
        Ok(())
    }

    /// Short hex digest of the serialized config, stored in checkpoints so a
    /// loaded model can be matched to the run that produced it.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let hash = Sha256::digest(json.as_bytes());
        hash[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Learning rate at a given epoch: linear from `lr_start` at epoch 0 toward
/// `lr_end` at epoch `epochs`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr_start + (cfg.lr_end - cfg.lr_start) * epoch as f64 / cfg.epochs as f64
}

/// Errors from training.
#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("task {id} is not feasible ({status})")]
    NotFeasible { id: String, status: Feasibility },
    #[error("non-finite gradients in parameter block {block}")]
    NonFiniteGradient { block: &'static str },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Shape(#[from] ShapeMismatch),
    #[error("failed to write training log: {0}")]
    Log(#[from] std::io::Error),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// AdamW accumulators: first and second moments plus the step counter.
#[derive(Clone, Debug)]
pub struct OptState<S> {
    pub m: ParamSet<S>,
    pub v: ParamSet<S>,
    pub t: u64,
}

impl<S: Scalar> OptState<S> {
    pub fn new(spec: &ModelSpec) -> Self {
        OptState {
            m: ParamSet::zeros(spec),
            v: ParamSet::zeros(spec),
            t: 0,
        }
    }
}

/// One AdamW update with bias-corrected moments and decoupled weight decay
/// applied to every parameter:
/// `theta -= lr * mhat / (sqrt(vhat) + eps) + lr * wd * theta`.
/// Rejects non-finite gradients before touching any state.
pub fn adamw_step<S: Scalar>(
    params: &mut ModelParams<S>,
    grads: &ParamSet<S>,
    opt: &mut OptState<S>,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    if let Some(block) = grads.first_non_finite() {
        return Err(TrainError::NonFiniteGradient { block });
    }
    opt.t += 1;
    let t = opt.t as i32;
    let b1 = S::from_f64(cfg.beta1);
    let b2 = S::from_f64(cfg.beta2);
    let one = S::one();
    let bc1 = S::from_f64(1.0 - cfg.beta1.powi(t));
    let bc2 = S::from_f64(1.0 - cfg.beta2.powi(t));
    let lr_s = S::from_f64(lr);
    let eps = S::from_f64(cfg.adam_epsilon);
    let decay = S::from_f64(lr * cfg.weight_decay);

    for i in 0..8 {
        let g = grads.block(i);
        let m = opt.m.block_mut(i);
        let v = opt.v.block_mut(i);
        let p = params.weights.block_mut(i);
        for j in 0..p.len() {
            m[j] = b1 * m[j] + (one - b1) * g[j];
            v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] = p[j] - lr_s * m_hat / (v_hat.sqrt() + eps) - decay * p[j];
        }
    }
    Ok(())
}

/// Mean over the rollout's steps of the pixel-wise cross-entropy between each
/// step's logits and the target grid.
pub fn rollout_loss<S: Scalar>(traj: &Trajectory<S>, target: &Grid) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for rec in &traj.steps {
        total += cross_entropy(&rec.logits, target)?;
    }
    Ok(total / traj.len() as f64)
}

/// One epoch record, also the schema of the JSONL training log.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
}

/// Loss curve and timing of a completed run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean rollout loss of each epoch, in order.
    pub epoch_loss: Vec<f64>,
    /// Convenience copy of the last entry of `epoch_loss`.
    pub final_loss: f64,
    /// Wall-clock seconds for the whole run.
    pub wall_time: f64,
}

/// Trains a fresh model on one task. See the module docs for the scheme.
/// `on_epoch` fires after every optimizer step.
pub fn train_task_with<S: Scalar>(
    task: &Task,
    spec: ModelSpec,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(ModelParams<S>, TrainHistory), TrainError> {
    cfg.validate()?;
    let report = classify_feasibility(task);
    if report.status != Feasibility::Feasible {
        return Err(TrainError::NotFeasible {
            id: task.id.clone(),
            status: report.status,
        });
    }

    let start = Instant::now();
    let channels = spec.total_channels();
    let examples: Vec<(Tensor3<S>, &Grid)> = task
        .train
        .iter()
        .map(|pair| {
            let state = one_hot_encode::<S>(&pair.input, channels)
                .expect("total_channels() is always >= 10");
            (state, &pair.output)
        })
        .collect();

    let mut params = init_params::<S>(spec, &mut seeds::stream(cfg.seed, &[TAG_INIT]));
    let mut opt = OptState::new(&spec);
    let jobs: Vec<(usize, usize)> = (0..examples.len())
        .flat_map(|e| (0..cfg.trials_per_example).map(move |t| (e, t)))
        .collect();
    let inv_jobs = 1.0 / jobs.len() as f64;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let outcomes: Vec<Result<(f64, ParamSet<S>), TrainError>> = jobs
            .par_iter()
            .map(|&(example, trial)| {
                run_rollout_job(&params, &examples[example], cfg, epoch, example, trial)
            })
            .collect();

        // Reduce in job order: bitwise identical at any worker count.
        let mut grads = ParamSet::<S>::zeros(&spec);
        let mut loss_sum = 0.0;
        for outcome in outcomes {
            let (loss, g) = outcome?;
            loss_sum += loss;
            grads.add(&g);
        }
        grads.scale(S::from_f64(inv_jobs));
        let mean_loss = loss_sum * inv_jobs;

        let norm = grads.norm();
        if norm > cfg.grad_norm_cap {
            grads.scale(S::from_f64(cfg.grad_norm_cap / norm));
        }

        let lr = lr_at(epoch, cfg);
        adamw_step(&mut params, &grads, &mut opt, lr, cfg)?;
        history.push(mean_loss);
        on_epoch(&EpochRecord {
            epoch,
            lr,
            mean_loss,
        });
    }

    let final_loss = *history.last().expect("epochs >= 1");
    Ok((
        params,
        TrainHistory {
            epoch_loss: history,
            final_loss,
            wall_time: start.elapsed().as_secs_f64(),
        },
    ))
}

/// [`train_task_with`] without a callback.
pub fn train_task<S: Scalar>(
    task: &Task,
    spec: ModelSpec,
    cfg: &TrainConfig,
) -> Result<(ModelParams<S>, TrainHistory), TrainError> {
    train_task_with(task, spec, cfg, |_| {})
}

/// [`train_task_with`] that appends one JSON line per epoch to `log_path`.
pub fn train_task_logged<S: Scalar>(
    task: &Task,
    spec: ModelSpec,
    cfg: &TrainConfig,
    log_path: Option<&Path>,
) -> Result<(ModelParams<S>, TrainHistory), TrainError> {
    let mut log = match log_path {
        Some(path) => Some(std::io::BufWriter::new(std::fs::File::create(path)?)),
        None => None,
    };
    let mut log_err = None;
    let result = train_task_with(task, spec, cfg, |record| {
        if let Some(w) = log.as_mut() {
            if log_err.is_none() {
                let line = serde_json::to_string(record).expect("record serializes");
                if let Err(e) = writeln!(w, "{line}") {
                    log_err = Some(e);
                }
            }
        }
    });
    if let Some(e) = log_err {
        return Err(TrainError::Log(e));
    }
    if let Some(mut w) = log {
        w.flush()?;
    }
    result
}

/// One training rollout: forward with retention, per-step cross-entropy, and
/// backpropagation through time. Its random stream is fully determined by
/// (seed, epoch, example, trial).
fn run_rollout_job<S: Scalar>(
    params: &ModelParams<S>,
    example: &(Tensor3<S>, &Grid),
    cfg: &TrainConfig,
    epoch: usize,
    example_idx: usize,
    trial: usize,
) -> Result<(f64, ParamSet<S>), TrainError> {
    let (init, target) = example;
    let mut rng = seeds::stream(
        cfg.seed,
        &[TAG_ROLLOUT, epoch as u64, example_idx as u64, trial as u64],
    );
    let p = cfg.mask_lo + rng.random::<f64>() * (cfg.mask_hi - cfg.mask_lo);
    let mask = MaskConfig::with_probability(p);
    let traj = rollout_retained(params, init, cfg.steps, mask, &mut rng)?;

    let (_, rows, cols) = init.shape();
    let scale = S::from_f64(1.0 / ((rows * cols) as f64 * cfg.steps as f64));
    let mut loss = 0.0;
    let mut step_grads = Vec::with_capacity(traj.len());
    for rec in &traj.steps {
        loss += cross_entropy(&rec.logits, target)?;
        let mut d = Tensor3::zeros(10, rows, cols);
        let probs = &rec.tape.as_ref().expect("retained rollout").probs;
        cross_entropy_backward(probs, target, scale, &mut d);
        step_grads.push(d);
    }
    loss /= traj.len() as f64;
    let grads = backward_rollout(params, &traj, &step_grads)?;
    Ok((loss, grads))
}

/// One gradient-check case: dims, mask setting, and the worst relative error
/// across every parameter.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct GradCheckCase {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub steps: usize,
    pub mask_probability: f64,
    pub rel_err: f64,
    /// Flat index of the parameter with the worst relative error.
    pub worst_param: usize,
    /// Analytic gradient at that parameter.
    pub analytic: f64,
    /// Finite-difference gradient at that parameter.
    pub finite_diff: f64,
}

/// Outcome of a full gradient check.
#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub cases: Vec<GradCheckCase>,
}

/// Compares analytic rollout gradients against fourth-order central finite
/// differences (five-point stencil, step 1e-5) in f64 on `trials` random tiny
/// instances — grids up to 4x4, up to 12 channels, 1-3 steps, alternating
/// mask probability 0 and 0.5 with the drawn blends frozen during
/// differencing. The relative error is
/// `|a - f| / max(|a|, |f|, 1e-3)`; the floor keeps finite-difference
/// roundoff on near-zero gradients from registering as failures. Instances
/// whose pre-relu activations pass within 1e-4 of the kink are redrawn, since
/// central differences straddle the kink there.
pub fn grad_check(trials: usize, seed: u64) -> GradCheckReport {
    let mut cases = Vec::with_capacity(trials);
    let mut max_rel_err = 0.0f64;
    for case_idx in 0..trials {
        let mask_probability = if case_idx % 2 == 0 { 0.0 } else { 0.5 };
        let mut attempt = 0u64;
        let (case, rel) = loop {
            let mut rng = seeds::stream(seed, &[TAG_GRADCHECK, case_idx as u64, attempt]);
            let rows = rng.random_range(1..=4usize);
            let cols = rng.random_range(1..=4usize);
            let hidden = rng.random_range(0..=2usize);
            let spec = ModelSpec {
                hidden_channels: hidden,
                perception_filters: rng.random_range(3..=6usize),
                dense_width: rng.random_range(4..=8usize),
            };
            let input_cells: Vec<u8> = (0..rows * cols).map(|_| rng.random_range(0..10u8)).collect();
            let target_cells: Vec<u8> = (0..rows * cols).map(|_| rng.random_range(0..10u8)).collect();
            let input = Grid::new(rows, cols, input_cells).expect("dims within limits");
            let target = Grid::new(rows, cols, target_cells).expect("dims within limits");
            let steps = rng.random_range(1..=3usize);

            let params = init_params::<f64>(spec, &mut rng);
            let init = one_hot_encode::<f64>(&input, spec.total_channels()).expect(">= 10 channels");
            let mask = if mask_probability > 0.0 {
                MaskConfig::with_probability(mask_probability)
            } else {
                MaskConfig::disabled()
            };
            let traj = rollout_retained(&params, &init, steps, mask, &mut rng)
                .expect("channel counts match by construction");
            if traj.min_preact().unwrap_or(f64::INFINITY) < 1e-4 {
                attempt += 1;
                continue;
            }
            let blends = traj.blends().expect("retained");

            let scale = 1.0 / ((rows * cols) as f64 * steps as f64);
            let mut step_grads = Vec::new();
            for rec in &traj.steps {
                let mut d = Tensor3::zeros(10, rows, cols);
                cross_entropy_backward(
                    &rec.tape.as_ref().expect("retained").probs,
                    &target,
                    scale,
                    &mut d,
                );
                step_grads.push(d);
            }
            let analytic = backward_rollout(&params, &traj, &step_grads)
                .expect("retained trajectory")
                .to_flat();

            let loss_at = |flat: &[f64]| -> f64 {
                let perturbed = ModelParams {
                    spec,
                    weights: ParamSet::from_flat(&spec, flat),
                };
                let tr = rollout_with_blends(&perturbed, &init, &blends)
                    .expect("channel counts match");
                let total: f64 = tr
                    .steps
                    .iter()
                    .map(|r| cross_entropy(&r.logits, &target).expect("shapes match"))
                    .sum();
                total / steps as f64
            };

            let h = 1e-5;
            let mut flat = params.weights.to_flat();
            let mut worst = 0.0f64;
            let mut worst_param = 0;
            let mut worst_pair = (0.0, 0.0);
            for i in 0..flat.len() {
                let keep = flat[i];
                let mut eval = |offset: f64| {
                    flat[i] = keep + offset;
                    let loss = loss_at(&flat);
                    flat[i] = keep;
                    loss
                };
                // Five-point central stencil: the plain symmetric difference
                // carries an O(h^2 f''') truncation term that breaches 1e-6
                // on the steepest instances; fourth order removes it.
                let fd = (eval(-2.0 * h) - 8.0 * eval(-h) + 8.0 * eval(h) - eval(2.0 * h))
                    / (12.0 * h);
                let rel = (analytic[i] - fd).abs() / analytic[i].abs().max(fd.abs()).max(1e-3);
                if rel > worst {
                    worst = rel;
                    worst_param = i;
                    worst_pair = (analytic[i], fd);
                }
            }
            break (
                GradCheckCase {
                    rows,
                    cols,
                    channels: spec.total_channels(),
                    steps,
                    mask_probability,
                    rel_err: worst,
                    worst_param,
                    analytic: worst_pair.0,
                    finite_diff: worst_pair.1,
                },
                worst,
            );
        };
        max_rel_err = max_rel_err.max(rel);
        cases.push(case);
    }
    GradCheckReport { max_rel_err, cases }
}
