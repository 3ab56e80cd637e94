//! A trainable neural cellular automaton for grid-to-grid puzzles.
//!
//! Each puzzle is a handful of input/output grid pairs over a 10-color
//! alphabet. For every feasible puzzle (same-shape pairs, no unseen test
//! colors) a small per-cell network is trained from scratch to grow the
//! output from the input over repeated local update steps, with stochastic
//! per-cell masking during training acting as a regularizer. Everything is
//! deterministic given a seed — training, evaluation, and the benchmark
//! driver reproduce bit-identical results at any worker count.
//!
//! Layering, bottom up:
//!
//! * [`tensor`] — planar tensors plus the forward/backward numeric kernels.
//! * [`seeds`] — derivation of independent, stable random streams.
//! * [`data`] — grids, puzzle files, the feasibility filter, encodings.
//! * [`model`] — the update rule, rollouts, and backpropagation through time.
//! * [`trainer`] — loss, AdamW, the training loop, and the gradient checker.
//! * [`eval`] — deterministic inference, scoring, and the benchmark driver.
//! * [`spiral`] — a procedural task family for size-generalization checks.
//! * [`checkpoint`] — binary weight files.
//! * [`render`] — ASCII and PNG visualization.

pub mod checkpoint;
pub mod data;
pub mod eval;
pub mod model;
pub mod render;
pub mod seeds;
pub mod spiral;
pub mod tensor;
pub mod trainer;

pub use data::{Feasibility, Grid, Task, TaskExample};
pub use eval::{evaluate_task, infer, pixel_accuracy, run_benchmark, BenchOptions, TaskResult};
pub use model::{init_params_seeded, MaskConfig, ModelParams, ModelSpec};
pub use trainer::{grad_check, train_task, train_task_logged, TrainConfig};
