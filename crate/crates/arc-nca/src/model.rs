//! The cellular automaton: state layout, parameters, the per-cell update
//! rule, stochastic-mask rollouts, and backpropagation through time.
//!
//! State is one tensor per grid: the first 10 channels are a categorical
//! distribution over colors (the candidate update writes a softmax there) and
//! the remaining channels are free-range hidden memory. A step feeds the
//! whole state through
//!
//! `conv3x3 (zero pad) -> layernorm -> relu -> dense -> relu -> dense`
//!
//! and replaces the state with the result — the network outputs the next
//! state directly rather than a delta. Asynchrony is a per-cell blend: a
//! masked cell keeps `alpha` of its old state, an unmasked cell takes the
//! candidate wholesale. For gradients the blend factors are treated as
//! constants, and the rollout records exactly the intermediate tensors the
//! backward pass needs.

use crate::data::COLORS;
use crate::seeds;
use crate::tensor::{
    conv3x3_backward, conv3x3_forward, dense_backward, dense_forward, layernorm_backward,
    layernorm_forward, relu, relu_backward, softmax10, softmax10_backward, Scalar, Tensor3,
};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Automaton state: `10 + hidden_channels` planes over the grid.
pub type StateTensor<S> = Tensor3<S>;

/// Epsilon inside the layernorm square root.
pub const LN_EPS: f64 = 1e-5;

/// Architecture dimensions. Defaults give 10,102 parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Hidden state channels appended to the 10 color channels (default 20).
    pub hidden_channels: usize,
    /// Perception convolution filters (default 24).
    pub perception_filters: usize,
    /// Width of the first dense layer (default 64).
    pub dense_width: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            hidden_channels: 20,
            perception_filters: 24,
            dense_width: 64,
        }
    }
}

impl ModelSpec {
    /// Total state channels: 10 color + hidden.
    pub fn total_channels(&self) -> usize {
        COLORS + self.hidden_channels
    }

    /// Exact trainable parameter count across all blocks.
    pub fn param_count(&self) -> usize {
        let c = self.total_channels();
        let f = self.perception_filters;
        let d = self.dense_width;
        9 * c * f + f   // perception kernel + bias
            + 2 * f     // layernorm gain + shift
            + f * d + d // dense1 weight + bias
            + d * c + c // dense2 weight + bias
    }
}

/// Errors from model-level operations.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("state has {got} channels, model expects {want}")]
    ChannelMismatch { got: usize, want: usize },
    #[error("trajectory was built without gradient retention")]
    NoRetention,
    #[error("expected {want} per-step logit gradients, got {got}")]
    GradCount { want: usize, got: usize },
}

/// The eight trainable blocks, in checkpoint order. Used for parameters,
/// gradients, and optimizer moments alike.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<S> {
    pub kernel: Vec<S>,
    pub kernel_bias: Vec<S>,
    pub ln_gain: Vec<S>,
    pub ln_shift: Vec<S>,
    pub dense1_weight: Vec<S>,
    pub dense1_bias: Vec<S>,
    pub dense2_weight: Vec<S>,
    pub dense2_bias: Vec<S>,
}

/// Block names in storage order, as used in checkpoints and error messages.
pub const BLOCK_NAMES: [&str; 8] = [
    "perception_kernel",
    "perception_bias",
    "ln_gain",
    "ln_shift",
    "dense1_weight",
    "dense1_bias",
    "dense2_weight",
    "dense2_bias",
];

/// Per-block tensor shapes for a given spec, in [`BLOCK_NAMES`] order.
pub fn block_shapes(spec: &ModelSpec) -> [Vec<usize>; 8] {
    let c = spec.total_channels();
    let f = spec.perception_filters;
    let d = spec.dense_width;
    [
        vec![f, c, 3, 3],
        vec![f],
        vec![f],
        vec![f],
        vec![d, f],
        vec![d],
        vec![c, d],
        vec![c],
    ]
}

impl<S: Scalar> ParamSet<S> {
    pub fn zeros(spec: &ModelSpec) -> Self {
        let shapes = block_shapes(spec);
        let len = |i: usize| shapes[i].iter().product::<usize>();
        ParamSet {
            kernel: vec![S::zero(); len(0)],
            kernel_bias: vec![S::zero(); len(1)],
            ln_gain: vec![S::zero(); len(2)],
            ln_shift: vec![S::zero(); len(3)],
            dense1_weight: vec![S::zero(); len(4)],
            dense1_bias: vec![S::zero(); len(5)],
            dense2_weight: vec![S::zero(); len(6)],
            dense2_bias: vec![S::zero(); len(7)],
        }
    }

    pub fn block(&self, i: usize) -> &[S] {
        match i {
            0 => &self.kernel,
            1 => &self.kernel_bias,
            2 => &self.ln_gain,
            3 => &self.ln_shift,
            4 => &self.dense1_weight,
            5 => &self.dense1_bias,
            6 => &self.dense2_weight,
            7 => &self.dense2_bias,
            _ => panic!("block index {i} out of range"),
        }
    }

    pub fn block_mut(&mut self, i: usize) -> &mut [S] {
        match i {
            0 => &mut self.kernel,
            1 => &mut self.kernel_bias,
            2 => &mut self.ln_gain,
            3 => &mut self.ln_shift,
            4 => &mut self.dense1_weight,
            5 => &mut self.dense1_bias,
            6 => &mut self.dense2_weight,
            7 => &mut self.dense2_bias,
            _ => panic!("block index {i} out of range"),
        }
    }

    pub fn param_count(&self) -> usize {
        (0..8).map(|i| self.block(i).len()).sum()
    }

    /// Element-wise `self += other`.
    pub fn add(&mut self, other: &Self) {
        for i in 0..8 {
            let dst = self.block_mut(i);
            let src = other.block(i);
            assert_eq!(dst.len(), src.len(), "block {} size mismatch", BLOCK_NAMES[i]);
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    /// Element-wise `self *= k`.
    pub fn scale(&mut self, k: S) {
        for i in 0..8 {
            for v in self.block_mut(i) {
                *v *= k;
            }
        }
    }

    /// Global L2 norm, accumulated in f64.
    pub fn norm(&self) -> f64 {
        let mut acc = 0.0f64;
        for i in 0..8 {
            for &v in self.block(i) {
                let x = v.into_f64();
                acc += x * x;
            }
        }
        acc.sqrt()
    }

    /// Name of the first block containing a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        (0..8).find_map(|i| {
            self.block(i)
                .iter()
                .any(|v| !v.is_finite())
                .then_some(BLOCK_NAMES[i])
        })
    }

    /// Flattened length-`param_count` view in block order.
    pub fn to_flat(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(self.param_count());
        for i in 0..8 {
            out.extend_from_slice(self.block(i));
        }
        out
    }

    /// Inverse of [`ParamSet::to_flat`] for the same spec.
    pub fn from_flat(spec: &ModelSpec, flat: &[S]) -> Self {
        let mut set = ParamSet::zeros(spec);
        let mut offset = 0;
        for i in 0..8 {
            let dst = set.block_mut(i);
            dst.copy_from_slice(&flat[offset..offset + dst.len()]);
            offset += dst.len();
        }
        assert_eq!(offset, flat.len(), "flat buffer length mismatch");
        set
    }

    /// Element-wise precision change (f32 <-> f64).
    pub fn convert<T: Scalar>(&self) -> ParamSet<T> {
        let conv = |v: &[S]| v.iter().map(|&x| T::from_f64(x.into_f64())).collect();
        ParamSet {
            kernel: conv(&self.kernel),
            kernel_bias: conv(&self.kernel_bias),
            ln_gain: conv(&self.ln_gain),
            ln_shift: conv(&self.ln_shift),
            dense1_weight: conv(&self.dense1_weight),
            dense1_bias: conv(&self.dense1_bias),
            dense2_weight: conv(&self.dense2_weight),
            dense2_bias: conv(&self.dense2_bias),
        }
    }
}

/// Spec plus weights: everything needed to run the automaton.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<S> {
    pub spec: ModelSpec,
    pub weights: ParamSet<S>,
}

impl<S: Scalar> ModelParams<S> {
    pub fn convert<T: Scalar>(&self) -> ModelParams<T> {
        ModelParams {
            spec: self.spec,
            weights: self.weights.convert(),
        }
    }
}

/// Initializes weights: each layer's weights are uniform on `[-a, a]` with
/// `a = sqrt(1 / fan_in)`, biases zero, layernorm gain 1 and shift 0. Draws
/// happen in f64 in a fixed order, so f32 and f64 models from the same stream
/// hold the same values.
pub fn init_params<S: Scalar>(spec: ModelSpec, rng: &mut ChaCha12Rng) -> ModelParams<S> {
    let mut weights = ParamSet::zeros(&spec);
    let c = spec.total_channels();
    let f = spec.perception_filters;
    let d = spec.dense_width;

    let draw = |buf: &mut [S], fan_in: usize, rng: &mut ChaCha12Rng| {
        let a = (1.0 / fan_in as f64).sqrt();
        for v in buf {
            *v = S::from_f64(a * (2.0 * rng.random::<f64>() - 1.0));
        }
    };
    draw(&mut weights.kernel, 9 * c, rng);
    draw(&mut weights.dense1_weight, f, rng);
    draw(&mut weights.dense2_weight, d, rng);
    for v in &mut weights.ln_gain {
        *v = S::one();
    }
    ModelParams { spec, weights }
}

/// Convenience: a fresh model from a bare seed.
pub fn init_params_seeded<S: Scalar>(spec: ModelSpec, seed: u64) -> ModelParams<S> {
    init_params(spec, &mut seeds::stream(seed, &[0x494e_4954]))
}

/// Stochastic update mask settings. With the mask on, each cell is masked
/// independently with `probability` per step; a masked cell keeps a random
/// fraction `alpha ~ U(0,1)` of its previous state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskConfig {
    pub probability: f64,
    pub enabled: bool,
}

impl MaskConfig {
    /// Mask off: every cell takes the full candidate every step.
    pub fn disabled() -> Self {
        MaskConfig {
            probability: 0.0,
            enabled: true,
        }
    }

    pub fn with_probability(probability: f64) -> Self {
        assert!(
            (0.0..=1.0).contains(&probability),
            "mask probability {probability} outside [0, 1]"
        );
        MaskConfig {
            probability,
            enabled: true,
        }
    }
}

/// Per-step tensors retained for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct StepTape<S> {
    /// Convolution output, before normalization.
    pub conv_out: Tensor3<S>,
    /// relu(layernorm(conv_out)) — input to the first dense layer.
    pub ln_act: Tensor3<S>,
    /// relu(dense1) — input to the second dense layer.
    pub dense1_act: Tensor3<S>,
    /// softmax(logits) — the candidate color channels.
    pub probs: Tensor3<S>,
    /// Per-cell retained fraction of the old state: `alpha` where masked,
    /// 0 where the candidate is taken wholesale.
    pub blend: Vec<S>,
    /// Smallest |pre-relu activation| seen this step; lets verification code
    /// avoid finite-difference checks near the relu kink.
    pub min_preact: S,
}

/// One rollout step: the state after the step and the logits that produced
/// its color channels.
#[derive(Clone, Debug)]
pub struct StepRecord<S> {
    pub state: StateTensor<S>,
    pub logits: Tensor3<S>,
    pub(crate) tape: Option<StepTape<S>>,
}

/// A full rollout: the initial state plus every step in order.
#[derive(Clone, Debug)]
pub struct Trajectory<S> {
    pub init: StateTensor<S>,
    pub steps: Vec<StepRecord<S>>,
}

impl<S: Scalar> Trajectory<S> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Final state of the rollout (the initial state if there are no steps).
    pub fn final_state(&self) -> &StateTensor<S> {
        self.steps.last().map(|s| &s.state).unwrap_or(&self.init)
    }

    /// Whether every step kept the tensors the backward pass needs.
    pub fn retained(&self) -> bool {
        self.steps.iter().all(|s| s.tape.is_some())
    }

    /// The blend planes drawn during this rollout, for exact replay.
    pub fn blends(&self) -> Option<Vec<Vec<S>>> {
        self.steps
            .iter()
            .map(|s| s.tape.as_ref().map(|t| t.blend.clone()))
            .collect()
    }

    /// Smallest |pre-relu activation| across all retained steps.
    pub fn min_preact(&self) -> Option<f64> {
        self.steps
            .iter()
            .filter_map(|s| s.tape.as_ref().map(|t| t.min_preact.into_f64()))
            .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.min(v))))
    }
}

fn check_channels<S: Scalar>(params: &ModelParams<S>, state: &StateTensor<S>) -> Result<(), ModelError> {
    let want = params.spec.total_channels();
    if state.channels() != want {
        return Err(ModelError::ChannelMismatch {
            got: state.channels(),
            want,
        });
    }
    Ok(())
}

/// Draws one blend plane: for each cell, masked with probability `p` (then
/// keeping `alpha ~ U(0,1)` of the old state), otherwise 0. All draws happen
/// in f64 so f32 and f64 runs consume the stream identically.
fn draw_blend<S: Scalar>(cells: usize, mask: MaskConfig, rng: &mut ChaCha12Rng) -> Vec<S> {
    let mut blend = vec![S::zero(); cells];
    if mask.enabled && mask.probability > 0.0 {
        for b in &mut blend {
            if rng.random::<f64>() < mask.probability {
                *b = S::from_f64(rng.random::<f64>());
            }
        }
    }
    blend
}

/// One forward step with an explicit blend plane.
fn step_with_blend<S: Scalar>(
    params: &ModelParams<S>,
    state: &StateTensor<S>,
    blend: &[S],
    retain: bool,
) -> StepRecord<S> {
    let (c, rows, cols) = state.shape();
    debug_assert_eq!(c, params.spec.total_channels());
    assert_eq!(blend.len(), rows * cols, "blend plane size mismatch");
    let w = &params.weights;

    let conv_out = conv3x3_forward(state, &w.kernel, &w.kernel_bias);
    let normed = layernorm_forward(&conv_out, &w.ln_gain, &w.ln_shift, S::from_f64(LN_EPS));
    let ln_act = relu(&normed);
    let dense1_out = dense_forward(&ln_act, &w.dense1_weight, &w.dense1_bias);
    let dense1_act = relu(&dense1_out);
    let candidate = dense_forward(&dense1_act, &w.dense2_weight, &w.dense2_bias);

    let mut logits = Tensor3::zeros(COLORS, rows, cols);
    for ch in 0..COLORS {
        logits.plane_mut(ch).copy_from_slice(candidate.plane(ch));
    }
    let probs = softmax10(&logits);

    // New state: color channels from the softmax, hidden channels raw, each
    // cell blending `alpha` of its previous state where masked.
    let mut next = Tensor3::zeros(c, rows, cols);
    for ch in 0..c {
        let cand = if ch < COLORS {
            probs.plane(ch)
        } else {
            candidate.plane(ch)
        };
        let old = state.plane(ch);
        let dst = next.plane_mut(ch);
        for i in 0..blend.len() {
            dst[i] = blend[i] * old[i] + (S::one() - blend[i]) * cand[i];
        }
    }

    let tape = retain.then(|| {
        let min_preact = normed
            .data()
            .iter()
            .chain(dense1_out.data())
            .fold(S::infinity(), |m, &v| m.min(v.abs()));
        StepTape {
            conv_out,
            ln_act,
            dense1_act,
            probs,
            blend: blend.to_vec(),
            min_preact,
        }
    });
    StepRecord {
        state: next,
        logits,
        tape,
    }
}

/// One update step. Returns the new state and the logits behind its color
/// channels.
pub fn step<S: Scalar>(
    params: &ModelParams<S>,
    state: &StateTensor<S>,
    mask: MaskConfig,
    rng: &mut ChaCha12Rng,
) -> Result<(StateTensor<S>, Tensor3<S>), ModelError> {
    check_channels(params, state)?;
    let blend = draw_blend::<S>(state.plane_len(), mask, rng);
    let rec = step_with_blend(params, state, &blend, false);
    Ok((rec.state, rec.logits))
}

fn rollout_impl<S: Scalar>(
    params: &ModelParams<S>,
    init: &StateTensor<S>,
    steps: usize,
    mask: MaskConfig,
    rng: &mut ChaCha12Rng,
    retain: bool,
) -> Result<Trajectory<S>, ModelError> {
    check_channels(params, init)?;
    let cells = init.plane_len();
    let mut records = Vec::with_capacity(steps);
    let mut state = init.clone();
    for _ in 0..steps {
        let blend = draw_blend::<S>(cells, mask, rng);
        let rec = step_with_blend(params, &state, &blend, retain);
        state = rec.state.clone();
        records.push(rec);
    }
    Ok(Trajectory {
        init: init.clone(),
        steps: records,
    })
}

/// Runs `steps` update steps, recording each post-step state and its logits.
/// The mask probability is fixed for the whole rollout.
pub fn rollout<S: Scalar>(
    params: &ModelParams<S>,
    init: &StateTensor<S>,
    steps: usize,
    mask: MaskConfig,
    rng: &mut ChaCha12Rng,
) -> Result<Trajectory<S>, ModelError> {
    rollout_impl(params, init, steps, mask, rng, false)
}

/// Like [`rollout`] but additionally retains the intermediate tensors
/// [`backward_rollout`] needs.
pub fn rollout_retained<S: Scalar>(
    params: &ModelParams<S>,
    init: &StateTensor<S>,
    steps: usize,
    mask: MaskConfig,
    rng: &mut ChaCha12Rng,
) -> Result<Trajectory<S>, ModelError> {
    rollout_impl(params, init, steps, mask, rng, true)
}

/// Replays a rollout under externally supplied blend planes (one per step).
/// Used to re-evaluate the same stochastic realization at perturbed
/// parameters, e.g. by the finite-difference checker.
pub fn rollout_with_blends<S: Scalar>(
    params: &ModelParams<S>,
    init: &StateTensor<S>,
    blends: &[Vec<S>],
) -> Result<Trajectory<S>, ModelError> {
    check_channels(params, init)?;
    let mut records = Vec::with_capacity(blends.len());
    let mut state = init.clone();
    for blend in blends {
        let rec = step_with_blend(params, &state, blend, false);
        state = rec.state.clone();
        records.push(rec);
    }
    Ok(Trajectory {
        init: init.clone(),
        steps: records,
    })
}

/// Backpropagation through the whole rollout. `step_logit_grads[t]` is the
/// loss gradient with respect to the logits recorded at step `t`; gradients
/// flow both through those logits and through the evolving state into every
/// earlier step. The initial state is an input, not a parameter, so nothing
/// is returned for it. Blend factors are treated as constants.
pub fn backward_rollout<S: Scalar>(
    params: &ModelParams<S>,
    traj: &Trajectory<S>,
    step_logit_grads: &[Tensor3<S>],
) -> Result<ParamSet<S>, ModelError> {
    if !traj.retained() {
        return Err(ModelError::NoRetention);
    }
    if step_logit_grads.len() != traj.len() {
        return Err(ModelError::GradCount {
            want: traj.len(),
            got: step_logit_grads.len(),
        });
    }
    let (c, rows, cols) = traj.init.shape();
    let n = rows * cols;
    let w = &params.weights;
    let mut grads = ParamSet::zeros(&params.spec);
    // dL/d(state after step t), accumulated from later steps.
    let mut d_state = Tensor3::zeros(c, rows, cols);

    for t in (0..traj.len()).rev() {
        let rec = &traj.steps[t];
        let tape = rec.tape.as_ref().expect("retention checked above");
        let input_state = if t == 0 {
            &traj.init
        } else {
            &traj.steps[t - 1].state
        };

        // Split the incoming state gradient across the blend: the candidate
        // sees (1 - blend), the previous state sees blend (added at the end).
        let mut d_candidate = Tensor3::zeros(c, rows, cols);
        for ch in 0..c {
            let dst = d_candidate.plane_mut(ch);
            let src = d_state.plane(ch);
            for i in 0..n {
                dst[i] = (S::one() - tape.blend[i]) * src[i];
            }
        }

        // Color channels went through the softmax; fold that back and add the
        // direct per-step loss gradient on the logits.
        let mut d_probs = Tensor3::zeros(COLORS, rows, cols);
        for ch in 0..COLORS {
            d_probs.plane_mut(ch).copy_from_slice(d_candidate.plane(ch));
        }
        let mut d_logits = Tensor3::zeros(COLORS, rows, cols);
        softmax10_backward(&tape.probs, &d_probs, &mut d_logits);
        {
            let ext = &step_logit_grads[t];
            assert_eq!(ext.shape(), (COLORS, rows, cols), "logit grad shape at step {t}");
            for (d, &g) in d_logits.data_mut().iter_mut().zip(ext.data()) {
                *d += g;
            }
        }

        // Gradient on the raw dense2 output: logits for the color channels,
        // pass-through for the hidden ones.
        let mut d_dense2 = Tensor3::zeros(c, rows, cols);
        for ch in 0..c {
            let src = if ch < COLORS {
                d_logits.plane(ch)
            } else {
                d_candidate.plane(ch)
            };
            d_dense2.plane_mut(ch).copy_from_slice(src);
        }

        let mut d_dense1_act = Tensor3::zeros(params.spec.dense_width, rows, cols);
        dense_backward(
            &tape.dense1_act,
            &w.dense2_weight,
            &d_dense2,
            &mut d_dense1_act,
            &mut grads.dense2_weight,
            &mut grads.dense2_bias,
        );

        let mut d_dense1_out = Tensor3::zeros(params.spec.dense_width, rows, cols);
        relu_backward(&tape.dense1_act, &d_dense1_act, &mut d_dense1_out);

        let mut d_ln_act = Tensor3::zeros(params.spec.perception_filters, rows, cols);
        dense_backward(
            &tape.ln_act,
            &w.dense1_weight,
            &d_dense1_out,
            &mut d_ln_act,
            &mut grads.dense1_weight,
            &mut grads.dense1_bias,
        );

        let mut d_normed = Tensor3::zeros(params.spec.perception_filters, rows, cols);
        relu_backward(&tape.ln_act, &d_ln_act, &mut d_normed);

        let mut d_conv_out = Tensor3::zeros(params.spec.perception_filters, rows, cols);
        layernorm_backward(
            &tape.conv_out,
            &w.ln_gain,
            S::from_f64(LN_EPS),
            &d_normed,
            &mut d_conv_out,
            &mut grads.ln_gain,
            &mut grads.ln_shift,
        );

        let mut d_input = Tensor3::zeros(c, rows, cols);
        conv3x3_backward(
            input_state,
            &w.kernel,
            &d_conv_out,
            &mut d_input,
            &mut grads.kernel,
            &mut grads.kernel_bias,
        );

        // Blend pass-through: masked cells carried `blend` of the old state.
        for ch in 0..c {
            let dst = d_input.plane_mut(ch);
            let src = d_state.plane(ch);
            for i in 0..n {
                dst[i] += tape.blend[i] * src[i];
            }
        }
        d_state = d_input;
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{decode_argmax, one_hot_encode, Grid};
    use crate::seeds;
    use crate::tensor::{cross_entropy, cross_entropy_backward};
    use approx::assert_relative_eq;
    use rand::Rng;

    fn small_spec() -> ModelSpec {
        ModelSpec {
            hidden_channels: 2,
            perception_filters: 6,
            dense_width: 8,
        }
    }

    fn random_state(seed: u64, channels: usize, rows: usize, cols: usize) -> StateTensor<f64> {
        let mut rng = seeds::stream(seed, &[1]);
        let grid_cells: Vec<u8> = (0..rows * cols).map(|_| rng.random_range(0..10u8)).collect();
        let grid = Grid::new(rows, cols, grid_cells).unwrap();
        let mut state = one_hot_encode::<f64>(&grid, channels).unwrap();
        for v in state.data_mut() {
            *v += rng.random::<f64>() * 0.01;
        }
        state
    }

    #[test]
    fn default_spec_has_expected_parameter_count() {
        let spec = ModelSpec::default();
        assert_eq!(spec.total_channels(), 30);
        assert_eq!(spec.param_count(), 10_102);

        // No hidden channels: 9*10*24 + 24 + 48 + 24*64 + 64 + 64*10 + 10.
        let lean = ModelSpec {
            hidden_channels: 0,
            ..ModelSpec::default()
        };
        assert_eq!(lean.param_count(), 4482);
    }

    #[test]
    fn param_set_matches_spec_count() {
        for spec in [ModelSpec::default(), small_spec()] {
            let set = ParamSet::<f32>::zeros(&spec);
            assert_eq!(set.param_count(), spec.param_count());
            let shapes = block_shapes(&spec);
            for i in 0..8 {
                assert_eq!(
                    set.block(i).len(),
                    shapes[i].iter().product::<usize>(),
                    "block {}",
                    BLOCK_NAMES[i]
                );
            }
        }
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let spec = ModelSpec::default();
        let a = init_params_seeded::<f32>(spec, 42);
        let b = init_params_seeded::<f32>(spec, 42);
        assert_eq!(a.weights, b.weights);
        let c = init_params_seeded::<f32>(spec, 43);
        assert_ne!(a.weights, c.weights);

        let bound = (1.0 / (9.0 * spec.total_channels() as f64)).sqrt() as f32;
        assert!(a.weights.kernel.iter().all(|v| v.abs() <= bound));
        assert!(a.weights.kernel_bias.iter().all(|&v| v == 0.0));
        assert!(a.weights.ln_gain.iter().all(|&v| v == 1.0));
        assert!(a.weights.ln_shift.iter().all(|&v| v == 0.0));
        assert!(a.weights.dense1_bias.iter().all(|&v| v == 0.0));
        assert!(a.weights.dense2_bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn flat_round_trip_preserves_params() {
        let params = init_params_seeded::<f64>(small_spec(), 9);
        let flat = params.weights.to_flat();
        assert_eq!(flat.len(), small_spec().param_count());
        let back = ParamSet::from_flat(&small_spec(), &flat);
        assert_eq!(back, params.weights);
    }

    #[test]
    fn disabled_mask_equals_zero_probability_bitwise() {
        let spec = small_spec();
        let params = init_params_seeded::<f32>(spec, 3);
        let state = random_state(5, spec.total_channels(), 4, 4).convert::<f32>();
        let (a, _) = step(&params, &state, MaskConfig::disabled(), &mut seeds::stream(1, &[])).unwrap();
        let (b, _) = step(
            &params,
            &state,
            MaskConfig::with_probability(0.0),
            &mut seeds::stream(2, &[]),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn masked_cell_with_full_alpha_keeps_previous_state() {
        let spec = small_spec();
        let params = init_params_seeded::<f64>(spec, 3);
        let state = random_state(6, spec.total_channels(), 2, 2);
        // Cell 0 fully retains its old state; the rest take the candidate.
        let mut blend = vec![0.0f64; 4];
        blend[0] = 1.0;
        let rec = step_with_blend(&params, &state, &blend, false);
        for c in 0..spec.total_channels() {
            assert_eq!(rec.state.plane(c)[0], state.plane(c)[0], "channel {c}");
        }
    }

    #[test]
    fn zero_probability_takes_candidate_everywhere() {
        let spec = small_spec();
        let params = init_params_seeded::<f64>(spec, 4);
        let state = random_state(7, spec.total_channels(), 3, 3);
        let blend = vec![0.0f64; 9];
        let direct = step_with_blend(&params, &state, &blend, false);
        let (via_mask, _) = step(
            &params,
            &state,
            MaskConfig::with_probability(0.0),
            &mut seeds::stream(1, &[]),
        )
        .unwrap();
        assert_eq!(direct.state, via_mask);
    }

    #[test]
    fn step_preserves_shape_and_color_simplex() {
        // Starting from a one-hot encoding (a point on the simplex), every
        // step blends two distributions, so the colors stay a distribution
        // no matter how many steps run or which cells the mask picks.
        let spec = small_spec();
        let params = init_params_seeded::<f64>(spec, 8);
        let grid = Grid::from_rows(vec![
            vec![1, 0, 9],
            vec![4, 7, 0],
            vec![0, 3, 5],
            vec![2, 2, 8],
            vec![0, 6, 0],
        ])
        .unwrap();
        let mut state = one_hot_encode::<f64>(&grid, spec.total_channels()).unwrap();
        let mut rng = seeds::stream(11, &[]);
        for step_idx in 0..4 {
            let (next, logits) =
                step(&params, &state, MaskConfig::with_probability(0.5), &mut rng).unwrap();
            assert_eq!(next.shape(), state.shape());
            assert_eq!(logits.shape(), (10, 5, 3));
            for i in 0..15 {
                let sum: f64 = (0..10).map(|c| next.plane(c)[i]).sum();
                assert_relative_eq!(sum, 1.0, epsilon = 1e-9);
                for c in 0..10 {
                    assert!(next.plane(c)[i] >= 0.0, "step {step_idx} cell {i}");
                }
            }
            state = next;
        }
    }

    #[test]
    fn step_rejects_wrong_channel_count() {
        let params = init_params_seeded::<f64>(small_spec(), 1);
        let state = Tensor3::<f64>::zeros(10, 2, 2);
        let err = step(&params, &state, MaskConfig::disabled(), &mut seeds::stream(0, &[])).unwrap_err();
        assert_eq!(err, ModelError::ChannelMismatch { got: 10, want: 12 });
    }

    #[test]
    fn rollout_records_every_step_and_is_deterministic() {
        let spec = small_spec();
        let params = init_params_seeded::<f32>(spec, 21);
        let state = random_state(22, spec.total_channels(), 4, 4).convert::<f32>();
        let mask = MaskConfig::with_probability(0.5);
        let a = rollout(&params, &state, 10, mask, &mut seeds::stream(5, &[7])).unwrap();
        let b = rollout(&params, &state, 10, mask, &mut seeds::stream(5, &[7])).unwrap();
        assert_eq!(a.len(), 10);
        assert_eq!(a.init, state);
        for (ra, rb) in a.steps.iter().zip(&b.steps) {
            assert_eq!(ra.state, rb.state);
            assert_eq!(ra.logits, rb.logits);
        }
        // Decoding any state yields a valid same-shape grid.
        let g = decode_argmax(a.final_state());
        assert_eq!(g.shape(), (4, 4));
    }

    #[test]
    fn single_step_rollout_matches_step() {
        let spec = small_spec();
        let params = init_params_seeded::<f64>(spec, 31);
        let state = random_state(32, spec.total_channels(), 3, 3);
        let mask = MaskConfig::with_probability(0.3);
        let traj = rollout(&params, &state, 1, mask, &mut seeds::stream(9, &[])).unwrap();
        let (next, logits) = step(&params, &state, mask, &mut seeds::stream(9, &[])).unwrap();
        assert_eq!(traj.steps[0].state, next);
        assert_eq!(traj.steps[0].logits, logits);
    }

    #[test]
    fn translation_equivariance_in_the_interior() {
        // Stepping a translated grid translates the step output wherever the
        // 3x3 neighbourhoods see the same content: rows 1..rows-2 once the
        // grid is shifted down by one.
        let spec = small_spec();
        let params = init_params_seeded::<f64>(spec, 41);
        let rows = 7;
        let cols = 6;
        let mut base = Grid::filled(rows, cols, 0).unwrap();
        base.set(2, 2, 3);
        base.set(3, 3, 5);
        base.set(2, 3, 7);
        let mut shifted = Grid::filled(rows, cols, 0).unwrap();
        for y in 0..rows - 1 {
            for x in 0..cols {
                shifted.set(y + 1, x, base.get(y, x));
            }
        }
        let sa = one_hot_encode::<f64>(&base, spec.total_channels()).unwrap();
        let sb = one_hot_encode::<f64>(&shifted, spec.total_channels()).unwrap();
        let (oa, _) = step(&params, &sa, MaskConfig::disabled(), &mut seeds::stream(0, &[])).unwrap();
        let (ob, _) = step(&params, &sb, MaskConfig::disabled(), &mut seeds::stream(0, &[])).unwrap();
        for c in 0..spec.total_channels() {
            for y in 1..rows - 2 {
                for x in 0..cols {
                    assert_relative_eq!(
                        oa.at(c, y, x),
                        ob.at(c, y + 1, x),
                        max_relative = 1e-12,
                        epsilon = 1e-12
                    );
                }
            }
        }
    }

    #[test]
    fn backward_requires_retention() {
        let spec = small_spec();
        let params = init_params_seeded::<f64>(spec, 51);
        let state = random_state(52, spec.total_channels(), 2, 2);
        let traj = rollout(&params, &state, 2, MaskConfig::disabled(), &mut seeds::stream(0, &[])).unwrap();
        let grads = vec![Tensor3::zeros(10, 2, 2); 2];
        assert_eq!(
            backward_rollout(&params, &traj, &grads).unwrap_err(),
            ModelError::NoRetention
        );
    }

    #[test]
    fn backward_rejects_wrong_grad_count() {
        let spec = small_spec();
        let params = init_params_seeded::<f64>(spec, 53);
        let state = random_state(54, spec.total_channels(), 2, 2);
        let traj =
            rollout_retained(&params, &state, 3, MaskConfig::disabled(), &mut seeds::stream(0, &[]))
                .unwrap();
        let grads = vec![Tensor3::zeros(10, 2, 2); 2];
        assert_eq!(
            backward_rollout(&params, &traj, &grads).unwrap_err(),
            ModelError::GradCount { want: 3, got: 2 }
        );
    }

    /// Full-rollout gradient check in f64: mean-over-steps cross-entropy,
    /// analytic adjoints vs central finite differences with the stochastic
    /// blends frozen.
    #[test]
    fn backward_rollout_matches_finite_differences() {
        for (seed, t_steps, p) in [(61u64, 1usize, 0.0f64), (62, 3, 0.0), (63, 3, 0.5)] {
            let spec = ModelSpec {
                hidden_channels: 2,
                perception_filters: 4,
                dense_width: 6,
            };
            let params = init_params_seeded::<f64>(spec, seed);
            let mut rng = seeds::stream(seed, &[2]);
            let rows = 3;
            let cols = 3;
            let cells: Vec<u8> = (0..9).map(|_| rng.random_range(0..10u8)).collect();
            let target = Grid::new(rows, cols, cells).unwrap();
            let init = random_state(seed, spec.total_channels(), rows, cols);

            let mask = if p > 0.0 {
                MaskConfig::with_probability(p)
            } else {
                MaskConfig::disabled()
            };
            let traj = rollout_retained(&params, &init, t_steps, mask, &mut rng).unwrap();
            let blends = traj.blends().unwrap();

            let n = (rows * cols) as f64;
            let scale = 1.0 / (n * t_steps as f64);
            let mut grads_per_step = Vec::new();
            for rec in &traj.steps {
                let mut d = Tensor3::zeros(10, rows, cols);
                cross_entropy_backward(
                    &rec.tape.as_ref().unwrap().probs,
                    &target,
                    scale,
                    &mut d,
                );
                grads_per_step.push(d);
            }
            let analytic = backward_rollout(&params, &traj, &grads_per_step)
                .unwrap()
                .to_flat();

            let loss_at = |flat: &[f64]| -> f64 {
                let p = ModelParams {
                    spec,
                    weights: ParamSet::from_flat(&spec, flat),
                };
                let tr = rollout_with_blends(&p, &init, &blends).unwrap();
                let total: f64 = tr
                    .steps
                    .iter()
                    .map(|r| cross_entropy(&r.logits, &target).unwrap())
                    .sum();
                total / t_steps as f64
            };

            let flat = params.weights.to_flat();
            let h = 1e-5;
            let mut worst = 0.0f64;
            let mut probe = flat.clone();
            for i in 0..flat.len() {
                let keep = probe[i];
                probe[i] = keep + h;
                let up = loss_at(&probe);
                probe[i] = keep - h;
                let down = loss_at(&probe);
                probe[i] = keep;
                let fd = (up - down) / (2.0 * h);
                let rel = (analytic[i] - fd).abs() / analytic[i].abs().max(fd.abs()).max(1e-3);
                worst = worst.max(rel);
            }
            assert!(
                worst < 1e-6,
                "seed {seed}, T={t_steps}, p={p}: worst relative error {worst}"
            );
        }
    }
}
