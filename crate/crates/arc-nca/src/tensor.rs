//! Channel-major tensor kernels for the automaton's per-cell update network.
//!
//! A [`Tensor3`] stores `channels` dense planes of `rows x cols` scalars, so
//! every kernel below walks contiguous row slices and compiles down to
//! straight-line vector loops. Each operation ships as a forward function plus
//! a hand-derived adjoint (`*_backward`). Adjoints *accumulate* into the
//! gradient buffers they are given — calling one twice doubles its
//! contribution — which lets a whole rollout share one set of accumulators.
//!
//! Everything is generic over [`Scalar`] so the same code runs in f32 for
//! training and in f64 for finite-difference verification.

use crate::data::Grid;
use num_traits::Float;
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, Range, SubAssign};

/// Floating-point element type for tensors: f32 in normal use, f64 in
/// verification mode.
pub trait Scalar:
    Float
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn into_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn into_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn into_f64(self) -> f64 {
        self
    }
}

/// Shape mismatch between a logits tensor and the grid it is scored against.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("logits are {logit_rows}x{logit_cols} but the target grid is {grid_rows}x{grid_cols}")]
pub struct ShapeMismatch {
    pub logit_rows: usize,
    pub logit_cols: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
}

/// Dense rank-3 tensor laid out plane by plane: index `(c, y, x)` lives at
/// `(c * rows + y) * cols + x`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3<S> {
    channels: usize,
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Tensor3<S> {
    pub fn zeros(channels: usize, rows: usize, cols: usize) -> Self {
        Tensor3 {
            channels,
            rows,
            cols,
            data: vec![S::zero(); channels * rows * cols],
        }
    }

    /// Wraps an existing buffer; `data.len()` must equal `channels*rows*cols`.
    pub fn from_data(channels: usize, rows: usize, cols: usize, data: Vec<S>) -> Self {
        assert_eq!(
            data.len(),
            channels * rows * cols,
            "buffer length {} does not match shape {}x{}x{}",
            data.len(),
            channels,
            rows,
            cols
        );
        Tensor3 {
            channels,
            rows,
            cols,
            data,
        }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }
    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }
    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }
    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.rows, self.cols)
    }
    /// Cells per plane.
    #[inline]
    pub fn plane_len(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[S] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn plane_mut(&mut self, c: usize) -> &mut [S] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> S {
        self.data[(c * self.rows + y) * self.cols + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: S) {
        self.data[(c * self.rows + y) * self.cols + x] = v;
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Element-wise copy into another precision (f32 <-> f64).
    pub fn convert<T: Scalar>(&self) -> Tensor3<T> {
        Tensor3 {
            channels: self.channels,
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| T::from_f64(v.into_f64())).collect(),
        }
    }
}

/// Output-coordinate ranges for which a read at offset `(dy, dx)` stays in
/// bounds; `None` when the overlap is empty.
fn shifted_ranges(
    rows: usize,
    cols: usize,
    dy: i64,
    dx: i64,
) -> Option<(Range<usize>, Range<usize>)> {
    let y0 = (-dy).max(0) as usize;
    let y1 = (rows as i64).min(rows as i64 - dy).max(0) as usize;
    let x0 = (-dx).max(0) as usize;
    let x1 = (cols as i64).min(cols as i64 - dx).max(0) as usize;
    if y0 >= y1 || x0 >= x1 {
        None
    } else {
        Some((y0..y1, x0..x1))
    }
}

/// `out[y,x] += k * inp[y+dy, x+dx]` over the in-bounds overlap.
fn axpy_shifted<S: Scalar>(out: &mut [S], inp: &[S], rows: usize, cols: usize, dy: i64, dx: i64, k: S) {
    let Some((ys, xs)) = shifted_ranges(rows, cols, dy, dx) else {
        return;
    };
    for y in ys {
        let sy = (y as i64 + dy) as usize;
        let sx0 = (xs.start as i64 + dx) as usize;
        let sx1 = (xs.end as i64 + dx) as usize;
        let dst = &mut out[y * cols + xs.start..y * cols + xs.end];
        let src = &inp[sy * cols + sx0..sy * cols + sx1];
        for (o, &i) in dst.iter_mut().zip(src) {
            *o += k * i;
        }
    }
}

/// `sum over (y,x) of a[y,x] * b[y+dy, x+dx]` over the in-bounds overlap.
fn dot_shifted<S: Scalar>(a: &[S], b: &[S], rows: usize, cols: usize, dy: i64, dx: i64) -> S {
    let Some((ys, xs)) = shifted_ranges(rows, cols, dy, dx) else {
        return S::zero();
    };
    let mut acc = S::zero();
    for y in ys.clone() {
        let sy = (y as i64 + dy) as usize;
        let sx0 = (xs.start as i64 + dx) as usize;
        let sx1 = (xs.end as i64 + dx) as usize;
        let lhs = &a[y * cols + xs.start..y * cols + xs.end];
        let rhs = &b[sy * cols + sx0..sy * cols + sx1];
        for (&l, &r) in lhs.iter().zip(rhs) {
            acc += l * r;
        }
    }
    acc
}

/// 3x3 convolution with zero padding: out-of-bounds neighbours contribute
/// nothing. `kernel` is `[filters][in_channels][3][3]` flattened, `bias` has
/// one entry per filter. Each output element accumulates bias first, then the
/// taps in `(in_channel, tap)` order — the brute-force oracle in the tests
/// reproduces that order exactly, so interior cells match bit for bit.
pub fn conv3x3_forward<S: Scalar>(input: &Tensor3<S>, kernel: &[S], bias: &[S]) -> Tensor3<S> {
    let (c_in, rows, cols) = input.shape();
    let filters = bias.len();
    assert_eq!(
        kernel.len(),
        filters * c_in * 9,
        "kernel length {} does not match {} filters x {} channels x 9 taps",
        kernel.len(),
        filters,
        c_in
    );
    let mut out = Tensor3::zeros(filters, rows, cols);
    for f in 0..filters {
        let plane = out.plane_mut(f);
        plane.fill(bias[f]);
        for c in 0..c_in {
            let taps = &kernel[(f * c_in + c) * 9..(f * c_in + c) * 9 + 9];
            let src = input.plane(c);
            for (tap, &k) in taps.iter().enumerate() {
                let dy = tap as i64 / 3 - 1;
                let dx = tap as i64 % 3 - 1;
                axpy_shifted(plane, src, rows, cols, dy, dx, k);
            }
        }
    }
    out
}

/// Adjoint of [`conv3x3_forward`]. Accumulates into `d_input`, `d_kernel`,
/// `d_bias`.
pub fn conv3x3_backward<S: Scalar>(
    input: &Tensor3<S>,
    kernel: &[S],
    d_out: &Tensor3<S>,
    d_input: &mut Tensor3<S>,
    d_kernel: &mut [S],
    d_bias: &mut [S],
) {
    let (c_in, rows, cols) = input.shape();
    let filters = d_bias.len();
    assert_eq!(kernel.len(), filters * c_in * 9);
    assert_eq!(d_kernel.len(), kernel.len());
    assert_eq!(d_out.shape(), (filters, rows, cols));
    assert_eq!(d_input.shape(), input.shape());
    for f in 0..filters {
        let grad = d_out.plane(f);
        d_bias[f] += grad.iter().copied().sum();
        for c in 0..c_in {
            let base = (f * c_in + c) * 9;
            let src = input.plane(c);
            let dst = d_input.plane_mut(c);
            for tap in 0..9 {
                let dy = tap as i64 / 3 - 1;
                let dx = tap as i64 % 3 - 1;
                // out[y,x] += k * in[y+dy,x+dx]  =>  d_in[u,v] += k * d_out[u-dy,v-dx]
                axpy_shifted(dst, grad, rows, cols, -dy, -dx, kernel[base + tap]);
                d_kernel[base + tap] += dot_shifted(grad, src, rows, cols, dy, dx);
            }
        }
    }
}

/// Per-cell layer normalization across channels with learned per-channel gain
/// and shift. Uses the population variance (divide by channel count) and adds
/// `eps` inside the square root.
pub fn layernorm_forward<S: Scalar>(
    input: &Tensor3<S>,
    gain: &[S],
    shift: &[S],
    eps: S,
) -> Tensor3<S> {
    let (f, rows, cols) = input.shape();
    assert!(f >= 2, "layernorm needs at least 2 channels, got {f}");
    assert_eq!(gain.len(), f);
    assert_eq!(shift.len(), f);
    let n = rows * cols;
    let inv_f = S::from_f64(1.0 / f as f64);

    let mut mean = vec![S::zero(); n];
    for c in 0..f {
        for (m, &x) in mean.iter_mut().zip(input.plane(c)) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m *= inv_f;
    }

    let mut inv_std = vec![S::zero(); n];
    for c in 0..f {
        for ((v, &m), &x) in inv_std.iter_mut().zip(&mean).zip(input.plane(c)) {
            let d = x - m;
            *v += d * d;
        }
    }
    for v in &mut inv_std {
        *v = (*v * inv_f + eps).sqrt().recip();
    }

    let mut out = Tensor3::zeros(f, rows, cols);
    for c in 0..f {
        let g = gain[c];
        let s = shift[c];
        let dst = out.plane_mut(c);
        let src = input.plane(c);
        for (((o, &x), &m), &is) in dst.iter_mut().zip(src).zip(&mean).zip(&inv_std) {
            *o = g * ((x - m) * is) + s;
        }
    }
    out
}

/// Adjoint of [`layernorm_forward`]. `input` is the same pre-normalization
/// tensor the forward pass saw; statistics are recomputed from it.
pub fn layernorm_backward<S: Scalar>(
    input: &Tensor3<S>,
    gain: &[S],
    eps: S,
    d_out: &Tensor3<S>,
    d_input: &mut Tensor3<S>,
    d_gain: &mut [S],
    d_shift: &mut [S],
) {
    let (f, rows, cols) = input.shape();
    assert_eq!(d_out.shape(), input.shape());
    assert_eq!(d_input.shape(), input.shape());
    assert_eq!(gain.len(), f);
    assert_eq!(d_gain.len(), f);
    assert_eq!(d_shift.len(), f);
    let n = rows * cols;
    let inv_f = S::from_f64(1.0 / f as f64);

    let mut mean = vec![S::zero(); n];
    for c in 0..f {
        for (m, &x) in mean.iter_mut().zip(input.plane(c)) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m *= inv_f;
    }
    let mut inv_std = vec![S::zero(); n];
    for c in 0..f {
        for ((v, &m), &x) in inv_std.iter_mut().zip(&mean).zip(input.plane(c)) {
            let d = x - m;
            *v += d * d;
        }
    }
    for v in &mut inv_std {
        *v = (*v * inv_f + eps).sqrt().recip();
    }

    // Per-cell channel means of g.dy and of g.dy.xhat, needed by the classic
    // layernorm adjoint: dx = inv_std * (g.dy - mean(g.dy) - xhat * mean(g.dy * xhat)).
    let mut m1 = vec![S::zero(); n];
    let mut m2 = vec![S::zero(); n];
    for c in 0..f {
        let g = gain[c];
        let dy = d_out.plane(c);
        let x = input.plane(c);
        for i in 0..n {
            let gdy = g * dy[i];
            let xhat = (x[i] - mean[i]) * inv_std[i];
            m1[i] += gdy;
            m2[i] += gdy * xhat;
        }
    }
    for i in 0..n {
        m1[i] *= inv_f;
        m2[i] *= inv_f;
    }

    for c in 0..f {
        let g = gain[c];
        let dy = d_out.plane(c);
        let x = input.plane(c);
        let dx = d_input.plane_mut(c);
        let mut dg = S::zero();
        let mut ds = S::zero();
        for i in 0..n {
            let xhat = (x[i] - mean[i]) * inv_std[i];
            dx[i] += inv_std[i] * (g * dy[i] - m1[i] - xhat * m2[i]);
            dg += dy[i] * xhat;
            ds += dy[i];
        }
        d_gain[c] += dg;
        d_shift[c] += ds;
    }
}

/// 1x1 ("dense") layer applied at every cell: `out[b] = bias[b] + sum_a
/// w[b,a] * in[a]`. `weights` is `[out_channels][in_channels]` row-major.
pub fn dense_forward<S: Scalar>(input: &Tensor3<S>, weights: &[S], bias: &[S]) -> Tensor3<S> {
    let (a_ch, rows, cols) = input.shape();
    let b_ch = bias.len();
    assert_eq!(
        weights.len(),
        b_ch * a_ch,
        "weight length {} does not match {}x{}",
        weights.len(),
        b_ch,
        a_ch
    );
    let mut out = Tensor3::zeros(b_ch, rows, cols);
    for b in 0..b_ch {
        let plane = out.plane_mut(b);
        plane.fill(bias[b]);
        for a in 0..a_ch {
            let k = weights[b * a_ch + a];
            let src = input.plane(a);
            for (o, &i) in plane.iter_mut().zip(src) {
                *o += k * i;
            }
        }
    }
    out
}

/// Adjoint of [`dense_forward`]. Accumulates into `d_input`, `d_weights`,
/// `d_bias`.
pub fn dense_backward<S: Scalar>(
    input: &Tensor3<S>,
    weights: &[S],
    d_out: &Tensor3<S>,
    d_input: &mut Tensor3<S>,
    d_weights: &mut [S],
    d_bias: &mut [S],
) {
    let (a_ch, rows, cols) = input.shape();
    let b_ch = d_bias.len();
    assert_eq!(weights.len(), b_ch * a_ch);
    assert_eq!(d_weights.len(), weights.len());
    assert_eq!(d_out.shape(), (b_ch, rows, cols));
    assert_eq!(d_input.shape(), input.shape());
    for b in 0..b_ch {
        let grad = d_out.plane(b);
        d_bias[b] += grad.iter().copied().sum();
        for a in 0..a_ch {
            let k = weights[b * a_ch + a];
            let dst = d_input.plane_mut(a);
            for (o, &g) in dst.iter_mut().zip(grad) {
                *o += k * g;
            }
            let src = input.plane(a);
            let mut acc = S::zero();
            for (&g, &x) in grad.iter().zip(src) {
                acc += g * x;
            }
            d_weights[b * a_ch + a] += acc;
        }
    }
}

/// Element-wise `max(0, x)`.
pub fn relu<S: Scalar>(input: &Tensor3<S>) -> Tensor3<S> {
    let mut out = input.clone();
    for v in out.data_mut() {
        if *v < S::zero() {
            *v = S::zero();
        }
    }
    out
}

/// Adjoint of [`relu`]. `activated` is the forward *output*; gradient passes
/// wherever it is strictly positive.
pub fn relu_backward<S: Scalar>(activated: &Tensor3<S>, d_out: &Tensor3<S>, d_input: &mut Tensor3<S>) {
    assert_eq!(activated.shape(), d_out.shape());
    assert_eq!(activated.shape(), d_input.shape());
    for ((di, &a), &g) in d_input
        .data_mut()
        .iter_mut()
        .zip(activated.data())
        .zip(d_out.data())
    {
        if a > S::zero() {
            *di += g;
        }
    }
}

/// Per-cell softmax over the 10 color channels, computed with the max
/// subtracted for overflow safety.
pub fn softmax10<S: Scalar>(logits: &Tensor3<S>) -> Tensor3<S> {
    let (c, rows, cols) = logits.shape();
    assert_eq!(c, 10, "softmax10 expects exactly 10 channels, got {c}");
    let n = rows * cols;
    let mut maxv = logits.plane(0).to_vec();
    for ch in 1..10 {
        for (m, &x) in maxv.iter_mut().zip(logits.plane(ch)) {
            if x > *m {
                *m = x;
            }
        }
    }
    let mut out = Tensor3::zeros(10, rows, cols);
    let mut sum = vec![S::zero(); n];
    for ch in 0..10 {
        let dst = out.plane_mut(ch);
        let src = logits.plane(ch);
        for ((o, &x), (&m, s)) in dst.iter_mut().zip(src).zip(maxv.iter().zip(sum.iter_mut())) {
            let e = (x - m).exp();
            *o = e;
            *s += e;
        }
    }
    for ch in 0..10 {
        for (o, &s) in out.plane_mut(ch).iter_mut().zip(&sum) {
            *o /= s;
        }
    }
    out
}

/// Adjoint of [`softmax10`] given the forward output `probs`:
/// `d_logits[c] += probs[c] * (d_probs[c] - sum_k d_probs[k] * probs[k])`.
pub fn softmax10_backward<S: Scalar>(probs: &Tensor3<S>, d_probs: &Tensor3<S>, d_logits: &mut Tensor3<S>) {
    assert_eq!(probs.shape(), d_probs.shape());
    assert_eq!(probs.shape(), d_logits.shape());
    let n = probs.plane_len();
    let mut dot = vec![S::zero(); n];
    for ch in 0..10 {
        for ((d, &p), &g) in dot.iter_mut().zip(probs.plane(ch)).zip(d_probs.plane(ch)) {
            *d += p * g;
        }
    }
    for ch in 0..10 {
        let dst = d_logits.plane_mut(ch);
        let p = probs.plane(ch);
        let g = d_probs.plane(ch);
        for i in 0..n {
            dst[i] += p[i] * (g[i] - dot[i]);
        }
    }
}

/// Mean over all cells of `-log_softmax(logits)[target color]`, computed from
/// the logits via a max-shifted log-sum-exp (never the log of stored
/// probabilities). Returns an f64 regardless of the working precision.
pub fn cross_entropy<S: Scalar>(logits: &Tensor3<S>, target: &Grid) -> Result<f64, ShapeMismatch> {
    let (c, rows, cols) = logits.shape();
    assert_eq!(c, 10, "cross_entropy expects 10 logit channels, got {c}");
    if rows != target.rows() || cols != target.cols() {
        return Err(ShapeMismatch {
            logit_rows: rows,
            logit_cols: cols,
            grid_rows: target.rows(),
            grid_cols: target.cols(),
        });
    }
    let n = rows * cols;
    let mut maxv = logits.plane(0).to_vec();
    for ch in 1..10 {
        for (m, &x) in maxv.iter_mut().zip(logits.plane(ch)) {
            if x > *m {
                *m = x;
            }
        }
    }
    let mut sum = vec![S::zero(); n];
    for ch in 0..10 {
        for ((s, &x), &m) in sum.iter_mut().zip(logits.plane(ch)).zip(&maxv) {
            *s += (x - m).exp();
        }
    }
    let mut total = 0.0f64;
    for (i, &color) in target.cells().iter().enumerate() {
        let lse = maxv[i].into_f64() + sum[i].into_f64().ln();
        let picked = logits.data()[color as usize * n + i].into_f64();
        total += lse - picked;
    }
    Ok(total / n as f64)
}

/// Adjoint of [`cross_entropy`] given the forward softmax output: adds
/// `scale * (probs - onehot(target))` into `d_logits`. Pass
/// `scale = 1 / (cells * steps)` to realize the mean-over-cells,
/// mean-over-steps convention in one shot.
pub fn cross_entropy_backward<S: Scalar>(
    probs: &Tensor3<S>,
    target: &Grid,
    scale: S,
    d_logits: &mut Tensor3<S>,
) {
    let (c, rows, cols) = probs.shape();
    assert_eq!(c, 10);
    assert_eq!(probs.shape(), d_logits.shape());
    assert_eq!(
        (rows, cols),
        (target.rows(), target.cols()),
        "probs are {rows}x{cols} but target is {}x{}",
        target.rows(),
        target.cols()
    );
    let n = rows * cols;
    for ch in 0..10 {
        let dst = d_logits.plane_mut(ch);
        let p = probs.plane(ch);
        for (d, &pv) in dst.iter_mut().zip(p) {
            *d += scale * pv;
        }
    }
    for (i, &color) in target.cells().iter().enumerate() {
        d_logits.data_mut()[color as usize * n + i] -= scale;
    }
}
