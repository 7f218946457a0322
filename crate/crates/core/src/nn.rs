//! Minimal neural-network building blocks with hand-derived gradients.
//!
//! Everything is a flat slice with an explicit shape; sequences are
//! channel-major (`[ch][time]`) so each channel is contiguous for the
//! time-dilated convolutions. Layers own their parameters as
//! [`Param`] pairs (weights plus accumulated gradients). Models expose
//! their parameters by name through [`Visitable`], in declaration order,
//! which is the single protocol used by the optimizer, serialization,
//! and parameter counting.
//!
//! Initialization draws are always taken in `f64` and then cast, so a
//! model built from the same seed has identical weights whichever scalar
//! it is instantiated at.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

// ── Parameters ──────────────────────────────────────────────────────────

/// A weight tensor and its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Param<S> {
    pub w: Vec<S>,
    pub g: Vec<S>,
}

impl<S: Scalar> Param<S> {
    pub fn zeros(len: usize) -> Self {
        Self { w: vec![S::zero(); len], g: vec![S::zero(); len] }
    }

    pub fn from_weights(w: Vec<S>) -> Self {
        let g = vec![S::zero(); w.len()];
        Self { w, g }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.g.iter_mut().for_each(|g| *g = S::zero());
    }
}

/// Named, ordered access to every parameter of a model. Names are stable
/// across calls and unique within a model.
pub trait Visitable<S: Scalar> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<S>));
}

pub fn param_count<S: Scalar>(model: &mut dyn Visitable<S>) -> usize {
    let mut n = 0;
    model.visit_params(&mut |_, p| n += p.len());
    n
}

pub fn zero_grads<S: Scalar>(model: &mut dyn Visitable<S>) {
    model.visit_params(&mut |_, p| p.zero_grad());
}

/// Draw `len` values from U(-bound, bound), always in f64.
pub fn draw_uniform<S: Scalar>(rng: &mut ChaCha8Rng, len: usize, bound: f64) -> Vec<S> {
    (0..len).map(|_| S::from_f(rng.gen_range(-bound..bound))).collect()
}

// ── Activations ─────────────────────────────────────────────────────────

pub fn relu_inplace<S: Scalar>(x: &mut [S]) {
    for v in x.iter_mut() {
        if *v < S::zero() {
            *v = S::zero();
        }
    }
}

/// Backward of ReLU given the activation output (o > 0 iff input > 0).
pub fn relu_backward<S: Scalar>(output: &[S], grad: &mut [S]) {
    for (g, &o) in grad.iter_mut().zip(output) {
        if o <= S::zero() {
            *g = S::zero();
        }
    }
}

// ── 1-D convolution ─────────────────────────────────────────────────────

/// Dilated, optionally strided 1-D convolution without padding:
/// `y[co][t] = b[co] + sum_{ci,k} w[co][ci][k] * x[ci][t*stride + k*dilation]`,
/// so the output length is `(t_in - (k-1)*dilation - 1)/stride + 1` and
/// output sample `t` depends only on inputs starting at `t*stride`.
/// Callers arrange causality by cropping from the sequence tail.
#[derive(Clone, Debug)]
pub struct Conv1d<S> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub stride: usize,
    pub w: Param<S>,
    pub b: Param<S>,
}

impl<S: Scalar> Conv1d<S> {
    pub fn new(rng: &mut ChaCha8Rng, in_ch: usize, out_ch: usize, kernel: usize, dilation: usize) -> Self {
        Self::with_stride(rng, in_ch, out_ch, kernel, dilation, 1)
    }

    pub fn with_stride(
        rng: &mut ChaCha8Rng,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        dilation: usize,
        stride: usize,
    ) -> Self {
        assert!(in_ch > 0 && out_ch > 0 && kernel > 0 && dilation > 0 && stride > 0);
        let bound = (1.0 / (in_ch * kernel) as f64).sqrt();
        Self {
            in_ch,
            out_ch,
            kernel,
            dilation,
            stride,
            w: Param::from_weights(draw_uniform(rng, out_ch * in_ch * kernel, bound)),
            b: Param::from_weights(draw_uniform(rng, out_ch, bound)),
        }
    }

    /// Input samples consumed beyond each output sample's start.
    pub fn context(&self) -> usize {
        (self.kernel - 1) * self.dilation
    }

    pub fn out_len(&self, t_in: usize) -> Result<usize> {
        if t_in <= self.context() {
            return Err(Error::Invalid(format!(
                "conv1d: input length {t_in} too short for kernel {} dilation {}",
                self.kernel, self.dilation
            )));
        }
        Ok((t_in - self.context() - 1) / self.stride + 1)
    }

    /// `x` is `[in_ch][t_in]`; returns `[out_ch][t_out]`.
    pub fn forward(&self, x: &[S], t_in: usize) -> Result<Vec<S>> {
        debug_assert_eq!(x.len(), self.in_ch * t_in);
        let t_out = self.out_len(t_in)?;
        let mut y = vec![S::zero(); self.out_ch * t_out];
        for co in 0..self.out_ch {
            let yrow = &mut y[co * t_out..(co + 1) * t_out];
            yrow.iter_mut().for_each(|v| *v = self.b.w[co]);
            for ci in 0..self.in_ch {
                let xrow = &x[ci * t_in..(ci + 1) * t_in];
                for k in 0..self.kernel {
                    let wv = self.w.w[(co * self.in_ch + ci) * self.kernel + k];
                    let off = k * self.dilation;
                    if self.stride == 1 {
                        for (yv, &xv) in yrow.iter_mut().zip(&xrow[off..off + t_out]) {
                            *yv += wv * xv;
                        }
                    } else {
                        for (t, yv) in yrow.iter_mut().enumerate() {
                            *yv += wv * xrow[t * self.stride + off];
                        }
                    }
                }
            }
        }
        Ok(y)
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    /// `gy` is `[out_ch][t_out]` for the same `x`/`t_in` as the forward.
    pub fn backward(&mut self, x: &[S], t_in: usize, gy: &[S]) -> Result<Vec<S>> {
        let t_out = self.out_len(t_in)?;
        debug_assert_eq!(x.len(), self.in_ch * t_in);
        debug_assert_eq!(gy.len(), self.out_ch * t_out);
        let mut gx = vec![S::zero(); self.in_ch * t_in];
        for co in 0..self.out_ch {
            let grow = &gy[co * t_out..(co + 1) * t_out];
            self.b.g[co] += grow.iter().copied().sum();
            for ci in 0..self.in_ch {
                let xrow = &x[ci * t_in..(ci + 1) * t_in];
                let gxrow = &mut gx[ci * t_in..(ci + 1) * t_in];
                for k in 0..self.kernel {
                    let off = k * self.dilation;
                    let widx = (co * self.in_ch + ci) * self.kernel + k;
                    let wv = self.w.w[widx];
                    let mut wg = S::zero();
                    for t in 0..t_out {
                        let g = grow[t];
                        let xi = t * self.stride + off;
                        wg += g * xrow[xi];
                        gxrow[xi] += wv * g;
                    }
                    self.w.g[widx] += wg;
                }
            }
        }
        Ok(gx)
    }
}

impl<S: Scalar> Visitable<S> for Conv1d<S> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        f("weight", &mut self.w);
        f("bias", &mut self.b);
    }
}

// ── Fully connected layer ───────────────────────────────────────────────

/// `y = W x + b` on plain vectors; weights are `[out][in]` row-major.
#[derive(Clone, Debug)]
pub struct Linear<S> {
    pub in_f: usize,
    pub out_f: usize,
    pub w: Param<S>,
    pub b: Param<S>,
}

impl<S: Scalar> Linear<S> {
    pub fn new(rng: &mut ChaCha8Rng, in_f: usize, out_f: usize) -> Self {
        assert!(in_f > 0 && out_f > 0);
        let bound = (1.0 / in_f as f64).sqrt();
        Self {
            in_f,
            out_f,
            w: Param::from_weights(draw_uniform(rng, out_f * in_f, bound)),
            b: Param::from_weights(draw_uniform(rng, out_f, bound)),
        }
    }

    pub fn forward(&self, x: &[S]) -> Vec<S> {
        debug_assert_eq!(x.len(), self.in_f);
        (0..self.out_f)
            .map(|o| {
                let row = &self.w.w[o * self.in_f..(o + 1) * self.in_f];
                let mut acc = self.b.w[o];
                for (&wv, &xv) in row.iter().zip(x) {
                    acc += wv * xv;
                }
                acc
            })
            .collect()
    }

    pub fn backward(&mut self, x: &[S], gy: &[S]) -> Vec<S> {
        debug_assert_eq!(x.len(), self.in_f);
        debug_assert_eq!(gy.len(), self.out_f);
        let mut gx = vec![S::zero(); self.in_f];
        for o in 0..self.out_f {
            let g = gy[o];
            self.b.g[o] += g;
            let row = &self.w.w[o * self.in_f..(o + 1) * self.in_f];
            let grow = &mut self.w.g[o * self.in_f..(o + 1) * self.in_f];
            for i in 0..self.in_f {
                grow[i] += g * x[i];
                gx[i] += row[i] * g;
            }
        }
        gx
    }
}

impl<S: Scalar> Visitable<S> for Linear<S> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        f("weight", &mut self.w);
        f("bias", &mut self.b);
    }
}

// ── Adam optimizer ──────────────────────────────────────────────────────

/// Adam with standard bias correction. Moment state is kept in f64 and
/// keyed by parameter name, so checkpoints restore exactly and training
/// behaves identically across model scalar types.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Completed steps (drives bias correction).
    pub t: u64,
    state: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, state: BTreeMap::new() }
    }

    pub fn step<S: Scalar>(&mut self, model: &mut dyn Visitable<S>) {
        self.t += 1;
        let (b1, b2, lr, eps, t) = (self.beta1, self.beta2, self.lr, self.eps, self.t as i32);
        let state = &mut self.state;
        let corr1 = 1.0 - b1.powi(t);
        let corr2 = 1.0 - b2.powi(t);
        model.visit_params(&mut |name, p| {
            let (m, v) = state
                .entry(name.to_string())
                .or_insert_with(|| (vec![0.0; p.len()], vec![0.0; p.len()]));
            assert_eq!(m.len(), p.len(), "param {name} changed size");
            for i in 0..p.len() {
                let g = p.g[i].to_f();
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let update = lr * (m[i] / corr1) / ((v[i] / corr2).sqrt() + eps);
                p.w[i] = S::from_f(p.w[i].to_f() - update);
            }
        });
    }

    /// Moment state as named f64 sections for checkpointing.
    pub fn export_state(&self) -> Vec<(String, Vec<f64>, Vec<f64>)> {
        self.state.iter().map(|(k, (m, v))| (k.clone(), m.clone(), v.clone())).collect()
    }

    pub fn import_state(&mut self, t: u64, entries: Vec<(String, Vec<f64>, Vec<f64>)>) {
        self.t = t;
        self.state = entries.into_iter().map(|(k, m, v)| (k, (m, v))).collect();
    }
}

/// Prefix every name a visitor emits: composes nested models.
pub struct Scoped<'a, 'b, S: Scalar> {
    pub prefix: &'a str,
    pub f: &'b mut dyn FnMut(&str, &mut Param<S>),
}

impl<S: Scalar> Scoped<'_, '_, S> {
    pub fn visit(&mut self, child: &mut dyn Visitable<S>) {
        let prefix = self.prefix;
        let f = &mut *self.f;
        child.visit_params(&mut |name, p| f(&format!("{prefix}.{name}"), p));
    }
}
