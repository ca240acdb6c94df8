//! Minimal fully-connected network stack used by the offline RL algorithms:
//! f64 multilayer perceptrons with ReLU hidden layers, manual reverse-mode
//! gradients (including gradients with respect to the input, needed to push
//! actor updates through a critic), Adam, Polyak averaging, and a versioned
//! binary checkpoint format.
//!
//! Everything is deterministic: initialization draws from a caller-provided
//! RNG and all accumulation orders are fixed.

use rand::Rng;
use std::io::{self, Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("input length {got} does not match layer width {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("gradient or optimizer state shape does not match the network")]
    ShapeMismatch,
    #[error("networks have different architectures")]
    ArchitectureMismatch,
    #[error("polyak factor {0} outside (0, 1]")]
    BadTau(f64),
    #[error("output bounds must be finite and positive")]
    BadBounds,
    #[error("a network needs an input and an output layer")]
    TooFewLayers,
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("malformed checkpoint: {0}")]
    Format(String),
}

/// Output-layer activation. Hidden layers are always ReLU.
#[derive(Debug, Clone, PartialEq)]
pub enum OutputActivation {
    Identity,
    /// `out_i = bound_i * tanh(z_i)`; outputs stay strictly inside the bounds.
    TanhScaled(Vec<f64>),
}

/// Fixed-order dot product with four independent accumulators (keeps the
/// result deterministic while letting the backend pipeline the loop).
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n4 = a.len() & !3;
    let mut acc = [0.0f64; 4];
    for (x, y) in a[..n4].chunks_exact(4).zip(b[..n4].chunks_exact(4)) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in n4..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn axpy(alpha: f64, x: &[f64], out: &mut [f64]) {
    for (o, xi) in out.iter_mut().zip(x) {
        *o += alpha * *xi;
    }
}

/// tanh clamped strictly inside (-1, 1) so scaled outputs never touch their
/// bounds even when the pre-activation saturates in f64.
fn tanh_interior(z: f64) -> f64 {
    z.tanh().clamp(-(1.0 - 1e-12), 1.0 - 1e-12)
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    /// Row-major `[n_out x n_in]`.
    w: Vec<f64>,
    b: Vec<f64>,
    n_in: usize,
    n_out: usize,
}

impl Layer {
    fn row(&self, o: usize) -> &[f64] {
        &self.w[o * self.n_in..(o + 1) * self.n_in]
    }
}

/// Multilayer perceptron: `sizes = [in, hidden..., out]`, ReLU hidden layers,
/// configurable output activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    layers: Vec<Layer>,
    output: OutputActivation,
}

/// Cached intermediate results of one forward pass, reusable across calls.
#[derive(Debug, Clone, Default)]
pub struct ForwardTrace {
    input: Vec<f64>,
    /// Pre-activations per layer.
    pre: Vec<Vec<f64>>,
    /// Post-activations per layer; the last entry is the network output.
    post: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.post.last().expect("trace from a forward pass")
    }
}

/// Parameter-shaped gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    dw: Vec<Vec<f64>>,
    db: Vec<Vec<f64>>,
}

impl GradientBundle {
    pub fn zeros(net: &Mlp) -> Self {
        GradientBundle {
            dw: net.layers.iter().map(|l| vec![0.0; l.w.len()]).collect(),
            db: net.layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.dw.iter_mut().chain(self.db.iter_mut()) {
            for v in g.iter_mut() {
                *v *= s;
            }
        }
    }

    pub fn add(&mut self, other: &GradientBundle) {
        debug_assert_eq!(self.dw.len(), other.dw.len());
        for (a, b) in self.dw.iter_mut().zip(&other.dw) {
            axpy(1.0, b, a);
        }
        for (a, b) in self.db.iter_mut().zip(&other.db) {
            axpy(1.0, b, a);
        }
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.dw.iter().zip(&self.db).flat_map(|(w, b)| w.iter().chain(b.iter()))
    }

    fn matches(&self, net: &Mlp) -> bool {
        self.dw.len() == net.layers.len()
            && self
                .dw
                .iter()
                .zip(&self.db)
                .zip(&net.layers)
                .all(|((w, b), l)| w.len() == l.w.len() && b.len() == l.b.len())
    }
}

impl Mlp {
    /// Random-initialized network: weights uniform with He-style fan-in scale
    /// `sqrt(6 / n_in)` and zero biases, except the output layer which uses
    /// the conventional small uniform `[-3e-3, 3e-3]` on weights and biases.
    pub fn init<R: Rng>(
        sizes: &[usize],
        output: OutputActivation,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(NnError::TooFewLayers);
        }
        if let OutputActivation::TanhScaled(b) = &output {
            if b.len() != *sizes.last().unwrap() || b.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(NnError::BadBounds);
            }
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (n_in, n_out) = (w[0], w[1]);
                let (ws, bs) = if i == last {
                    (
                        (0..n_in * n_out).map(|_| rng.random_range(-3e-3..3e-3)).collect(),
                        (0..n_out).map(|_| rng.random_range(-3e-3..3e-3)).collect(),
                    )
                } else {
                    let bound = (6.0 / n_in as f64).sqrt();
                    (
                        (0..n_in * n_out).map(|_| rng.random_range(-bound..bound)).collect(),
                        vec![0.0; n_out],
                    )
                };
                Layer { w: ws, b: bs, n_in, n_out }
            })
            .collect();
        Ok(Mlp { sizes: sizes.to_vec(), layers, output })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn output_activation(&self) -> &OutputActivation {
        &self.output
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// All parameters in checkpoint order: per layer, weights row-major then
    /// bias. The output layer's parameters come last.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.w.iter().chain(l.b.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.w.iter_mut().chain(l.b.iter_mut()))
    }

    /// Number of parameters in the final (output) layer, i.e. the count of
    /// trailing entries of [`Mlp::params`] whose scaling rescales the output.
    pub fn output_layer_param_count(&self) -> usize {
        let l = self.layers.last().expect("at least one layer");
        l.w.len() + l.b.len()
    }

    /// Plain forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        let mut t = ForwardTrace::default();
        self.forward_trace_into(x, &mut t)?;
        Ok(t.post.pop().unwrap())
    }

    /// Forward pass that records the activations `backward` needs. Reuses the
    /// trace's buffers across calls.
    pub fn forward_trace_into(&self, x: &[f64], t: &mut ForwardTrace) -> Result<(), NnError> {
        if x.len() != self.sizes[0] {
            return Err(NnError::DimMismatch { expected: self.sizes[0], got: x.len() });
        }
        t.input.clear();
        t.input.extend_from_slice(x);
        t.pre.resize_with(self.layers.len(), Vec::new);
        t.post.resize_with(self.layers.len(), Vec::new);
        let n_layers = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            // Split borrows: previous activation vs this layer's buffers.
            let (head, tail) = t.post.split_at_mut(i);
            let src: &[f64] = if i == 0 { &t.input } else { &head[i - 1] };
            let pre = &mut t.pre[i];
            pre.clear();
            for o in 0..layer.n_out {
                pre.push(dot(layer.row(o), src) + layer.b[o]);
            }
            let post = &mut tail[0];
            post.clear();
            if i + 1 < n_layers {
                post.extend(pre.iter().map(|&z| if z > 0.0 { z } else { 0.0 }));
            } else {
                match &self.output {
                    OutputActivation::Identity => post.extend_from_slice(pre),
                    OutputActivation::TanhScaled(bounds) => {
                        post.extend(pre.iter().zip(bounds).map(|(&z, &b)| b * tanh_interior(z)))
                    }
                }
            }
        }
        Ok(())
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<ForwardTrace, NnError> {
        let mut t = ForwardTrace::default();
        self.forward_trace_into(x, &mut t)?;
        Ok(t)
    }

    /// Reverse pass for one sample: accumulates parameter gradients of
    /// `upstream . output` into `grads` and writes the gradient with respect
    /// to the input into `input_grad`. ReLU uses subgradient 0 at exactly 0.
    pub fn backward_into(
        &self,
        trace: &ForwardTrace,
        upstream: &[f64],
        grads: &mut GradientBundle,
        input_grad: &mut Vec<f64>,
    ) -> Result<(), NnError> {
        let n_layers = self.layers.len();
        if upstream.len() != self.output_dim() {
            return Err(NnError::DimMismatch { expected: self.output_dim(), got: upstream.len() });
        }
        if trace.post.len() != n_layers || trace.input.len() != self.sizes[0] {
            return Err(NnError::ShapeMismatch);
        }
        if !grads.matches(self) {
            return Err(NnError::ShapeMismatch);
        }
        // delta = dL/d(pre-activation) of the current layer.
        let mut delta: Vec<f64> = match &self.output {
            OutputActivation::Identity => upstream.to_vec(),
            OutputActivation::TanhScaled(bounds) => {
                let pre = &trace.pre[n_layers - 1];
                upstream
                    .iter()
                    .zip(pre)
                    .zip(bounds)
                    .map(|((&u, &z), &b)| {
                        let t = z.tanh();
                        u * b * (1.0 - t * t)
                    })
                    .collect()
            }
        };
        let mut next_delta: Vec<f64> = Vec::new();
        for i in (0..n_layers).rev() {
            let layer = &self.layers[i];
            let src: &[f64] = if i == 0 { &trace.input } else { &trace.post[i - 1] };
            let dw = &mut grads.dw[i];
            for (o, &d) in delta.iter().enumerate() {
                grads.db[i][o] += d;
                axpy(d, src, &mut dw[o * layer.n_in..(o + 1) * layer.n_in]);
            }
            // Propagate to the layer below (or the input).
            next_delta.clear();
            next_delta.resize(layer.n_in, 0.0);
            for (o, &d) in delta.iter().enumerate() {
                axpy(d, layer.row(o), &mut next_delta);
            }
            if i > 0 {
                // Through the ReLU of layer i-1: zero where pre <= 0.
                for (nd, &z) in next_delta.iter_mut().zip(&trace.pre[i - 1]) {
                    if z <= 0.0 {
                        *nd = 0.0;
                    }
                }
            }
            std::mem::swap(&mut delta, &mut next_delta);
        }
        input_grad.clear();
        input_grad.extend_from_slice(&delta);
        Ok(())
    }

    /// Allocating convenience wrapper around [`Mlp::backward_into`].
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        upstream: &[f64],
    ) -> Result<(GradientBundle, Vec<f64>), NnError> {
        let mut g = GradientBundle::zeros(self);
        let mut dx = Vec::new();
        self.backward_into(trace, upstream, &mut g, &mut dx)?;
        Ok((g, dx))
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { lr: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected Adam state for one network.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(net: &Mlp, hyper: AdamHyper) -> Self {
        let n = net.param_count();
        AdamState { m: vec![0.0; n], v: vec![0.0; n], t: 0, hyper }
    }
}

/// One Adam step over all parameters. A zero gradient from a fresh state
/// leaves the parameters unchanged.
pub fn adam_update(net: &mut Mlp, grads: &GradientBundle, state: &mut AdamState) -> Result<(), NnError> {
    if !grads.matches(net) || state.m.len() != net.param_count() {
        return Err(NnError::ShapeMismatch);
    }
    state.t += 1;
    let h = state.hyper;
    let bc1 = 1.0 - h.beta1.powi(state.t as i32);
    let bc2 = 1.0 - h.beta2.powi(state.t as i32);
    for (((p, &g), m), v) in
        net.params_mut().zip(grads.values()).zip(state.m.iter_mut()).zip(state.v.iter_mut())
    {
        *m = h.beta1 * *m + (1.0 - h.beta1) * g;
        *v = h.beta2 * *v + (1.0 - h.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
    }
    Ok(())
}

/// Polyak averaging: `target <- tau * online + (1 - tau) * target`.
/// `tau = 1` copies; `tau = 0` (a frozen target) is rejected.
pub fn polyak_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<(), NnError> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(NnError::BadTau(tau));
    }
    if target.sizes != online.sizes || target.output != online.output {
        return Err(NnError::ArchitectureMismatch);
    }
    for (t, o) in target.params_mut().zip(online.params()) {
        *t = tau * *o + (1.0 - tau) * *t;
    }
    Ok(())
}

// --- checkpoint format ---------------------------------------------------
//
// Binary, little-endian, magic "CFNN1":
//   magic[5] | u32 n_sizes | u32 sizes[n_sizes]
//   | u8 activation (0 identity, 1 tanh-scaled) | [f64 bounds[out]]
//   | u8 has_norm | [u32 dim | f64 mean[dim] | f64 std[dim]]
//   | u64 param_count | f64 params (layer order, weights row-major then bias)

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"CFNN1";

/// A saved policy or critic: the network plus the observation normalization
/// it was trained with (mean, std), if any.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: Mlp,
    pub norm: Option<(Vec<f64>, Vec<f64>)>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vs: impl Iterator<Item = f64>) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        if self.pos + n > self.buf.len() {
            return Err(NnError::Format("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, NnError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, NnError> {
        let raw = self.take(8 * n)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let net = &self.net;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, net.sizes.len() as u32);
        for &s in &net.sizes {
            put_u32(&mut out, s as u32);
        }
        match &net.output {
            OutputActivation::Identity => out.push(0),
            OutputActivation::TanhScaled(b) => {
                out.push(1);
                put_f64s(&mut out, b.iter().copied());
            }
        }
        match &self.norm {
            None => out.push(0),
            Some((mean, std)) => {
                out.push(1);
                put_u32(&mut out, mean.len() as u32);
                put_f64s(&mut out, mean.iter().copied());
                put_f64s(&mut out, std.iter().copied());
            }
        }
        out.extend_from_slice(&(net.param_count() as u64).to_le_bytes());
        put_f64s(&mut out, net.params().copied());
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, NnError> {
        let mut c = Cursor { buf, pos: 0 };
        if c.take(5)? != CHECKPOINT_MAGIC {
            return Err(NnError::Format("bad magic".into()));
        }
        let n_sizes = c.u32()? as usize;
        if !(2..=64).contains(&n_sizes) {
            return Err(NnError::Format(format!("implausible layer count {n_sizes}")));
        }
        let mut sizes = Vec::with_capacity(n_sizes);
        for _ in 0..n_sizes {
            let s = c.u32()? as usize;
            if s == 0 {
                return Err(NnError::Format("zero-width layer".into()));
            }
            sizes.push(s);
        }
        let out_dim = *sizes.last().unwrap();
        let output = match c.u8()? {
            0 => OutputActivation::Identity,
            1 => {
                let b = c.f64s(out_dim)?;
                if b.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(NnError::Format("non-positive output bound".into()));
                }
                OutputActivation::TanhScaled(b)
            }
            t => return Err(NnError::Format(format!("unknown activation tag {t}"))),
        };
        let norm = match c.u8()? {
            0 => None,
            1 => {
                let dim = c.u32()? as usize;
                if dim != sizes[0] {
                    return Err(NnError::Format("normalization width differs from input".into()));
                }
                let mean = c.f64s(dim)?;
                let std = c.f64s(dim)?;
                if std.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(NnError::Format("non-positive normalization std".into()));
                }
                Some((mean, std))
            }
            t => return Err(NnError::Format(format!("unknown norm tag {t}"))),
        };
        let declared = c.u64()? as usize;
        let expected: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        if declared != expected {
            return Err(NnError::Format(format!(
                "parameter count {declared} does not match architecture ({expected})"
            )));
        }
        let flat = c.f64s(expected)?;
        if c.pos != buf.len() {
            return Err(NnError::Format("trailing bytes".into()));
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(NnError::Format("non-finite parameter".into()));
        }
        let mut layers = Vec::with_capacity(n_sizes - 1);
        let mut at = 0;
        for w in sizes.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let ws = flat[at..at + n_in * n_out].to_vec();
            at += n_in * n_out;
            let bs = flat[at..at + n_out].to_vec();
            at += n_out;
            layers.push(Layer { w: ws, b: bs, n_in, n_out });
        }
        Ok(Checkpoint { net: Mlp { sizes, layers, output }, norm })
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Checkpoint::from_bytes(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding;
    use approx::assert_relative_eq;

    fn tiny() -> Mlp {
        // 1-2-1 with fixed weights for a hand-computed check.
        let mut net = Mlp::init(&[1, 2, 1], OutputActivation::Identity, &mut seeding::rng(0, "t", 0))
            .unwrap();
        net.layers[0].w = vec![0.5, -1.0];
        net.layers[0].b = vec![0.1, 0.2];
        net.layers[1].w = vec![2.0, 3.0];
        net.layers[1].b = vec![-0.05];
        net
    }

    #[test]
    fn zero_net_outputs_zero() {
        let mut net =
            Mlp::init(&[3, 4, 2], OutputActivation::Identity, &mut seeding::rng(0, "z", 0)).unwrap();
        for p in net.params_mut() {
            *p = 0.0;
        }
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn hand_computed_forward() {
        // pre1 = [0.3, -0.2] -> relu [0.3, 0]; out = 2*0.3 - 0.05 = 0.55.
        let net = tiny();
        let y = net.forward(&[0.4]).unwrap();
        assert_relative_eq!(y[0], 0.55, epsilon = 1e-15);
    }

    #[test]
    fn dim_mismatch_is_rejected() {
        let net = tiny();
        assert!(matches!(net.forward(&[0.4, 0.1]), Err(NnError::DimMismatch { .. })));
        let trace = net.forward_trace(&[0.4]).unwrap();
        assert!(matches!(net.backward(&trace, &[1.0, 2.0]), Err(NnError::DimMismatch { .. })));
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        // One hidden unit with pre-activation exactly 0.
        let mut net = tiny();
        net.layers[0].w = vec![2.0, 1.0];
        net.layers[0].b = vec![-1.0, 0.0];
        let trace = net.forward_trace(&[0.5]).unwrap();
        assert_eq!(trace.pre[0][0], 0.0);
        let (g, dx) = net.backward(&trace, &[1.0]).unwrap();
        // No gradient flows through the dead unit.
        assert_eq!(g.dw[0][0], 0.0);
        assert_eq!(g.db[0][0], 0.0);
        // Input grad comes only from the second unit: 3.0 * 1.0.
        assert_relative_eq!(dx[0], 3.0, epsilon = 1e-15);
    }

    #[test]
    fn tanh_scaled_outputs_stay_strictly_interior() {
        let bounds = vec![15.0, 1.0];
        let mut net = Mlp::init(
            &[2, 8, 2],
            OutputActivation::TanhScaled(bounds.clone()),
            &mut seeding::rng(1, "b", 0),
        )
        .unwrap();
        // Blow up the output layer to saturate tanh.
        for p in net.layers[1].w.iter_mut() {
            *p = 1e6;
        }
        let y = net.forward(&[5.0, 5.0]).unwrap();
        for (v, b) in y.iter().zip(&bounds) {
            assert!(v.abs() < *b, "{v} not strictly inside {b}");
        }
    }

    /// Central finite differences on loss = upstream . forward(x).
    fn fd_check(net: &Mlp, x: &[f64], upstream: &[f64]) -> f64 {
        let trace = net.forward_trace(x).unwrap();
        let (grads, dx) = net.backward(&trace, upstream).unwrap();
        let loss = |n: &Mlp, xx: &[f64]| -> f64 {
            n.forward(xx).unwrap().iter().zip(upstream).map(|(a, b)| a * b).sum()
        };
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let mut probe = net.clone();
        let n_params = net.param_count();
        for i in 0..n_params {
            let analytic = *grads.values().nth(i).unwrap();
            {
                let p = probe.params_mut().nth(i).unwrap();
                *p += h;
            }
            let up = loss(&probe, x);
            {
                let p = probe.params_mut().nth(i).unwrap();
                *p -= 2.0 * h;
            }
            let down = loss(&probe, x);
            {
                let p = probe.params_mut().nth(i).unwrap();
                *p += h;
            }
            let fd = (up - down) / (2.0 * h);
            let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-4);
            worst = worst.max(rel);
        }
        let mut xx = x.to_vec();
        for i in 0..x.len() {
            xx[i] = x[i] + h;
            let up = loss(net, &xx);
            xx[i] = x[i] - h;
            let down = loss(net, &xx);
            xx[i] = x[i];
            let fd = (up - down) / (2.0 * h);
            let rel = (dx[i] - fd).abs() / dx[i].abs().max(fd.abs()).max(1e-4);
            worst = worst.max(rel);
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        use rand::Rng;
        for trial in 0..20 {
            let mut rng = seeding::rng(7, "fd", trial);
            let output = if trial % 2 == 0 {
                OutputActivation::Identity
            } else {
                OutputActivation::TanhScaled(vec![2.0, 3.0, 1.5])
            };
            let net = Mlp::init(&[4, 8, 6, 3], output, &mut rng).unwrap();
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let upstream: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let worst = fd_check(&net, &x, &upstream);
            assert!(worst < 1e-4, "trial {trial}: max relative error {worst}");
        }
    }

    #[test]
    fn adam_zero_gradient_is_a_fixed_point() {
        let mut net = tiny();
        let before = net.clone();
        let g = GradientBundle::zeros(&net);
        let mut st = AdamState::new(&net, AdamHyper::default());
        adam_update(&mut net, &g, &mut st).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        // With bias correction the first step magnitude is ~lr regardless of
        // gradient scale.
        let mut net = tiny();
        let w0 = net.layers[0].w[0];
        let mut g = GradientBundle::zeros(&net);
        g.dw[0][0] = 1234.5;
        let mut st = AdamState::new(&net, AdamHyper::default());
        adam_update(&mut net, &g, &mut st).unwrap();
        let step = net.layers[0].w[0] - w0;
        assert_relative_eq!(step, -3e-4, epsilon = 1e-9);
    }

    #[test]
    fn adam_descends_a_quadratic() {
        // loss = (w - 3)^2 on a 1-1 identity net with input 1, bias 0.
        let mut net = Mlp::init(&[1, 1], OutputActivation::Identity, &mut seeding::rng(3, "q", 0))
            .unwrap();
        net.layers[0].w[0] = 0.0;
        net.layers[0].b[0] = 0.0;
        let mut st = AdamState::new(&net, AdamHyper { lr: 0.05, ..AdamHyper::default() });
        let mut dx = Vec::new();
        let mut first = None;
        let mut last = 0.0;
        for step in 0..200 {
            let trace = net.forward_trace(&[1.0]).unwrap();
            let y = trace.output()[0];
            last = (y - 3.0) * (y - 3.0);
            if step == 0 {
                first = Some(last);
            } else if step == 1 {
                // The very first step must reduce the loss.
                assert!(last < first.unwrap());
            }
            let mut g = GradientBundle::zeros(&net);
            net.backward_into(&trace, &[2.0 * (y - 3.0)], &mut g, &mut dx).unwrap();
            // Freeze the bias so the problem stays 1-d.
            g.db[0][0] = 0.0;
            adam_update(&mut net, &g, &mut st).unwrap();
        }
        assert!(last < 1e-2, "final loss {last}");
    }

    #[test]
    fn polyak_blends_and_validates() {
        let mut rng = seeding::rng(5, "p", 0);
        let online = Mlp::init(&[2, 3, 1], OutputActivation::Identity, &mut rng).unwrap();
        let mut target = Mlp::init(&[2, 3, 1], OutputActivation::Identity, &mut rng).unwrap();
        let t0 = target.clone();
        polyak_update(&mut target, &online, 0.25).unwrap();
        for ((t, o), t_old) in target.params().zip(online.params()).zip(t0.params()) {
            assert_relative_eq!(*t, 0.25 * *o + 0.75 * *t_old, epsilon = 1e-15);
        }
        polyak_update(&mut target, &online, 1.0).unwrap();
        assert_eq!(target, online);
        assert!(matches!(polyak_update(&mut target, &online, 0.0), Err(NnError::BadTau(_))));
        let mut other = Mlp::init(&[2, 4, 1], OutputActivation::Identity, &mut rng).unwrap();
        assert!(matches!(
            polyak_update(&mut other, &online, 0.5),
            Err(NnError::ArchitectureMismatch)
        ));
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = Mlp::init(&[4, 16, 2], OutputActivation::Identity, &mut seeding::rng(9, "i", 0))
            .unwrap();
        let b = Mlp::init(&[4, 16, 2], OutputActivation::Identity, &mut seeding::rng(9, "i", 0))
            .unwrap();
        assert_eq!(a, b);
        // Final layer stays small.
        assert!(a.layers[1].w.iter().all(|w| w.abs() <= 3e-3));
    }

    #[test]
    fn checkpoint_round_trips_bitwise() {
        let mut rng = seeding::rng(11, "ck", 0);
        let net =
            Mlp::init(&[22, 64, 64, 3], OutputActivation::TanhScaled(vec![15.0, 15.0, 1.0]), &mut rng)
                .unwrap();
        let ck = Checkpoint {
            net,
            norm: Some((vec![0.5; 22], vec![2.0; 22])),
        };
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        let y1 = ck.net.forward(&vec![0.3; 22]).unwrap();
        let y2 = back.net.forward(&vec![0.3; 22]).unwrap();
        assert_eq!(y1[0].to_bits(), y2[0].to_bits());
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let net = tiny();
        let ck = Checkpoint { net, norm: None };
        let bytes = ck.to_bytes();
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad_magic), Err(NnError::Format(_))));
        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(Checkpoint::from_bytes(truncated), Err(NnError::Format(_))));
        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(matches!(Checkpoint::from_bytes(&trailing), Err(NnError::Format(_))));
    }
}
