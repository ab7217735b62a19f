//! Flat-parameter neural building blocks.
//!
//! All trainable parameters live in one `Vec<f64>`; modules hold [`Block`]
//! offsets into it. Gradients are accumulated into a second vector of the
//! same length, which keeps the optimizer, checkpointing, and
//! finite-difference checks trivial.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
#[allow(unused_imports)] // required by the no_std build; std test builds shadow it
use num_traits::Float;
use rand::Rng;

use crate::rng;

/// ln(2*pi), used by every Gaussian log-density.
pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// A named slice of the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slice<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.offset..self.offset + self.len()]
    }

    pub fn slice_mut<'a>(&self, params: &'a mut [f64]) -> &'a mut [f64] {
        &mut params[self.offset..self.offset + self.len()]
    }
}

/// Accumulates named blocks while a model is being laid out.
#[derive(Debug, Default)]
pub struct LayoutBuilder {
    next: usize,
    blocks: Vec<(String, Block)>,
}

impl LayoutBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Block {
        let block = Block { offset: self.next, rows, cols };
        self.next += block.len();
        self.blocks.push((name.to_string(), block));
        block
    }

    pub fn vector(&mut self, name: &str, len: usize) -> Block {
        self.matrix(name, len, 1)
    }

    pub fn scalar(&mut self, name: &str) -> Block {
        self.matrix(name, 1, 1)
    }

    pub fn finish(self) -> ParamLayout {
        ParamLayout { total: self.next, blocks: self.blocks }
    }
}

/// The full named layout of a model's parameter vector.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    pub total: usize,
    pub blocks: Vec<(String, Block)>,
}

impl ParamLayout {
    pub fn block(&self, name: &str) -> Option<Block> {
        self.blocks.iter().find(|(n, _)| n == name).map(|(_, b)| *b)
    }

    /// Indices of all parameters whose block name starts with `prefix`.
    pub fn indices_with_prefix(&self, prefix: &str) -> Vec<usize> {
        let mut out = Vec::new();
        for (name, block) in &self.blocks {
            if name.starts_with(prefix) {
                out.extend(block.offset..block.offset + block.len());
            }
        }
        out
    }
}

/// Xavier-style initialization: matrices uniform in `(-a, a)` with
/// `a = sqrt(6 / (rows + cols))`, bias vectors and scalars zero. Blend
/// coefficients (gamma) therefore start at zero, as required.
pub fn init_params(layout: &ParamLayout, seed: u64) -> Vec<f64> {
    let mut params = alloc::vec![0.0; layout.total];
    let mut rng = rng::seeded(seed);
    for (_, block) in &layout.blocks {
        if block.cols > 1 {
            let a = (6.0 / (block.rows + block.cols) as f64).sqrt();
            for v in block.slice_mut(&mut params) {
                *v = rng.gen_range(-a..a);
            }
        }
    }
    params
}

/// Uniform random parameters in `(-scale, scale)` for every entry, used by
/// property and gradient tests to probe nonzero blend coefficients too.
pub fn random_params(layout: &ParamLayout, seed: u64, scale: f64) -> Vec<f64> {
    let mut rng = rng::seeded(seed);
    (0..layout.total).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// Fully-connected layer `y = W x + b` over parameter blocks.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: Block,
    pub b: Block,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn define(lb: &mut LayoutBuilder, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let w = lb.matrix(&alloc::format!("{name}.w"), out_dim, in_dim);
        let b = lb.vector(&alloc::format!("{name}.b"), out_dim);
        Linear { w, b, in_dim, out_dim }
    }

    pub fn forward(&self, params: &[f64], x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(y.len(), self.out_dim);
        let w = self.w.slice(params);
        let b = self.b.slice(params);
        for o in 0..self.out_dim {
            let row = &w[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = b[o];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            y[o] = acc;
        }
    }

    /// Accumulate parameter gradients and the input gradient (`dx += W^T dy`).
    pub fn backward(&self, params: &[f64], x: &[f64], dy: &[f64], grad: &mut [f64], dx: &mut [f64]) {
        let w = self.w.slice(params);
        for o in 0..self.out_dim {
            let g = dy[o];
            grad[self.b.offset + o] += g;
            let wrow = &w[o * self.in_dim..(o + 1) * self.in_dim];
            let grow =
                &mut grad[self.w.offset + o * self.in_dim..self.w.offset + (o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += g * x[i];
                dx[i] += wrow[i] * g;
            }
        }
    }
}

/// Exponential linear unit, the smooth nonlinearity used throughout.
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// ELU derivative expressed through the activation output.
pub fn elu_grad_from_output(y: f64) -> f64 {
    if y > 0.0 {
        1.0
    } else {
        y + 1.0
    }
}

/// Two-layer perceptron with an ELU hidden layer and linear output.
#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
}

/// Forward activations needed to run the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub input: Vec<f64>,
    pub hidden: Vec<f64>,
}

impl Mlp {
    pub fn define(
        lb: &mut LayoutBuilder,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
    ) -> Self {
        let l1 = Linear::define(lb, &alloc::format!("{name}.l1"), in_dim, hidden);
        let l2 = Linear::define(lb, &alloc::format!("{name}.l2"), hidden, out_dim);
        Mlp { l1, l2 }
    }

    pub fn in_dim(&self) -> usize {
        self.l1.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.l2.out_dim
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> (Vec<f64>, MlpCache) {
        let mut hidden = alloc::vec![0.0; self.l1.out_dim];
        self.l1.forward(params, x, &mut hidden);
        for h in hidden.iter_mut() {
            *h = elu(*h);
        }
        let mut out = alloc::vec![0.0; self.l2.out_dim];
        self.l2.forward(params, &hidden, &mut out);
        (out, MlpCache { input: x.to_vec(), hidden })
    }

    /// Forward without keeping activations, for inference paths.
    pub fn infer(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        self.forward(params, x).0
    }

    pub fn backward(
        &self,
        params: &[f64],
        cache: &MlpCache,
        dout: &[f64],
        grad: &mut [f64],
        dx: &mut [f64],
    ) {
        let mut dhidden = alloc::vec![0.0; self.l1.out_dim];
        self.l2.backward(params, &cache.hidden, dout, grad, &mut dhidden);
        for (dh, &h) in dhidden.iter_mut().zip(&cache.hidden) {
            *dh *= elu_grad_from_output(h);
        }
        self.l1.backward(params, &cache.input, &dhidden, grad, dx);
    }
}

/// Numerically stable logistic function.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `ln(1 + exp(x))`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Log of the sum of exponentials with max subtraction.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// Normalized exponential over a logit slice.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&x| (x - m).exp()).collect();
    let s: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v /= s;
    }
    out
}
