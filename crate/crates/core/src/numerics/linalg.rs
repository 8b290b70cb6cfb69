//! Parameter and gradient containers plus the affine+ReLU layer and
//! softmax primitives.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::NumericsError;

/// One dense layer's parameters: `out_dim x in_dim` row-major weights and
/// an `out_dim` bias. Shapes are fixed at creation.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    pub name: String,
    pub out_dim: usize,
    pub in_dim: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ParamBlock {
    pub fn zeros(name: &str, out_dim: usize, in_dim: usize) -> ParamBlock {
        ParamBlock {
            name: name.to_string(),
            out_dim,
            in_dim,
            weights: vec![0.0; out_dim * in_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Weight initialization for a fresh block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    /// Weights uniform in +-1/sqrt(fan_in), bias zero.
    UniformFanIn,
    /// Everything zero; used for output heads so the initial policy is
    /// exactly uniform.
    Zero,
}

/// Creates a block, drawing weights row-major then bias so the layout is
/// reproducible from the rng state alone.
pub fn init_param_block(
    name: &str,
    out_dim: usize,
    in_dim: usize,
    init: InitKind,
    rng: &mut ChaCha8Rng,
) -> ParamBlock {
    let mut block = ParamBlock::zeros(name, out_dim, in_dim);
    if init == InitKind::UniformFanIn {
        let bound = 1.0 / (in_dim as f32).sqrt();
        for w in &mut block.weights {
            *w = rng.random_range(-bound..bound);
        }
    }
    block
}

/// Gradient accumulator shaped like one [`ParamBlock`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradBlock {
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl GradBlock {
    pub fn zeros_like(block: &ParamBlock) -> GradBlock {
        GradBlock {
            weights: vec![0.0; block.weights.len()],
            bias: vec![0.0; block.bias.len()],
        }
    }

    pub fn zero(&mut self) {
        self.weights.fill(0.0);
        self.bias.fill(0.0);
    }

    /// Squared Euclidean norm accumulated in f64, for global-norm clipping.
    pub fn sq_norm(&self) -> f64 {
        self.weights
            .iter()
            .chain(&self.bias)
            .map(|g| (*g as f64).powi(2))
            .sum()
    }

    pub fn scale(&mut self, factor: f32) {
        for g in self.weights.iter_mut().chain(&mut self.bias) {
            *g *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|g| g.is_finite())
    }
}

/// Values a forward pass must retain for the matching backward pass.
#[derive(Debug, Clone)]
pub struct AffineCache {
    pub input: Vec<f32>,
    pub pre_activation: Vec<f32>,
}

impl AffineCache {
    pub fn empty() -> AffineCache {
        AffineCache {
            input: Vec::new(),
            pre_activation: Vec::new(),
        }
    }
}

/// Computes `ReLU(W x + b)`, or `W x + b` when `final_layer`, returning
/// the output and the cache for [`affine_relu_backward`].
pub fn affine_relu_forward(
    block: &ParamBlock,
    input: &[f32],
    final_layer: bool,
) -> Result<(Vec<f32>, AffineCache), NumericsError> {
    if input.len() != block.in_dim {
        return Err(NumericsError::DimMismatch {
            op: "affine_relu_forward",
            expected: block.in_dim,
            got: input.len(),
        });
    }
    let mut pre = vec![0.0f32; block.out_dim];
    for o in 0..block.out_dim {
        let row = &block.weights[o * block.in_dim..(o + 1) * block.in_dim];
        let mut acc = block.bias[o];
        for (w, x) in row.iter().zip(input) {
            acc += w * x;
        }
        pre[o] = acc;
    }
    let output = if final_layer {
        pre.clone()
    } else {
        pre.iter().map(|v| v.max(0.0)).collect()
    };
    Ok((
        output,
        AffineCache {
            input: input.to_vec(),
            pre_activation: pre,
        },
    ))
}

/// Backpropagates `upstream = dL/d output` through the layer, adding the
/// weight and bias gradients into `grad` and returning `dL/d input`. The
/// ReLU subgradient at exactly zero is zero.
pub fn affine_relu_backward(
    block: &ParamBlock,
    cache: &AffineCache,
    upstream: &[f32],
    final_layer: bool,
    grad: &mut GradBlock,
) -> Result<Vec<f32>, NumericsError> {
    if upstream.len() != block.out_dim {
        return Err(NumericsError::DimMismatch {
            op: "affine_relu_backward",
            expected: block.out_dim,
            got: upstream.len(),
        });
    }
    if cache.input.len() != block.in_dim {
        return Err(NumericsError::DimMismatch {
            op: "affine_relu_backward cache",
            expected: block.in_dim,
            got: cache.input.len(),
        });
    }
    let mut dinput = vec![0.0f32; block.in_dim];
    for o in 0..block.out_dim {
        let mut up = upstream[o];
        if !final_layer && cache.pre_activation[o] <= 0.0 {
            up = 0.0;
        }
        if up == 0.0 {
            continue;
        }
        grad.bias[o] += up;
        let row = &block.weights[o * block.in_dim..(o + 1) * block.in_dim];
        let grow = &mut grad.weights[o * block.in_dim..(o + 1) * block.in_dim];
        for i in 0..block.in_dim {
            grow[i] += up * cache.input[i];
            dinput[i] += up * row[i];
        }
    }
    Ok(dinput)
}

/// Numerically stable softmax: exponentials of max-subtracted logits,
/// accumulated in f64. The last entry is closed to make the f32 sum
/// exactly one whenever rounding allows.
pub fn softmax(logits: &[f32]) -> Vec<f32> {
    assert!(!logits.is_empty(), "softmax of empty logits");
    let max = logits.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = logits.iter().map(|&z| ((z - max) as f64).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let mut probs: Vec<f32> = exps.iter().map(|e| (e / sum) as f32).collect();
    let n = probs.len();
    let head: f32 = probs[..n - 1].iter().sum();
    probs[n - 1] = (1.0 - head).max(0.0);
    probs
}
