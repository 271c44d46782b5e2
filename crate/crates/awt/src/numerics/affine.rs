//! Fully connected layer with an optional fused activation.

use super::{ParamBlock, LEAKY_SLOPE};
use crate::{Error, Result};

/// Activation fused into an affine layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    LeakyRelu,
    Tanh,
}

impl Activation {
    #[inline(always)]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Linear => v,
            Activation::LeakyRelu => {
                if v >= 0.0 {
                    v
                } else {
                    LEAKY_SLOPE * v
                }
            }
            Activation::Tanh => v.tanh(),
        }
    }

    /// Derivative in terms of the pre-activation value.
    #[inline(always)]
    fn d(self, pre: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::LeakyRelu => {
                if pre >= 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Weights of one affine layer: `y = act(W x + b)`, `W` of shape `(out, in)`.
#[derive(Debug, Clone)]
pub struct AffineParams {
    pub w: ParamBlock,
    pub b: ParamBlock,
    pub act: Activation,
    pub input: usize,
    pub output: usize,
}

impl AffineParams {
    pub fn init(
        name: &str,
        input: usize,
        output: usize,
        act: Activation,
        rng: &mut impl rand::Rng,
    ) -> Self {
        AffineParams {
            w: ParamBlock::uniform(&format!("{name}.w"), &[output, input], input, rng),
            b: ParamBlock::zeros(&format!("{name}.b"), &[output]),
            act,
            input,
            output,
        }
    }

    pub fn blocks_mut(&mut self) -> [&mut ParamBlock; 2] {
        [&mut self.w, &mut self.b]
    }
}

/// Forward cache: the input and the pre-activation values.
#[derive(Debug, Clone)]
pub struct AffineCache {
    x: Vec<f64>,
    pre: Vec<f64>,
    bsz: usize,
}

/// Applies the layer to a row-major `(bsz, input)` matrix, returning
/// `(bsz, output)` activations and the backward cache.
pub fn affine(x: &[f64], bsz: usize, p: &AffineParams) -> Result<(Vec<f64>, AffineCache)> {
    let (n_in, n_out) = (p.input, p.output);
    if x.len() != bsz * n_in {
        return Err(Error::Shape(format!(
            "affine expects {bsz}x{n_in} input, got {} values",
            x.len()
        )));
    }
    let mut pre = vec![0.0; bsz * n_out];
    for bi in 0..bsz {
        let xb = &x[bi * n_in..(bi + 1) * n_in];
        let ob = &mut pre[bi * n_out..(bi + 1) * n_out];
        for (j, oj) in ob.iter_mut().enumerate() {
            let wr = &p.w.w[j * n_in..(j + 1) * n_in];
            let mut acc = p.b.w[j];
            for (wv, xv) in wr.iter().zip(xb) {
                acc += wv * xv;
            }
            *oj = acc;
        }
    }
    let out = pre.iter().map(|&v| p.act.apply(v)).collect();
    Ok((
        out,
        AffineCache {
            x: x.to_vec(),
            pre,
            bsz,
        },
    ))
}

/// Backward of [`affine`]; accumulates parameter gradients and returns the
/// gradient with respect to the input.
pub fn affine_backward(p: &mut AffineParams, cache: &AffineCache, grad_out: &[f64]) -> Vec<f64> {
    let (n_in, n_out, bsz) = (p.input, p.output, cache.bsz);
    assert_eq!(grad_out.len(), bsz * n_out);

    // Push the gradient through the activation first.
    let dpre: Vec<f64> = grad_out
        .iter()
        .zip(&cache.pre)
        .map(|(&g, &a)| g * p.act.d(a))
        .collect();

    let mut grad_x = vec![0.0; bsz * n_in];
    for bi in 0..bsz {
        let db = &dpre[bi * n_out..(bi + 1) * n_out];
        let xb = &cache.x[bi * n_in..(bi + 1) * n_in];
        let gxb = &mut grad_x[bi * n_in..(bi + 1) * n_in];
        for (j, &dj) in db.iter().enumerate() {
            if dj == 0.0 {
                continue;
            }
            let wr = &p.w.w[j * n_in..(j + 1) * n_in];
            let gwr = &mut p.w.g[j * n_in..(j + 1) * n_in];
            for i in 0..n_in {
                gxb[i] += wr[i] * dj;
                gwr[i] += dj * xb[i];
            }
            p.b.g[j] += dj;
        }
    }
    grad_x
}
