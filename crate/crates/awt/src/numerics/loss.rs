//! Training losses: softmax cross-entropy, masked mean absolute error, and
//! the least-squares adversarial pair.

use super::{SeqMask, Tensor3};
use crate::{Error, Result};

/// Row-wise softmax of a `(bsz, k)` logit matrix (max-shifted for stability).
pub fn softmax_probs(logits: &[f64], bsz: usize, k: usize) -> Vec<f64> {
    assert_eq!(logits.len(), bsz * k);
    let mut probs = vec![0.0; bsz * k];
    for bi in 0..bsz {
        let row = &logits[bi * k..(bi + 1) * k];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let out = &mut probs[bi * k..(bi + 1) * k];
        let mut z = 0.0;
        for (o, &v) in out.iter_mut().zip(row) {
            *o = (v - mx).exp();
            z += *o;
        }
        out.iter_mut().for_each(|o| *o /= z);
    }
    probs
}

/// Mean softmax cross-entropy over a batch of `(bsz, k)` logits with integer
/// labels. Returns the loss and its gradient `(softmax - onehot)/bsz`.
pub fn softmax_xent(
    logits: &[f64],
    bsz: usize,
    k: usize,
    labels: &[usize],
) -> Result<(f64, Vec<f64>)> {
    if logits.len() != bsz * k || labels.len() != bsz {
        return Err(Error::Shape(format!(
            "cross-entropy: {} logits / {} labels for bsz={bsz}, k={k}",
            logits.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Data(format!("label {bad} out of range (k={k})")));
    }
    let mut grad = softmax_probs(logits, bsz, k);
    let mut loss = 0.0;
    let inv_b = 1.0 / bsz as f64;
    for (bi, &y) in labels.iter().enumerate() {
        let p = grad[bi * k + y];
        // Clamp only the log argument; the gradient stays exact.
        loss -= p.max(1e-300).ln();
        grad[bi * k + y] -= 1.0;
    }
    grad.iter_mut().for_each(|g| *g *= inv_b);
    Ok((loss * inv_b, grad))
}

/// Mean absolute error over the valid positions of two `(B, C, L)` tensors.
/// The mean runs over every valid `(element, channel, timestep)` entry.
/// Returns the loss and its (sub)gradient with respect to `a`, zero at ties
/// and on padding.
pub fn l1_loss(a: &Tensor3, b: &Tensor3, mask: &SeqMask) -> Result<(f64, Tensor3)> {
    if a.b != b.b || a.c != b.c || a.l != b.l {
        return Err(Error::Shape(format!(
            "l1 operands ({},{},{}) vs ({},{},{})",
            a.b, a.c, a.l, b.b, b.c, b.l
        )));
    }
    if mask.b != a.b || mask.l != a.l {
        return Err(Error::Shape("l1 mask does not match operands".into()));
    }
    let n = mask.count() * a.c;
    if n == 0 {
        return Err(Error::Shape("l1 over an entirely masked batch".into()));
    }
    let inv_n = 1.0 / n as f64;
    let mut grad = Tensor3::zeros(a.b, a.c, a.l);
    let mut loss = 0.0;
    for bi in 0..a.b {
        for ci in 0..a.c {
            for t in 0..a.l {
                if !mask.at(bi, t) {
                    continue;
                }
                let d = a.at(bi, ci, t) - b.at(bi, ci, t);
                loss += d.abs();
                if d != 0.0 {
                    *grad.at_mut(bi, ci, t) = d.signum() * inv_n;
                }
            }
        }
    }
    Ok((loss * inv_n, grad))
}

/// Least-squares adversarial losses from discriminator scores on encodings of
/// real inertial (`scores_i`) and real trajectory (`scores_t`) batches. The
/// discriminator pushes inertial scores to 1 and trajectory scores to 0; the
/// generator (the encoders) gets the swapped targets. Means run over every
/// score entry.
pub fn lsgan_losses(scores_i: &[f64], scores_t: &[f64]) -> (f64, f64) {
    let d = mean_sq_dist(scores_i, 1.0) + mean_sq_dist(scores_t, 0.0);
    let g = mean_sq_dist(scores_i, 0.0) + mean_sq_dist(scores_t, 1.0);
    (d, g)
}

/// Discriminator-side loss and score gradients.
pub fn lsgan_disc_grads(scores_i: &[f64], scores_t: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let (d, _) = lsgan_losses(scores_i, scores_t);
    (d, sq_dist_grad(scores_i, 1.0), sq_dist_grad(scores_t, 0.0))
}

/// Generator-side loss and score gradients (targets swapped).
pub fn lsgan_gen_grads(scores_i: &[f64], scores_t: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let (_, g) = lsgan_losses(scores_i, scores_t);
    (g, sq_dist_grad(scores_i, 0.0), sq_dist_grad(scores_t, 1.0))
}

fn mean_sq_dist(scores: &[f64], target: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().map(|&s| (s - target) * (s - target)).sum::<f64>() / scores.len() as f64
}

fn sq_dist_grad(scores: &[f64], target: f64) -> Vec<f64> {
    let inv = 2.0 / scores.len().max(1) as f64;
    scores.iter().map(|&s| inv * (s - target)).collect()
}
