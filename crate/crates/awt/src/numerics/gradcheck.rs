//! Central-difference verification of analytic gradients.

use super::ParamBlock;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Outcome of a gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst relative error over the sampled coordinates, with denominator
    /// `max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_err: f64,
    pub coords_checked: usize,
    /// `(block name, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Compares the gradients currently stored in the owner's parameter blocks
/// against central finite differences of `loss`.
///
/// Contract: the caller has already run one forward/backward pass so each
/// block's `g` holds the analytic gradient of exactly the scalar that `loss`
/// recomputes, and `loss` is deterministic (any sampling inside it must be
/// frozen). `blocks` re-borrows the same blocks in the same order on every
/// call; weights are restored bit-exactly before returning.
///
/// At least `min_coords` coordinates are probed (all of them if the model is
/// smaller), sampled without replacement from the concatenated blocks.
pub fn grad_check<P, B, F>(
    owner: &mut P,
    mut blocks: B,
    mut loss: F,
    delta: f64,
    min_coords: usize,
    seed: u64,
) -> GradCheckReport
where
    B: for<'a> FnMut(&'a mut P) -> Vec<&'a mut ParamBlock>,
    F: FnMut(&P) -> f64,
{
    let (names, grads): (Vec<String>, Vec<Vec<f64>>) = {
        let bs = blocks(owner);
        (
            bs.iter().map(|b| b.name.clone()).collect(),
            bs.iter().map(|b| b.g.clone()).collect(),
        )
    };
    let sizes: Vec<usize> = grads.iter().map(|g| g.len()).collect();
    let total: usize = sizes.iter().sum();

    // Sample coordinates without replacement via a partial Fisher-Yates pass.
    let mut order: Vec<usize> = (0..total).collect();
    let take = min_coords.min(total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..take {
        let j = rng.random_range(i..total);
        order.swap(i, j);
    }

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        coords_checked: take,
        worst: None,
    };
    for &flat in order.iter().take(take) {
        // Locate the coordinate inside the block list.
        let mut bi = 0;
        let mut ci = flat;
        while ci >= sizes[bi] {
            ci -= sizes[bi];
            bi += 1;
        }
        let orig = {
            let mut bs = blocks(owner);
            let v = bs[bi].w[ci];
            bs[bi].w[ci] = v + delta;
            v
        };
        let f_plus = loss(owner);
        {
            let mut bs = blocks(owner);
            bs[bi].w[ci] = orig - delta;
        }
        let f_minus = loss(owner);
        {
            let mut bs = blocks(owner);
            bs[bi].w[ci] = orig;
        }
        let numeric = (f_plus - f_minus) / (2.0 * delta);
        let analytic = grads[bi][ci];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst = Some((names[bi].clone(), ci, analytic, numeric));
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{affine, affine_backward, softmax_xent, Activation, AffineParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct TinyNet {
        l1: AffineParams,
        l2: AffineParams,
        x: Vec<f64>,
        labels: Vec<usize>,
    }

    impl TinyNet {
        fn new(seed: u64) -> Self {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let l1 = AffineParams::init("l1", 4, 6, Activation::Tanh, &mut rng);
            let l2 = AffineParams::init("l2", 6, 3, Activation::Linear, &mut rng);
            let x: Vec<f64> = (0..2 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
            TinyNet {
                l1,
                l2,
                x,
                labels: vec![2, 0],
            }
        }

        fn loss(&self) -> f64 {
            let (h, _) = affine(&self.x, 2, &self.l1).unwrap();
            let (y, _) = affine(&h, 2, &self.l2).unwrap();
            softmax_xent(&y, 2, 3, &self.labels).unwrap().0
        }

        fn backward(&mut self) {
            let (h, c1) = affine(&self.x, 2, &self.l1).unwrap();
            let (y, c2) = affine(&h, 2, &self.l2).unwrap();
            let (_, gy) = softmax_xent(&y, 2, 3, &self.labels).unwrap();
            let gh = affine_backward(&mut self.l2, &c2, &gy);
            affine_backward(&mut self.l1, &c1, &gh);
        }
    }

    fn tiny_blocks(n: &mut TinyNet) -> Vec<&mut ParamBlock> {
        let mut v = Vec::from(n.l1.blocks_mut());
        v.extend(n.l2.blocks_mut());
        v
    }

    #[test]
    fn passes_on_correct_gradients() {
        let mut net = TinyNet::new(3);
        net.backward();
        // 10_000 requested coordinates covers every one of this tiny model.
        let report = grad_check(&mut net, tiny_blocks, |n| n.loss(), 1e-5, 10_000, 42);
        assert_eq!(report.coords_checked, 4 * 6 + 6 + 6 * 3 + 3);
        assert!(
            report.max_rel_err < 1e-7,
            "unexpected error {:?}",
            report.worst
        );
    }

    /// Negative control: a corrupted analytic gradient must be flagged.
    #[test]
    fn detects_wrong_gradient() {
        let mut net = TinyNet::new(3);
        net.backward();
        // Double the largest stored gradient entry; the checker should see
        // roughly 50% relative error there.
        let idx = net
            .l1
            .w
            .g
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .unwrap();
        net.l1.w.g[idx] *= 2.0;
        let report = grad_check(&mut net, tiny_blocks, |n| n.loss(), 1e-5, 10_000, 42);
        assert!(report.max_rel_err > 0.3, "missed corruption: {report:?}");
    }

    /// Weights are restored exactly, so two runs agree bit-for-bit.
    #[test]
    fn restores_weights_exactly() {
        let mut net = TinyNet::new(5);
        net.backward();
        let w1 = net.l1.w.clone();
        let w2 = net.l2.w.clone();
        let r1 = grad_check(&mut net, tiny_blocks, |n| n.loss(), 1e-5, 20, 7);
        assert_eq!(net.l1.w.w, w1.w);
        assert_eq!(net.l2.w.w, w2.w);
        let r2 = grad_check(&mut net, tiny_blocks, |n| n.loss(), 1e-5, 20, 7);
        assert_eq!(r1.max_rel_err, r2.max_rel_err);
    }
}
