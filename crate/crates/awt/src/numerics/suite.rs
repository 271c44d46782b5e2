//! The standard gradient verification suite: every differentiable building
//! block checked against central finite differences on small random shapes.
//!
//! Each entry builds a tiny fixed network around one operation, scalarizes
//! the output through a frozen random projection (or uses the op's own
//! scalar loss), runs one forward/backward pass, and hands the result to
//! [`grad_check`]. The whole suite is deterministic per seed and runs in
//! well under a minute.

use super::{
    affine, affine_backward, conv1d, conv1d_backward, conv1d_transpose,
    conv1d_transpose_backward, grad_check, gru_backward, gru_forward, l1_loss, lsgan_disc_grads,
    lsgan_gen_grads, softmax_xent, Activation, AffineParams, ConvParams, ConvSpec,
    GradCheckReport, GruParams, ParamBlock, SeqMask, Tensor3,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// How many parameter coordinates each entry probes.
const COORDS_PER_OP: usize = 48;

/// Central-difference step.
const DELTA: f64 = 1e-5;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn rand_tensor(rng: &mut ChaCha8Rng, b: usize, c: usize, l: usize) -> Tensor3 {
    Tensor3::from_vec(b, c, l, rand_vec(rng, b * c * l))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---- conv1d ----------------------------------------------------------

struct ConvNet {
    p: ConvParams,
    x: Tensor3,
    proj: Vec<f64>,
}

fn conv_blocks(n: &mut ConvNet) -> Vec<&mut ParamBlock> {
    Vec::from(n.p.blocks_mut())
}

fn check_conv(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = ConvSpec { c_in: 3, c_out: 4, kernel: 5, stride: 2, pad: 2 };
    let p = ConvParams::init("conv", spec, &mut rng);
    let x = rand_tensor(&mut rng, 2, 3, 11);
    let out_len = spec.out_len(11).unwrap();
    let proj = rand_vec(&mut rng, 2 * 4 * out_len);
    let mut net = ConvNet { p, x, proj };

    let grad_out = Tensor3::from_vec(2, 4, out_len, net.proj.clone());
    let _ = conv1d(&net.x, &net.p).unwrap();
    let _ = conv1d_backward(&net.x, &mut net.p, &grad_out);
    grad_check(
        &mut net,
        conv_blocks,
        |n| dot(&conv1d(&n.x, &n.p).unwrap().data, &n.proj),
        DELTA,
        COORDS_PER_OP,
        seed,
    )
}

// ---- conv1d_transpose ------------------------------------------------

fn check_conv_transpose(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = ConvSpec { c_in: 4, c_out: 3, kernel: 4, stride: 2, pad: 1 };
    let p = ConvParams::init_transpose("deconv", spec, &mut rng);
    let x = rand_tensor(&mut rng, 2, 4, 6);
    let out_len = spec.transpose_out_len(6).unwrap();
    let proj = rand_vec(&mut rng, 2 * 3 * out_len);
    let mut net = ConvNet { p, x, proj };

    let grad_out = Tensor3::from_vec(2, 3, out_len, net.proj.clone());
    let _ = conv1d_transpose(&net.x, &net.p).unwrap();
    let _ = conv1d_transpose_backward(&net.x, &mut net.p, &grad_out);
    grad_check(
        &mut net,
        conv_blocks,
        |n| dot(&conv1d_transpose(&n.x, &n.p).unwrap().data, &n.proj),
        DELTA,
        COORDS_PER_OP,
        seed,
    )
}

// ---- gru -------------------------------------------------------------

struct GruNet {
    p: GruParams,
    x: Tensor3,
    proj: Vec<f64>,
}

fn gru_blocks(n: &mut GruNet) -> Vec<&mut ParamBlock> {
    Vec::from(n.p.blocks_mut())
}

fn check_gru(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = GruParams::init("gru", 3, 4, &mut rng);
    let x = rand_tensor(&mut rng, 2, 3, 5);
    let proj = rand_vec(&mut rng, 2 * 4 * 5);
    let mut net = GruNet { p, x, proj };

    let (hseq, _, cache) = gru_forward(&net.x, &net.p, None).unwrap();
    let grad_hseq = Tensor3::from_vec(2, 4, 5, net.proj.clone());
    let _ = gru_backward(&mut net.p, &cache, &grad_hseq);
    let _ = hseq;
    grad_check(
        &mut net,
        gru_blocks,
        |n| dot(&gru_forward(&n.x, &n.p, None).unwrap().0.data, &n.proj),
        DELTA,
        COORDS_PER_OP,
        seed,
    )
}

// ---- affine + activation --------------------------------------------

struct AffineNet {
    p: AffineParams,
    x: Vec<f64>,
    proj: Vec<f64>,
}

fn affine_blocks(n: &mut AffineNet) -> Vec<&mut ParamBlock> {
    Vec::from(n.p.blocks_mut())
}

fn check_affine(seed: u64, act: Activation) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = AffineParams::init("affine", 6, 5, act, &mut rng);
    let x = rand_vec(&mut rng, 3 * 6);
    let proj = rand_vec(&mut rng, 3 * 5);
    let mut net = AffineNet { p, x, proj };

    let (_, cache) = affine(&net.x, 3, &net.p).unwrap();
    let _ = affine_backward(&mut net.p, &cache, &net.proj);
    grad_check(
        &mut net,
        affine_blocks,
        |n| dot(&affine(&n.x, 3, &n.p).unwrap().0, &n.proj),
        DELTA,
        COORDS_PER_OP,
        seed,
    )
}

// ---- softmax cross-entropy ------------------------------------------

struct XentNet {
    p: AffineParams,
    x: Vec<f64>,
    labels: Vec<usize>,
}

fn xent_blocks(n: &mut XentNet) -> Vec<&mut ParamBlock> {
    Vec::from(n.p.blocks_mut())
}

fn check_softmax_xent(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = AffineParams::init("logits", 6, 3, Activation::Linear, &mut rng);
    let x = rand_vec(&mut rng, 4 * 6);
    let labels = vec![0, 2, 1, 0];
    let mut net = XentNet { p, x, labels };

    let (logits, cache) = affine(&net.x, 4, &net.p).unwrap();
    let (_, grad_logits) = softmax_xent(&logits, 4, 3, &net.labels).unwrap();
    let _ = affine_backward(&mut net.p, &cache, &grad_logits);
    grad_check(
        &mut net,
        xent_blocks,
        |n| {
            let (logits, _) = affine(&n.x, 4, &n.p).unwrap();
            softmax_xent(&logits, 4, 3, &n.labels).unwrap().0
        },
        DELTA,
        COORDS_PER_OP,
        seed,
    )
}

// ---- masked L1 -------------------------------------------------------

struct L1Net {
    p: ConvParams,
    x: Tensor3,
    target: Tensor3,
    mask: SeqMask,
}

fn l1_blocks(n: &mut L1Net) -> Vec<&mut ParamBlock> {
    Vec::from(n.p.blocks_mut())
}

fn check_masked_l1(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = ConvSpec { c_in: 3, c_out: 3, kernel: 3, stride: 1, pad: 1 };
    let p = ConvParams::init("smooth", spec, &mut rng);
    let x = rand_tensor(&mut rng, 2, 3, 9);
    let target = rand_tensor(&mut rng, 2, 3, 9);
    let mask = SeqMask::from_lengths(&[9, 6], 9);
    let mut net = L1Net { p, x, target, mask };

    let out = conv1d(&net.x, &net.p).unwrap();
    let (_, grad_out) = l1_loss(&out, &net.target, &net.mask).unwrap();
    let _ = conv1d_backward(&net.x, &mut net.p, &grad_out);
    grad_check(
        &mut net,
        l1_blocks,
        |n| {
            let out = conv1d(&n.x, &n.p).unwrap();
            l1_loss(&out, &n.target, &n.mask).unwrap().0
        },
        DELTA,
        COORDS_PER_OP,
        seed,
    )
}

// ---- LSGAN through a discriminator stack ----------------------------

struct GanNet {
    l1: AffineParams,
    l2: AffineParams,
    l3: AffineParams,
    head: AffineParams,
    lat_i: Vec<f64>,
    lat_t: Vec<f64>,
    /// Real/fake targets (`false`) or swapped generator targets (`true`).
    gen_side: bool,
}

impl GanNet {
    fn new(seed: u64, gen_side: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GanNet {
            l1: AffineParams::init("d1", 5, 8, Activation::LeakyRelu, &mut rng),
            l2: AffineParams::init("d2", 8, 8, Activation::LeakyRelu, &mut rng),
            l3: AffineParams::init("d3", 8, 8, Activation::LeakyRelu, &mut rng),
            head: AffineParams::init("dh", 8, 4, Activation::Linear, &mut rng),
            lat_i: rand_vec(&mut rng, 3 * 5),
            lat_t: rand_vec(&mut rng, 3 * 5),
            gen_side,
        }
    }

    fn scores(&self, x: &[f64]) -> Vec<f64> {
        let (h1, _) = affine(x, 3, &self.l1).unwrap();
        let (h2, _) = affine(&h1, 3, &self.l2).unwrap();
        let (h3, _) = affine(&h2, 3, &self.l3).unwrap();
        affine(&h3, 3, &self.head).unwrap().0
    }

    fn loss(&self) -> f64 {
        let (si, st) = (self.scores(&self.lat_i), self.scores(&self.lat_t));
        if self.gen_side {
            lsgan_gen_grads(&si, &st).0
        } else {
            lsgan_disc_grads(&si, &st).0
        }
    }

    fn backward(&mut self) {
        // Forward both latent sets with caches, take the loss gradients for
        // each score vector, and backprop both sides into the shared stack.
        let mut passes = Vec::with_capacity(2);
        let mut score_sets = Vec::with_capacity(2);
        for x in [&self.lat_i, &self.lat_t] {
            let (h1, c1) = affine(x, 3, &self.l1).unwrap();
            let (h2, c2) = affine(&h1, 3, &self.l2).unwrap();
            let (h3, c3) = affine(&h2, 3, &self.l3).unwrap();
            let (scores, c4) = affine(&h3, 3, &self.head).unwrap();
            passes.push((c1, c2, c3, c4));
            score_sets.push(scores);
        }
        let (_, gi, gt) = if self.gen_side {
            lsgan_gen_grads(&score_sets[0], &score_sets[1])
        } else {
            lsgan_disc_grads(&score_sets[0], &score_sets[1])
        };
        for ((c1, c2, c3, c4), grad_scores) in passes.iter().zip([gi, gt]) {
            let g3 = affine_backward(&mut self.head, c4, &grad_scores);
            let g2 = affine_backward(&mut self.l3, c3, &g3);
            let g1 = affine_backward(&mut self.l2, c2, &g2);
            let _ = affine_backward(&mut self.l1, c1, &g1);
        }
    }
}

fn gan_blocks(n: &mut GanNet) -> Vec<&mut ParamBlock> {
    let mut v = Vec::from(n.l1.blocks_mut());
    v.extend(n.l2.blocks_mut());
    v.extend(n.l3.blocks_mut());
    v.extend(n.head.blocks_mut());
    v
}

fn check_lsgan(seed: u64, gen_side: bool) -> GradCheckReport {
    let mut net = GanNet::new(seed, gen_side);
    net.backward();
    grad_check(&mut net, gan_blocks, |n| n.loss(), DELTA, COORDS_PER_OP, seed)
}

/// Every operation must keep its worst finite-difference relative error
/// below this bound for the suite to count as passing.
pub const GRAD_TOLERANCE: f64 = 1e-4;

/// Runs every check and returns `(operation name, report)` pairs.
pub fn gradient_suite(seed: u64) -> Vec<(&'static str, GradCheckReport)> {
    vec![
        ("conv1d", check_conv(seed ^ 0x01)),
        ("conv1d_transpose", check_conv_transpose(seed ^ 0x02)),
        ("gru", check_gru(seed ^ 0x03)),
        ("affine_leaky_relu", check_affine(seed ^ 0x04, Activation::LeakyRelu)),
        ("affine_tanh", check_affine(seed ^ 0x05, Activation::Tanh)),
        ("softmax_xent", check_softmax_xent(seed ^ 0x06)),
        ("masked_l1", check_masked_l1(seed ^ 0x07)),
        ("lsgan_disc", check_lsgan(seed ^ 0x08, false)),
        ("lsgan_gen", check_lsgan(seed ^ 0x09, true)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_operation_passes_the_suite() {
        for (name, report) in gradient_suite(2024) {
            assert!(
                report.max_rel_err < GRAD_TOLERANCE,
                "{name}: rel err {} at {:?}",
                report.max_rel_err,
                report.worst
            );
            assert!(report.coords_checked > 0, "{name}: nothing checked");
        }
    }

    #[test]
    fn suite_is_deterministic() {
        let a = gradient_suite(7);
        let b = gradient_suite(7);
        for ((n1, r1), (n2, r2)) in a.iter().zip(b.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(r1.max_rel_err, r2.max_rel_err);
        }
    }
}
