//! Single-layer GRU with full backpropagation through time.
//!
//! Gate convention, for input `x_t` and previous state `h`:
//!
//! ```text
//! z = sigmoid(Wz x_t + Uz h + bz)        (update)
//! r = sigmoid(Wr x_t + Ur h + br)        (reset)
//! n = tanh(Wn x_t + Un (r*h) + bn)       (candidate)
//! h' = (1 - z)*h + z*n
//! ```
//!
//! With all-zero parameters, `z = 1/2` and `n = 0`, so the state halves each
//! step — a useful analytic fixture. Gate rows are stacked `[z, r, n]` in the
//! `(3H, ·)` weight blocks.

use super::{ParamBlock, Tensor3};
use crate::{Error, Result};
use rayon::prelude::*;

/// Parameters of one GRU layer.
#[derive(Debug, Clone)]
pub struct GruParams {
    /// Input weights, shape `(3H, C)`.
    pub wx: ParamBlock,
    /// Recurrent weights, shape `(3H, H)`.
    pub wh: ParamBlock,
    /// Gate biases, shape `(3H)`.
    pub b: ParamBlock,
    pub input: usize,
    pub hidden: usize,
}

impl GruParams {
    pub fn init(name: &str, input: usize, hidden: usize, rng: &mut impl rand::Rng) -> Self {
        GruParams {
            wx: ParamBlock::uniform(&format!("{name}.wx"), &[3 * hidden, input], input, rng),
            wh: ParamBlock::uniform(&format!("{name}.wh"), &[3 * hidden, hidden], hidden, rng),
            b: ParamBlock::zeros(&format!("{name}.b"), &[3 * hidden]),
            input,
            hidden,
        }
    }

    pub fn blocks_mut(&mut self) -> [&mut ParamBlock; 3] {
        [&mut self.wx, &mut self.wh, &mut self.b]
    }
}

/// Everything the backward pass needs from a forward run.
#[derive(Debug)]
pub struct GruCache {
    x: Tensor3,
    h0: Vec<f64>,
    /// Hidden states `h_1..h_T`, shape `(B, H, T)`.
    hseq: Tensor3,
    /// Post-activation gates `[z, r, n]` per step, layout `(B, 3H, T)`.
    gates: Vec<f64>,
}

impl GruCache {
    #[inline(always)]
    fn gate(&self, bi: usize, j: usize, t: usize, h3: usize, l: usize) -> f64 {
        self.gates[(bi * h3 + j) * l + t]
    }
}

/// Runs the GRU over `(B, C, T)` input from initial state `h0` (zeros if
/// `None`), returning the hidden sequence `(B, H, T)`, the final state
/// `(B, H)`, and the backward cache. `T = 0` yields an empty sequence and
/// `h0` as the final state.
pub fn gru_forward(
    x: &Tensor3,
    p: &GruParams,
    h0: Option<&[f64]>,
) -> Result<(Tensor3, Vec<f64>, GruCache)> {
    let (bsz, h, c, t_len) = (x.b, p.hidden, p.input, x.l);
    if x.c != c {
        return Err(Error::Shape(format!(
            "gru expects {c} input channels, got {}",
            x.c
        )));
    }
    let h0 = match h0 {
        Some(v) => {
            if v.len() != bsz * h {
                return Err(Error::Shape("gru initial state size mismatch".into()));
            }
            v.to_vec()
        }
        None => vec![0.0; bsz * h],
    };

    let mut hseq = Tensor3::zeros(bsz, h, t_len);
    let mut gates = vec![0.0; bsz * 3 * h * t_len];
    let mut state = h0.clone();

    for t in 0..t_len {
        // Each batch element advances independently; rows of `state`, `hseq`,
        // and `gates` are disjoint per element.
        state
            .par_chunks_mut(h)
            .enumerate()
            .zip_eq(hseq.data.par_chunks_mut(h * t_len))
            .zip_eq(gates.par_chunks_mut(3 * h * t_len))
            .for_each(|(((bi, hb), hs), gb)| {
                let mut xt = vec![0.0; c];
                for ci in 0..c {
                    xt[ci] = x.data[(bi * c + ci) * t_len + t];
                }
                let mut z = vec![0.0; h];
                let mut r = vec![0.0; h];
                for j in 0..h {
                    let az = p.b.w[j]
                        + dot(&p.wx.w[j * c..(j + 1) * c], &xt)
                        + dot(&p.wh.w[j * h..(j + 1) * h], hb);
                    z[j] = sigmoid(az);
                    let jr = h + j;
                    let ar = p.b.w[jr]
                        + dot(&p.wx.w[jr * c..(jr + 1) * c], &xt)
                        + dot(&p.wh.w[jr * h..(jr + 1) * h], hb);
                    r[j] = sigmoid(ar);
                }
                let rh: Vec<f64> = r.iter().zip(hb.iter()).map(|(rj, hj)| rj * hj).collect();
                for j in 0..h {
                    let jn = 2 * h + j;
                    let an = p.b.w[jn]
                        + dot(&p.wx.w[jn * c..(jn + 1) * c], &xt)
                        + dot(&p.wh.w[jn * h..(jn + 1) * h], &rh);
                    let n = an.tanh();
                    let hj = (1.0 - z[j]) * hb[j] + z[j] * n;
                    gb[j * t_len + t] = z[j];
                    gb[(h + j) * t_len + t] = r[j];
                    gb[(2 * h + j) * t_len + t] = n;
                    hb[j] = hj;
                    hs[j * t_len + t] = hj;
                }
            });
    }

    let cache = GruCache {
        x: x.clone(),
        h0,
        hseq: hseq.clone(),
        gates,
    };
    Ok((hseq, state, cache))
}

/// Backpropagation through time. `grad_hseq` holds the loss gradient with
/// respect to every hidden state `(B, H, T)` (fold any extra gradient on the
/// final state into its last column). Accumulates parameter gradients and
/// returns the gradient with respect to the input `(B, C, T)`.
pub fn gru_backward(p: &mut GruParams, cache: &GruCache, grad_hseq: &Tensor3) -> Tensor3 {
    let (bsz, h, c, t_len) = (cache.x.b, p.hidden, p.input, cache.x.l);
    assert_eq!(grad_hseq.b, bsz);
    assert_eq!(grad_hseq.c, h);
    assert_eq!(grad_hseq.l, t_len);
    let h3 = 3 * h;

    let mut grad_x = Tensor3::zeros(bsz, c, t_len);
    // Pre-activation gate gradients, one (T, 3H) buffer per batch element,
    // filled walking time backwards and contracted into weight gradients
    // afterwards. The recurrent sweep is independent per element.
    let mut da = vec![vec![0.0; t_len * h3]; bsz];

    grad_x
        .data
        .par_chunks_mut(c * t_len)
        .zip_eq(da.par_iter_mut())
        .enumerate()
        .for_each(|(bi, (gx, dab))| {
            let mut dh = vec![0.0; h]; // gradient flowing into h_t
            let mut hp = vec![0.0; h];
            for t in (0..t_len).rev() {
                for j in 0..h {
                    dh[j] += grad_hseq.at(bi, j, t);
                }
                for j in 0..h {
                    hp[j] = if t == 0 {
                        cache.h0[bi * h + j]
                    } else {
                        cache.hseq.at(bi, j, t - 1)
                    };
                }
                let row = &mut dab[t * h3..(t + 1) * h3];
                let mut drh = vec![0.0; h];
                let mut dh_next = vec![0.0; h];
                for j in 0..h {
                    let z = cache.gate(bi, j, t, h3, t_len);
                    let n = cache.gate(bi, 2 * h + j, t, h3, t_len);
                    let dn = dh[j] * z;
                    let dz = dh[j] * (n - hp[j]);
                    row[2 * h + j] = dn * (1.0 - n * n); // d an
                    row[j] = dz * z * (1.0 - z); // d az
                    dh_next[j] = dh[j] * (1.0 - z);
                }
                // d(r*h) = Un^T dan ; then split into dr and the h path.
                for j in 0..h {
                    let mut acc = 0.0;
                    for jj in 0..h {
                        acc += p.wh.w[(2 * h + jj) * h + j] * row[2 * h + jj];
                    }
                    drh[j] = acc;
                }
                for j in 0..h {
                    let r = cache.gate(bi, h + j, t, h3, t_len);
                    let dr = drh[j] * hp[j];
                    row[h + j] = dr * r * (1.0 - r); // d ar
                    dh_next[j] += drh[j] * r;
                }
                // Recurrent terms through Uz and Ur.
                for j in 0..h {
                    let mut acc = 0.0;
                    for jj in 0..h {
                        acc += p.wh.w[jj * h + j] * row[jj];
                        acc += p.wh.w[(h + jj) * h + j] * row[h + jj];
                    }
                    dh_next[j] += acc;
                }
                // Input gradient: Wx^T over all three gate rows.
                for ci in 0..c {
                    let mut acc = 0.0;
                    for jj in 0..h3 {
                        acc += p.wx.w[jj * c + ci] * row[jj];
                    }
                    gx[ci * t_len + t] = acc;
                }
                dh.copy_from_slice(&dh_next);
            }
        });

    // Contract da into weight gradients; parallel over disjoint gate rows,
    // fixed (t, b) order inside each row keeps sums thread-count independent.
    p.wx.g.par_chunks_mut(c).enumerate().for_each(|(j, gw)| {
        for t in 0..t_len {
            for (bi, dab) in da.iter().enumerate() {
                let a = dab[t * h3 + j];
                if a != 0.0 {
                    for ci in 0..c {
                        gw[ci] += a * cache.x.at(bi, ci, t);
                    }
                }
            }
        }
    });
    p.wh.g.par_chunks_mut(h).enumerate().for_each(|(j, gw)| {
        let candidate_row = j >= 2 * h;
        for t in 0..t_len {
            for (bi, dab) in da.iter().enumerate() {
                let a = dab[t * h3 + j];
                if a == 0.0 {
                    continue;
                }
                for hj in 0..h {
                    let hp = if t == 0 {
                        cache.h0[bi * h + hj]
                    } else {
                        cache.hseq.at(bi, hj, t - 1)
                    };
                    // Candidate rows see the reset-gated state, not h itself.
                    let v = if candidate_row {
                        cache.gate(bi, h + hj, t, h3, t_len) * hp
                    } else {
                        hp
                    };
                    gw[hj] += a * v;
                }
            }
        }
    });
    for j in 0..h3 {
        let mut acc = 0.0;
        for t in 0..t_len {
            for dab in da.iter() {
                acc += dab[t * h3 + j];
            }
        }
        p.b.g[j] += acc;
    }

    grad_x
}

#[inline(always)]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline(always)]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn zero_gru(c: usize, h: usize) -> GruParams {
        GruParams {
            wx: ParamBlock::zeros("wx", &[3 * h, c]),
            wh: ParamBlock::zeros("wh", &[3 * h, h]),
            b: ParamBlock::zeros("b", &[3 * h]),
            input: c,
            hidden: h,
        }
    }

    /// All-zero parameters halve the state every step: `h_t = 0.5^t h_0`.
    #[test]
    fn zero_parameters_halve_state() {
        let p = zero_gru(2, 3);
        let x = Tensor3::zeros(1, 2, 4);
        let h0 = vec![1.0, -2.0, 0.5];
        let (hseq, last, _) = gru_forward(&x, &p, Some(&h0)).unwrap();
        for t in 0..4 {
            let f = 0.5f64.powi(t as i32 + 1);
            for j in 0..3 {
                assert!((hseq.at(0, j, t) - f * h0[j]).abs() < 1e-15);
            }
        }
        assert!((last[0] - 0.0625).abs() < 1e-15);
    }

    /// Scalar GRU against an explicit step-by-step recomputation.
    #[test]
    fn scalar_gru_matches_hand_recurrence() {
        let mut p = zero_gru(1, 1);
        let (wz, wr, wn) = (0.7, -0.3, 1.1);
        let (uz, ur, un) = (0.2, 0.5, -0.4);
        let (bz, br, bn) = (0.1, -0.2, 0.05);
        p.wx.w = vec![wz, wr, wn];
        p.wh.w = vec![uz, ur, un];
        p.b.w = vec![bz, br, bn];
        let xs = [0.3, -1.2, 0.8];
        let x = Tensor3::from_vec(1, 1, 3, xs.to_vec());
        let (hseq, last, _) = gru_forward(&x, &p, None).unwrap();

        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut h = 0.0f64;
        for (t, &xt) in xs.iter().enumerate() {
            let z = sig(wz * xt + uz * h + bz);
            let r = sig(wr * xt + ur * h + br);
            let n = (wn * xt + un * (r * h) + bn).tanh();
            h = (1.0 - z) * h + z * n;
            assert!((hseq.at(0, 0, t) - h).abs() < 1e-14, "t={t}");
        }
        assert!((last[0] - h).abs() < 1e-14);
    }

    /// Hidden states only depend on the input prefix: feeding a longer
    /// sequence never changes earlier states.
    #[test]
    fn prefix_states_ignore_future_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = GruParams::init("g", 3, 4, &mut rng);
        let long: Vec<f64> = (0..3 * 9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xl = Tensor3::from_vec(1, 3, 9, long.clone());
        let mut short = Vec::new();
        for ci in 0..3 {
            short.extend_from_slice(&long[ci * 9..ci * 9 + 5]);
        }
        let xs = Tensor3::from_vec(1, 3, 5, short);
        let (hl, _, _) = gru_forward(&xl, &p, None).unwrap();
        let (hs, _, _) = gru_forward(&xs, &p, None).unwrap();
        for j in 0..4 {
            for t in 0..5 {
                assert_eq!(hl.at(0, j, t), hs.at(0, j, t));
            }
        }
    }

    /// BPTT against central finite differences on every parameter block and
    /// the input, with a quadratic readout of all hidden states.
    #[test]
    fn bptt_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = GruParams::init("g", 2, 3, &mut rng);
        let x0: Vec<f64> = (0..2 * 2 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Tensor3::from_vec(2, 2, 4, x0);

        let loss_of = |p: &GruParams, x: &Tensor3| -> f64 {
            let (hseq, _, _) = gru_forward(x, p, None).unwrap();
            0.5 * hseq.data.iter().map(|v| v * v).sum::<f64>()
        };

        let (hseq, _, cache) = gru_forward(&x, &p, None).unwrap();
        let gh = hseq.clone(); // d(0.5 h^2)/dh = h
        let gx = gru_backward(&mut p, &cache, &gh);

        let delta = 1e-6;
        // Input gradient.
        for i in 0..x.data.len() {
            let mut xp = x.clone();
            xp.data[i] += delta;
            let mut xm = x.clone();
            xm.data[i] -= delta;
            let num = (loss_of(&p, &xp) - loss_of(&p, &xm)) / (2.0 * delta);
            assert!(
                (gx.data[i] - num).abs() < 1e-7,
                "input grad {i}: {} vs {num}",
                gx.data[i]
            );
        }
        // Parameter gradients.
        let analytic: Vec<Vec<f64>> = vec![p.wx.g.clone(), p.wh.g.clone(), p.b.g.clone()];
        for (bi, _) in analytic.iter().enumerate() {
            let n = p.blocks_mut()[bi].w.len();
            for i in 0..n {
                let orig = p.blocks_mut()[bi].w[i];
                p.blocks_mut()[bi].w[i] = orig + delta;
                let fp = loss_of(&p, &x);
                p.blocks_mut()[bi].w[i] = orig - delta;
                let fm = loss_of(&p, &x);
                p.blocks_mut()[bi].w[i] = orig;
                let num = (fp - fm) / (2.0 * delta);
                let got = analytic[bi][i];
                assert!(
                    (got - num).abs() < 1e-6,
                    "block {bi} coord {i}: {got} vs {num}"
                );
            }
        }
    }

    proptest! {
        /// The state is a convex mix of its past and a tanh candidate, so it
        /// can never leave `[-max(|h0|, 1), max(|h0|, 1)]`.
        #[test]
        fn state_stays_bounded(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = GruParams::init("g", 2, 3, &mut rng);
            let data: Vec<f64> = (0..2 * 2 * 12).map(|_| rng.random_range(-5.0..5.0)).collect();
            let x = Tensor3::from_vec(2, 2, 12, data);
            let h0: Vec<f64> = (0..2 * 3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let bound = h0.iter().fold(1.0f64, |a, &v| a.max(v.abs()));
            let (hseq, _, _) = gru_forward(&x, &p, Some(&h0)).unwrap();
            prop_assert!(hseq.data.iter().all(|v| v.abs() <= bound + 1e-12));
        }
    }
}
