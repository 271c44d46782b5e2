//! 1-D convolution and transposed convolution with explicit backward passes.
//!
//! Weight layout is `(c_out, c_in, k)` for [`conv1d`] and `(c_in, c_out, k)`
//! for [`conv1d_transpose`], both flattened innermost-kernel. Zero padding on
//! both ends; strided convolutions use floor semantics, so trailing input that
//! does not fill a window is dropped.

use super::{ParamBlock, Tensor3};
use crate::{Error, Result};
use rayon::prelude::*;

/// Static geometry of a (transposed) convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    /// Output length of the forward convolution: `floor((l + 2p - k)/s) + 1`.
    pub fn out_len(&self, l: usize) -> Result<usize> {
        let span = l + 2 * self.pad;
        if span < self.kernel {
            return Err(Error::Shape(format!(
                "input length {l} (pad {}) shorter than kernel {}",
                self.pad, self.kernel
            )));
        }
        Ok((span - self.kernel) / self.stride + 1)
    }

    /// Output length of the transposed convolution: `(l - 1)*s - 2p + k`.
    pub fn transpose_out_len(&self, l: usize) -> Result<usize> {
        if l == 0 {
            return Err(Error::Shape("transposed convolution of empty input".into()));
        }
        let grow = (l - 1) * self.stride + self.kernel;
        if grow < 2 * self.pad {
            return Err(Error::Shape(format!(
                "padding {} too large for transposed output of length-{l} input",
                self.pad
            )));
        }
        Ok(grow - 2 * self.pad)
    }
}

/// Weights and bias of one (transposed) convolution layer.
#[derive(Debug, Clone)]
pub struct ConvParams {
    pub w: ParamBlock,
    pub b: ParamBlock,
    pub spec: ConvSpec,
}

impl ConvParams {
    /// Fresh layer for [`conv1d`]; weight shape `(c_out, c_in, k)`.
    pub fn init(name: &str, spec: ConvSpec, rng: &mut impl rand::Rng) -> Self {
        let fan_in = spec.c_in * spec.kernel;
        ConvParams {
            w: ParamBlock::uniform(
                &format!("{name}.w"),
                &[spec.c_out, spec.c_in, spec.kernel],
                fan_in,
                rng,
            ),
            b: ParamBlock::zeros(&format!("{name}.b"), &[spec.c_out]),
            spec,
        }
    }

    /// Fresh layer for [`conv1d_transpose`]; weight shape `(c_in, c_out, k)`.
    pub fn init_transpose(name: &str, spec: ConvSpec, rng: &mut impl rand::Rng) -> Self {
        let fan_in = spec.c_in * spec.kernel;
        ConvParams {
            w: ParamBlock::uniform(
                &format!("{name}.w"),
                &[spec.c_in, spec.c_out, spec.kernel],
                fan_in,
                rng,
            ),
            b: ParamBlock::zeros(&format!("{name}.b"), &[spec.c_out]),
            spec,
        }
    }

    pub fn blocks_mut(&mut self) -> [&mut ParamBlock; 2] {
        [&mut self.w, &mut self.b]
    }
}

/// Kernel taps `q` whose input position `base + q - pad` lands inside
/// `0..len`; empty when the whole window misses the input. Hoisting this out
/// of the innermost loops removes the per-tap padding branch.
#[inline]
fn tap_range(base: usize, pad: usize, k: usize, len: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(base);
    let hi = (len + pad).saturating_sub(base).min(k);
    (lo, hi)
}

/// Strided 1-D convolution over `(b, c_in, l)`, producing `(b, c_out, l_out)`.
pub fn conv1d(x: &Tensor3, p: &ConvParams) -> Result<Tensor3> {
    let spec = &p.spec;
    check_channels(x, spec.c_in)?;
    let l_out = spec.out_len(x.l)?;
    let (k, s, pad) = (spec.kernel, spec.stride, spec.pad);
    let mut out = Tensor3::zeros(x.b, spec.c_out, l_out);

    out.data
        .par_chunks_mut(l_out)
        .enumerate()
        .for_each(|(row, o)| {
            let bi = row / spec.c_out;
            let co = row % spec.c_out;
            let xb = x.batch(bi);
            let wrow = &p.w.w[co * spec.c_in * k..(co + 1) * spec.c_in * k];
            for (j, oj) in o.iter_mut().enumerate() {
                let base = j * s;
                let (q_lo, q_hi) = tap_range(base, pad, k, x.l);
                let mut acc = p.b.w[co];
                if q_lo < q_hi {
                    let (x_lo, x_hi) = (base + q_lo - pad, base + q_hi - pad);
                    for ci in 0..spec.c_in {
                        let xc = &xb[ci * x.l + x_lo..ci * x.l + x_hi];
                        let wk = &wrow[ci * k + q_lo..ci * k + q_hi];
                        acc += wk.iter().zip(xc).map(|(&w, &v)| w * v).sum::<f64>();
                    }
                }
                *oj = acc;
            }
        });
    Ok(out)
}

/// Backward of [`conv1d`]: accumulates weight/bias gradients into `p` and
/// returns the gradient with respect to `x`.
pub fn conv1d_backward(x: &Tensor3, p: &mut ConvParams, grad_out: &Tensor3) -> Tensor3 {
    let spec = p.spec;
    let (k, s, pad) = (spec.kernel, spec.stride, spec.pad);
    debug_assert_eq!(grad_out.c, spec.c_out);
    debug_assert_eq!(grad_out.b, x.b);

    // Gradient w.r.t. the input: scatter each output grad through the kernel.
    let mut grad_in = Tensor3::zeros(x.b, x.c, x.l);
    let l_out = grad_out.l;
    grad_in
        .data
        .par_chunks_mut(x.l)
        .enumerate()
        .for_each(|(row, gx)| {
            let bi = row / spec.c_in;
            let ci = row % spec.c_in;
            let gb = grad_out.batch(bi);
            for co in 0..spec.c_out {
                let go = &gb[co * l_out..(co + 1) * l_out];
                let wk = &p.w.w[(co * spec.c_in + ci) * k..(co * spec.c_in + ci + 1) * k];
                for (j, &g) in go.iter().enumerate() {
                    let base = j * s;
                    let (q_lo, q_hi) = tap_range(base, pad, k, x.l);
                    if q_lo < q_hi {
                        let gs = &mut gx[base + q_lo - pad..base + q_hi - pad];
                        for (gv, &wq) in gs.iter_mut().zip(&wk[q_lo..q_hi]) {
                            *gv += wq * g;
                        }
                    }
                }
            }
        });

    // Weight gradient, one parallel task per output channel (disjoint rows,
    // fixed-order inner sums keep the result thread-count independent).
    let c_in = spec.c_in;
    p.w.g
        .par_chunks_mut(c_in * k)
        .enumerate()
        .for_each(|(co, gw)| {
            for bi in 0..x.b {
                let xb = x.batch(bi);
                let go = &grad_out.batch(bi)[co * l_out..(co + 1) * l_out];
                for (j, &g) in go.iter().enumerate() {
                    let base = j * s;
                    let (q_lo, q_hi) = tap_range(base, pad, k, x.l);
                    if q_lo >= q_hi {
                        continue;
                    }
                    let (x_lo, x_hi) = (base + q_lo - pad, base + q_hi - pad);
                    for ci in 0..c_in {
                        let xc = &xb[ci * x.l + x_lo..ci * x.l + x_hi];
                        let gwk = &mut gw[ci * k + q_lo..ci * k + q_hi];
                        for (gq, &xv) in gwk.iter_mut().zip(xc) {
                            *gq += g * xv;
                        }
                    }
                }
            }
        });

    for co in 0..spec.c_out {
        let mut acc = 0.0;
        for bi in 0..x.b {
            let go = &grad_out.batch(bi)[co * l_out..(co + 1) * l_out];
            acc += go.iter().sum::<f64>();
        }
        p.b.g[co] += acc;
    }
    grad_in
}

/// Transposed (fractionally strided) 1-D convolution: `(b, c_in, l)` to
/// `(b, c_out, (l-1)*s - 2p + k)`. The adjoint of [`conv1d`] with the same
/// geometry and transposed weight layout.
pub fn conv1d_transpose(x: &Tensor3, p: &ConvParams) -> Result<Tensor3> {
    let spec = &p.spec;
    check_channels(x, spec.c_in)?;
    let l_out = spec.transpose_out_len(x.l)?;
    let (k, s, pad) = (spec.kernel, spec.stride, spec.pad);
    let mut out = Tensor3::zeros(x.b, spec.c_out, l_out);

    out.data
        .par_chunks_mut(l_out)
        .enumerate()
        .for_each(|(row, o)| {
            let bi = row / spec.c_out;
            let co = row % spec.c_out;
            let xb = x.batch(bi);
            for (i, oi) in o.iter_mut().enumerate() {
                // Input step t contributes through kernel tap q = i + p - t*s;
                // only t with q in 0..k can land here.
                let ip = i + pad;
                let t_hi = (ip / s).min(x.l - 1);
                let t_lo = if ip >= k { (ip - k) / s + 1 } else { 0 };
                let mut acc = p.b.w[co];
                for ci in 0..spec.c_in {
                    let xc = &xb[ci * x.l..(ci + 1) * x.l];
                    let wrow = &p.w.w[(ci * spec.c_out + co) * k..(ci * spec.c_out + co + 1) * k];
                    for t in t_lo..=t_hi {
                        acc += xc[t] * wrow[ip - t * s];
                    }
                }
                *oi = acc;
            }
        });
    Ok(out)
}

/// Backward of [`conv1d_transpose`].
pub fn conv1d_transpose_backward(x: &Tensor3, p: &mut ConvParams, grad_out: &Tensor3) -> Tensor3 {
    let spec = p.spec;
    let (k, s, pad) = (spec.kernel, spec.stride, spec.pad);
    debug_assert_eq!(grad_out.c, spec.c_out);
    let l_out = grad_out.l;

    // Gradient w.r.t. the input gathers like a forward convolution.
    let mut grad_in = Tensor3::zeros(x.b, x.c, x.l);
    grad_in
        .data
        .par_chunks_mut(x.l)
        .enumerate()
        .for_each(|(row, gx)| {
            let bi = row / spec.c_in;
            let ci = row % spec.c_in;
            let gb = grad_out.batch(bi);
            for (t, gxt) in gx.iter_mut().enumerate() {
                let shift = t * s;
                let (q_lo, q_hi) = tap_range(shift, pad, k, l_out);
                let mut acc = 0.0;
                if q_lo < q_hi {
                    let (g_lo, g_hi) = (shift + q_lo - pad, shift + q_hi - pad);
                    for co in 0..spec.c_out {
                        let go = &gb[co * l_out + g_lo..co * l_out + g_hi];
                        let base = (ci * spec.c_out + co) * k;
                        let wk = &p.w.w[base + q_lo..base + q_hi];
                        acc += wk.iter().zip(go).map(|(&w, &g)| w * g).sum::<f64>();
                    }
                }
                *gxt = acc;
            }
        });

    // Weight gradient, one parallel task per input channel.
    let c_out = spec.c_out;
    p.w.g
        .par_chunks_mut(c_out * k)
        .enumerate()
        .for_each(|(ci, gw)| {
            for bi in 0..x.b {
                let xc = &x.batch(bi)[ci * x.l..(ci + 1) * x.l];
                let gb = grad_out.batch(bi);
                for (t, &xv) in xc.iter().enumerate() {
                    let shift = t * s;
                    let (q_lo, q_hi) = tap_range(shift, pad, k, l_out);
                    if q_lo >= q_hi {
                        continue;
                    }
                    let (g_lo, g_hi) = (shift + q_lo - pad, shift + q_hi - pad);
                    for co in 0..c_out {
                        let go = &gb[co * l_out + g_lo..co * l_out + g_hi];
                        let gwk = &mut gw[co * k + q_lo..co * k + q_hi];
                        for (gq, &g) in gwk.iter_mut().zip(go) {
                            *gq += xv * g;
                        }
                    }
                }
            }
        });

    for co in 0..spec.c_out {
        let mut acc = 0.0;
        for bi in 0..x.b {
            let go = &grad_out.batch(bi)[co * l_out..(co + 1) * l_out];
            acc += go.iter().sum::<f64>();
        }
        p.b.g[co] += acc;
    }
    grad_in
}

fn check_channels(x: &Tensor3, c_in: usize) -> Result<()> {
    if x.c != c_in {
        return Err(Error::Shape(format!(
            "input has {} channels, layer expects {c_in}",
            x.c
        )));
    }
    Ok(())
}
