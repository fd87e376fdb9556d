//! Dense kernels for the spatial ops.
//!
//! Parallelism contract: work is only ever split so that each output element
//! is produced by exactly one task, with a fixed serial reduction order inside
//! the task. Results are therefore bit-identical for any thread count.

use rayon::prelude::*;

/// y[n,o,:,:] = b[o] + sum_i k[o,i,:,:] * x[n,i,:,:]  (stride 1, zero pad).
///
/// Caller guarantees `2*pad == kernel-1` per dim, so spatial extents are
/// preserved.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_forward(
    x: &[f64],
    xs: [usize; 4],
    k: &[f64],
    ks: [usize; 4],
    b: &[f64],
    pad: (usize, usize),
    out: &mut [f64],
) {
    let [n, ci, h, w] = xs;
    let [co, _, kh, kw] = ks;
    let (ph, pw) = pad;
    debug_assert_eq!(out.len(), n * co * h * w);

    out.par_chunks_mut(h * w).enumerate().for_each(|(idx, plane)| {
        let ni = idx / co;
        let o = idx % co;
        plane.fill(b[o]);
        for i in 0..ci {
            let xbase = (ni * ci + i) * h * w;
            let kbase = (o * ci + i) * kh * kw;
            for dkh in 0..kh {
                let oh_lo = ph.saturating_sub(dkh);
                let oh_hi = (h + ph).saturating_sub(dkh).min(h);
                for dkw in 0..kw {
                    let wgt = k[kbase + dkh * kw + dkw];
                    if wgt == 0.0 {
                        continue;
                    }
                    let ow_lo = pw.saturating_sub(dkw);
                    let ow_hi = (w + pw).saturating_sub(dkw).min(w);
                    for oh in oh_lo..oh_hi {
                        let ih = oh + dkh - ph;
                        let xrow = xbase + ih * w;
                        let orow = oh * w;
                        for ow in ow_lo..ow_hi {
                            let iw = ow + dkw - pw;
                            plane[orow + ow] += wgt * x[xrow + iw];
                        }
                    }
                }
            }
        }
    });
}

/// Gradient w.r.t. the convolution input.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward_input(
    dy: &[f64],
    k: &[f64],
    ks: [usize; 4],
    xs: [usize; 4],
    pad: (usize, usize),
    dx: &mut [f64],
) {
    let [n, ci, h, w] = xs;
    let [co, _, kh, kw] = ks;
    let (ph, pw) = pad;
    debug_assert_eq!(dx.len(), n * ci * h * w);

    dx.par_chunks_mut(h * w).enumerate().for_each(|(idx, plane)| {
        let ni = idx / ci;
        let i = idx % ci;
        plane.fill(0.0);
        for o in 0..co {
            let ybase = (ni * co + o) * h * w;
            let kbase = (o * ci + i) * kh * kw;
            for dkh in 0..kh {
                // oh = ih + ph - dkh must land in [0, h)
                let ih_lo = dkh.saturating_sub(ph);
                let ih_hi = (h + dkh).saturating_sub(ph).min(h);
                for dkw in 0..kw {
                    let wgt = k[kbase + dkh * kw + dkw];
                    if wgt == 0.0 {
                        continue;
                    }
                    let iw_lo = dkw.saturating_sub(pw);
                    let iw_hi = (w + dkw).saturating_sub(pw).min(w);
                    for ih in ih_lo..ih_hi {
                        let oh = ih + ph - dkh;
                        let yrow = ybase + oh * w;
                        let prow = ih * w;
                        for iw in iw_lo..iw_hi {
                            let ow = iw + pw - dkw;
                            plane[prow + iw] += wgt * dy[yrow + ow];
                        }
                    }
                }
            }
        }
    });
}

/// Gradients w.r.t. kernel and bias.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward_params(
    dy: &[f64],
    x: &[f64],
    xs: [usize; 4],
    ks: [usize; 4],
    pad: (usize, usize),
    dk: &mut [f64],
    db: &mut [f64],
) {
    let [n, ci, h, w] = xs;
    let [co, _, kh, kw] = ks;
    let (ph, pw) = pad;
    debug_assert_eq!(dk.len(), co * ci * kh * kw);
    debug_assert_eq!(db.len(), co);

    dk.par_chunks_mut(kh * kw).enumerate().for_each(|(idx, kplane)| {
        let o = idx / ci;
        let i = idx % ci;
        for dkh in 0..kh {
            let oh_lo = ph.saturating_sub(dkh);
            let oh_hi = (h + ph).saturating_sub(dkh).min(h);
            for dkw in 0..kw {
                let ow_lo = pw.saturating_sub(dkw);
                let ow_hi = (w + pw).saturating_sub(dkw).min(w);
                let mut acc = 0.0;
                for ni in 0..n {
                    let ybase = (ni * co + o) * h * w;
                    let xbase = (ni * ci + i) * h * w;
                    for oh in oh_lo..oh_hi {
                        let ih = oh + dkh - ph;
                        let yrow = ybase + oh * w;
                        let xrow = xbase + ih * w;
                        for ow in ow_lo..ow_hi {
                            let iw = ow + dkw - pw;
                            acc += dy[yrow + ow] * x[xrow + iw];
                        }
                    }
                }
                kplane[dkh * kw + dkw] = acc;
            }
        }
    });

    db.par_iter_mut().enumerate().for_each(|(o, slot)| {
        let mut acc = 0.0;
        for ni in 0..n {
            let base = (ni * co + o) * h * w;
            for p in 0..h * w {
                acc += dy[base + p];
            }
        }
        *slot = acc;
    });
}

/// 2x2 max pooling, stride 2. Returns per-output argmax as flat input indices;
/// ties resolve to the earliest element in row-major block order.
pub(crate) fn maxpool2d_forward(
    x: &[f64],
    xs: [usize; 4],
    out: &mut [f64],
    argmax: &mut Vec<usize>,
) {
    let [n, c, h, w] = xs;
    let (oh, ow) = (h / 2, w / 2);
    argmax.clear();
    argmax.reserve(n * c * oh * ow);
    let mut oi = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for py in 0..oh {
            for px in 0..ow {
                let i00 = base + (2 * py) * w + 2 * px;
                let candidates = [i00, i00 + 1, i00 + w, i00 + w + 1];
                let mut best = candidates[0];
                for &cand in &candidates[1..] {
                    if x[cand] > x[best] {
                        best = cand;
                    }
                }
                out[oi] = x[best];
                argmax.push(best);
                oi += 1;
            }
        }
    }
}

/// Nearest-neighbour 2x upsampling: each value becomes a 2x2 block.
pub(crate) fn upsample2d_forward(x: &[f64], xs: [usize; 4], out: &mut [f64]) {
    let [n, c, h, w] = xs;
    let ow = 2 * w;
    for plane in 0..n * c {
        let ibase = plane * h * w;
        let obase = plane * 4 * h * w;
        for y in 0..h {
            let irow = ibase + y * w;
            let orow = obase + 2 * y * ow;
            for x_ in 0..w {
                let v = x[irow + x_];
                let o = orow + 2 * x_;
                out[o] = v;
                out[o + 1] = v;
                out[o + ow] = v;
                out[o + ow + 1] = v;
            }
        }
    }
}

/// Backward of nearest upsampling: each input cell collects its 2x2 block.
pub(crate) fn upsample2d_backward(dy: &[f64], xs: [usize; 4], dx: &mut [f64]) {
    let [n, c, h, w] = xs;
    let ow = 2 * w;
    for plane in 0..n * c {
        let ibase = plane * h * w;
        let obase = plane * 4 * h * w;
        for y in 0..h {
            let irow = ibase + y * w;
            let orow = obase + 2 * y * ow;
            for x_ in 0..w {
                let o = orow + 2 * x_;
                dx[irow + x_] += dy[o] + dy[o + 1] + dy[o + ow] + dy[o + ow + 1];
            }
        }
    }
}
