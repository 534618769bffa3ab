//! Convolution, pooling and matmul kernels over flat slices. Inner sums
//! accumulate in f64.

use super::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

pub(crate) fn out_size(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Output positions `o` in `[lo, hi)` for which `o*stride + tap - pad` lands
/// inside `[0, input)`.
#[inline]
fn valid_range(tap: usize, input: usize, out: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if tap >= pad {
        0
    } else {
        (pad - tap).div_ceil(stride)
    };
    let last = input as isize - 1 + pad as isize - tap as isize;
    if last < 0 {
        return (0, 0);
    }
    let hi = (last as usize / stride + 1).min(out);
    (lo.min(hi), hi)
}

/// Accumulates one k×k tap sweep of `plane` (h×w) weighted by `weights` into
/// `acc` (h_out×w_out).
#[inline]
fn accumulate_plane<T: Real>(acc: &mut [f64], plane: &[T], weights: &[T], g: &ConvGeom) {
    let (k, s, p) = (g.k, g.stride, g.pad);
    for ky in 0..k {
        let (oy_lo, oy_hi) = valid_range(ky, g.h, g.h_out, s, p);
        for kx in 0..k {
            let wv = weights[ky * k + kx].to_f64();
            if wv == 0.0 {
                continue;
            }
            let (ox_lo, ox_hi) = valid_range(kx, g.w, g.w_out, s, p);
            for oy in oy_lo..oy_hi {
                let iy = oy * s + ky - p;
                let row = &plane[iy * g.w..(iy + 1) * g.w];
                let arow = &mut acc[oy * g.w_out..(oy + 1) * g.w_out];
                if s == 1 {
                    let off = kx as isize - p as isize;
                    for ox in ox_lo..ox_hi {
                        arow[ox] += wv * row[(ox as isize + off) as usize].to_f64();
                    }
                } else {
                    for ox in ox_lo..ox_hi {
                        arow[ox] += wv * row[ox * s + kx - p].to_f64();
                    }
                }
            }
        }
    }
}

/// Scatters `gout` (h_out×w_out) through one k×k filter into `gin` (h×w).
#[inline]
fn scatter_plane<T: Real>(gin: &mut [f64], gout: &[T], weights: &[T], g: &ConvGeom) {
    let (k, s, p) = (g.k, g.stride, g.pad);
    for ky in 0..k {
        let (oy_lo, oy_hi) = valid_range(ky, g.h, g.h_out, s, p);
        for kx in 0..k {
            let wv = weights[ky * k + kx].to_f64();
            if wv == 0.0 {
                continue;
            }
            let (ox_lo, ox_hi) = valid_range(kx, g.w, g.w_out, s, p);
            for oy in oy_lo..oy_hi {
                let iy = oy * s + ky - p;
                let grow = &gout[oy * g.w_out..(oy + 1) * g.w_out];
                let irow = &mut gin[iy * g.w..(iy + 1) * g.w];
                for ox in ox_lo..ox_hi {
                    irow[ox * s + kx - p] += wv * grow[ox].to_f64();
                }
            }
        }
    }
}

/// Correlation of `gout` with `plane` for every tap: d(out)/d(weight).
#[inline]
fn weight_grad_plane<T: Real>(acc: &mut [f64], plane: &[T], gout: &[T], g: &ConvGeom) {
    let (k, s, p) = (g.k, g.stride, g.pad);
    for ky in 0..k {
        let (oy_lo, oy_hi) = valid_range(ky, g.h, g.h_out, s, p);
        for kx in 0..k {
            let (ox_lo, ox_hi) = valid_range(kx, g.w, g.w_out, s, p);
            let mut sum = 0.0f64;
            for oy in oy_lo..oy_hi {
                let iy = oy * s + ky - p;
                let row = &plane[iy * g.w..(iy + 1) * g.w];
                let grow = &gout[oy * g.w_out..(oy + 1) * g.w_out];
                for ox in ox_lo..ox_hi {
                    sum += grow[ox].to_f64() * row[ox * s + kx - p].to_f64();
                }
            }
            acc[ky * k + kx] += sum;
        }
    }
}

fn is_pointwise(g: &ConvGeom) -> bool {
    g.k == 1 && g.stride == 1 && g.pad == 0
}

/// Dense convolution. `weight` is c_out×c_in×k×k.
pub(crate) fn conv2d_forward<T: Real>(x: &[T], w: &[T], b: &[T], g: &ConvGeom) -> Vec<T> {
    let in_plane = g.h * g.w;
    let out_plane = g.h_out * g.w_out;
    let kk = g.k * g.k;
    let mut out = vec![T::ZERO; g.n * g.c_out * out_plane];
    let mut acc = vec![0.0f64; out_plane];
    for n in 0..g.n {
        let xn = &x[n * g.c_in * in_plane..(n + 1) * g.c_in * in_plane];
        for o in 0..g.c_out {
            acc.fill(b[o].to_f64());
            for c in 0..g.c_in {
                let plane = &xn[c * in_plane..(c + 1) * in_plane];
                let wk = &w[(o * g.c_in + c) * kk..(o * g.c_in + c + 1) * kk];
                if is_pointwise(g) {
                    let wv = wk[0].to_f64();
                    for (a, xv) in acc.iter_mut().zip(plane) {
                        *a += wv * xv.to_f64();
                    }
                } else {
                    accumulate_plane(&mut acc, plane, wk, g);
                }
            }
            let dst = &mut out[(n * g.c_out + o) * out_plane..(n * g.c_out + o + 1) * out_plane];
            for (d, a) in dst.iter_mut().zip(&acc) {
                *d = T::from_f64(*a);
            }
        }
    }
    out
}

/// Returns (grad_x, grad_w, grad_b); grad_x is skipped when `need_x` is false.
pub(crate) fn conv2d_backward<T: Real>(
    x: &[T],
    w: &[T],
    gout: &[T],
    g: &ConvGeom,
    need_x: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let in_plane = g.h * g.w;
    let out_plane = g.h_out * g.w_out;
    let kk = g.k * g.k;
    let mut gw = vec![0.0f64; g.c_out * g.c_in * kk];
    let mut gb = vec![0.0f64; g.c_out];
    let mut gx = if need_x {
        Some(vec![T::ZERO; x.len()])
    } else {
        None
    };
    let mut gin = vec![0.0f64; g.c_in * in_plane];
    for n in 0..g.n {
        let xn = &x[n * g.c_in * in_plane..(n + 1) * g.c_in * in_plane];
        gin.fill(0.0);
        for o in 0..g.c_out {
            let go = &gout[(n * g.c_out + o) * out_plane..(n * g.c_out + o + 1) * out_plane];
            gb[o] += go.iter().map(|v| v.to_f64()).sum::<f64>();
            for c in 0..g.c_in {
                let plane = &xn[c * in_plane..(c + 1) * in_plane];
                let widx = (o * g.c_in + c) * kk;
                let wk = &w[widx..widx + kk];
                let gi = &mut gin[c * in_plane..(c + 1) * in_plane];
                if is_pointwise(g) {
                    let mut sum = 0.0f64;
                    for (gv, xv) in go.iter().zip(plane) {
                        sum += gv.to_f64() * xv.to_f64();
                    }
                    gw[widx] += sum;
                    if need_x {
                        let wv = wk[0].to_f64();
                        for (a, gv) in gi.iter_mut().zip(go) {
                            *a += wv * gv.to_f64();
                        }
                    }
                } else {
                    weight_grad_plane(&mut gw[widx..widx + kk], plane, go, g);
                    if need_x {
                        scatter_plane(gi, go, wk, g);
                    }
                }
            }
        }
        if let Some(gx) = gx.as_mut() {
            let dst = &mut gx[n * g.c_in * in_plane..(n + 1) * g.c_in * in_plane];
            for (d, a) in dst.iter_mut().zip(&gin) {
                *d = T::from_f64(*a);
            }
        }
    }
    (
        gx,
        gw.into_iter().map(T::from_f64).collect(),
        gb.into_iter().map(T::from_f64).collect(),
    )
}

/// Depthwise convolution: channel `c` of the output sees only channel `c` of
/// the input. `weight` is c×1×k×k.
pub(crate) fn depthwise_forward<T: Real>(x: &[T], w: &[T], b: &[T], g: &ConvGeom) -> Vec<T> {
    let in_plane = g.h * g.w;
    let out_plane = g.h_out * g.w_out;
    let kk = g.k * g.k;
    let mut out = vec![T::ZERO; g.n * g.c_in * out_plane];
    let mut acc = vec![0.0f64; out_plane];
    for n in 0..g.n {
        for c in 0..g.c_in {
            let idx = n * g.c_in + c;
            acc.fill(b[c].to_f64());
            accumulate_plane(
                &mut acc,
                &x[idx * in_plane..(idx + 1) * in_plane],
                &w[c * kk..(c + 1) * kk],
                g,
            );
            for (d, a) in out[idx * out_plane..(idx + 1) * out_plane]
                .iter_mut()
                .zip(&acc)
            {
                *d = T::from_f64(*a);
            }
        }
    }
    out
}

pub(crate) fn depthwise_backward<T: Real>(
    x: &[T],
    w: &[T],
    gout: &[T],
    g: &ConvGeom,
    need_x: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let in_plane = g.h * g.w;
    let out_plane = g.h_out * g.w_out;
    let kk = g.k * g.k;
    let mut gw = vec![0.0f64; g.c_in * kk];
    let mut gb = vec![0.0f64; g.c_in];
    let mut gx = if need_x {
        Some(vec![T::ZERO; x.len()])
    } else {
        None
    };
    let mut gin = vec![0.0f64; in_plane];
    for n in 0..g.n {
        for c in 0..g.c_in {
            let idx = n * g.c_in + c;
            let plane = &x[idx * in_plane..(idx + 1) * in_plane];
            let go = &gout[idx * out_plane..(idx + 1) * out_plane];
            gb[c] += go.iter().map(|v| v.to_f64()).sum::<f64>();
            weight_grad_plane(&mut gw[c * kk..(c + 1) * kk], plane, go, g);
            if let Some(gx) = gx.as_mut() {
                gin.fill(0.0);
                scatter_plane(&mut gin, go, &w[c * kk..(c + 1) * kk], g);
                for (d, a) in gx[idx * in_plane..(idx + 1) * in_plane]
                    .iter_mut()
                    .zip(&gin)
                {
                    *d = T::from_f64(*a);
                }
            }
        }
    }
    (
        gx,
        gw.into_iter().map(T::from_f64).collect(),
        gb.into_iter().map(T::from_f64).collect(),
    )
}

/// `x` (rows×inner) · `w` (inner×cols) + `b`.
pub(crate) fn matmul_bias<T: Real>(
    x: &[T],
    w: &[T],
    b: &[T],
    rows: usize,
    inner: usize,
    cols: usize,
) -> Vec<T> {
    let mut out = Vec::with_capacity(rows * cols);
    let mut acc = vec![0.0f64; cols];
    for i in 0..rows {
        for (a, bv) in acc.iter_mut().zip(b) {
            *a = bv.to_f64();
        }
        let xr = &x[i * inner..(i + 1) * inner];
        for (kk, xv) in xr.iter().enumerate() {
            let xv = xv.to_f64();
            if xv == 0.0 {
                continue;
            }
            let wr = &w[kk * cols..(kk + 1) * cols];
            for (a, wv) in acc.iter_mut().zip(wr) {
                *a += xv * wv.to_f64();
            }
        }
        out.extend(acc.iter().map(|a| T::from_f64(*a)));
    }
    out
}

/// Gradients of `matmul_bias` given d(out).
pub(crate) fn matmul_bias_backward<T: Real>(
    x: &[T],
    w: &[T],
    gout: &[T],
    rows: usize,
    inner: usize,
    cols: usize,
    need_x: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let mut gb = vec![0.0f64; cols];
    let mut gw = vec![0.0f64; inner * cols];
    for i in 0..rows {
        let gr = &gout[i * cols..(i + 1) * cols];
        for (a, gv) in gb.iter_mut().zip(gr) {
            *a += gv.to_f64();
        }
        let xr = &x[i * inner..(i + 1) * inner];
        for (kk, xv) in xr.iter().enumerate() {
            let xv = xv.to_f64();
            if xv == 0.0 {
                continue;
            }
            let dst = &mut gw[kk * cols..(kk + 1) * cols];
            for (a, gv) in dst.iter_mut().zip(gr) {
                *a += xv * gv.to_f64();
            }
        }
    }
    let gx = need_x.then(|| {
        let mut gx = Vec::with_capacity(rows * inner);
        for i in 0..rows {
            let gr = &gout[i * cols..(i + 1) * cols];
            for kk in 0..inner {
                let wr = &w[kk * cols..(kk + 1) * cols];
                let s: f64 = gr
                    .iter()
                    .zip(wr)
                    .map(|(a, b)| a.to_f64() * b.to_f64())
                    .sum();
                gx.push(T::from_f64(s));
            }
        }
        gx
    });
    (
        gx,
        gw.into_iter().map(T::from_f64).collect(),
        gb.into_iter().map(T::from_f64).collect(),
    )
}
