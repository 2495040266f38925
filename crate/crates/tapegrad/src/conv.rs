//! Strided 3x3 / 3x3x3 convolutions as direct row-kernel loops.
//!
//! Kernels are fixed at size 3 with padding 1: zero padding on spatial
//! axes, replicate (edge-clamp) padding on the temporal axis of the 3D
//! conv, so temporally constant inputs stay constant per step. All inner
//! loops run over raw row slices; work is parallelized over the batch axis
//! and gradient partials are reduced in sample order, so results do not
//! depend on thread scheduling.

use crate::tape::{Arr, Tape, Var};
use ndarray::parallel::prelude::*;
use ndarray::{Array1, Array4, Array5, Axis};
use std::rc::Rc;

/// Output length of a padded (pad=1), kernel-3, strided axis.
pub fn conv_out_len(in_len: usize, stride: usize) -> usize {
    (in_len + 2 - 3) / stride + 1
}

/// Temporal source row for an output row under replicate padding.
#[inline]
fn clamp_t(out_t: usize, stride: usize, k: usize, t_in: usize) -> usize {
    ((out_t * stride + k) as isize - 1).clamp(0, t_in as isize - 1) as usize
}

/// Interior output-column range `[lo, hi]` where all three column taps are
/// in bounds, for zero spatial padding.
#[inline]
fn interior_cols(w_in: usize, w_out: usize, stride: usize) -> (usize, usize) {
    if w_in < 2 || w_out == 0 {
        return (1, 0); // empty
    }
    (1, ((w_in - 2) / stride).min(w_out - 1))
}

/// dst[xo] += sum_k w[k] * src[xo*s + k - 1], zero-padded columns.
#[inline]
fn row_fwd(dst: &mut [f64], src: &[f64], w: &[f64; 3], stride: usize) {
    let (lo, hi) = interior_cols(src.len(), dst.len(), stride);
    for xo in lo..=hi.min(dst.len().wrapping_sub(1)) {
        let xb = xo * stride;
        dst[xo] += w[0] * src[xb - 1] + w[1] * src[xb] + w[2] * src[xb + 1];
    }
    let edges = (0..lo.min(dst.len())).chain(hi.wrapping_add(1)..dst.len());
    for xo in edges {
        let xb = (xo * stride) as isize;
        let mut acc = 0.0;
        for (k, &wk) in w.iter().enumerate() {
            let xi = xb + k as isize - 1;
            if xi >= 0 && (xi as usize) < src.len() {
                acc += wk * src[xi as usize];
            }
        }
        dst[xo] += acc;
    }
}

/// dx[xo*s + k - 1] += w[k] * go[xo]; the scatter transpose of `row_fwd`.
#[inline]
fn row_bwd_data(go: &[f64], dx: &mut [f64], w: &[f64; 3], stride: usize) {
    let (lo, hi) = interior_cols(dx.len(), go.len(), stride);
    for xo in lo..=hi.min(go.len().wrapping_sub(1)) {
        let xb = xo * stride;
        let g = go[xo];
        dx[xb - 1] += w[0] * g;
        dx[xb] += w[1] * g;
        dx[xb + 1] += w[2] * g;
    }
    let edges = (0..lo.min(go.len())).chain(hi.wrapping_add(1)..go.len());
    for xo in edges {
        let xb = (xo * stride) as isize;
        let g = go[xo];
        for (k, &wk) in w.iter().enumerate() {
            let xi = xb + k as isize - 1;
            if xi >= 0 && (xi as usize) < dx.len() {
                dx[xi as usize] += wk * g;
            }
        }
    }
}

/// dw[k] += sum_xo go[xo] * src[xo*s + k - 1].
#[inline]
fn row_bwd_weight(go: &[f64], src: &[f64], dw: &mut [f64; 3], stride: usize) {
    let (lo, hi) = interior_cols(src.len(), go.len(), stride);
    let mut acc = [0.0f64; 3];
    for xo in lo..=hi.min(go.len().wrapping_sub(1)) {
        let xb = xo * stride;
        let g = go[xo];
        acc[0] += g * src[xb - 1];
        acc[1] += g * src[xb];
        acc[2] += g * src[xb + 1];
    }
    let edges = (0..lo.min(go.len())).chain(hi.wrapping_add(1)..go.len());
    for xo in edges {
        let xb = (xo * stride) as isize;
        let g = go[xo];
        for (k, a) in acc.iter_mut().enumerate() {
            let xi = xb + k as isize - 1;
            if xi >= 0 && (xi as usize) < src.len() {
                *a += g * src[xi as usize];
            }
        }
    }
    for k in 0..3 {
        dw[k] += acc[k];
    }
}

struct Dims3 {
    c_in: usize,
    t_in: usize,
    h_in: usize,
    w_in: usize,
    o_ch: usize,
    t_out: usize,
    h_out: usize,
    w_out: usize,
    stride: (usize, usize, usize),
}

fn conv3d_fwd_one(x: &[f64], w: &[f64], b: &[f64], d: &Dims3, out: &mut [f64]) {
    let (st, sy, sx) = d.stride;
    let in_plane = d.h_in * d.w_in;
    let in_vol = d.t_in * in_plane;
    let out_plane = d.h_out * d.w_out;
    let out_vol = d.t_out * out_plane;
    for o in 0..d.o_ch {
        out[o * out_vol..(o + 1) * out_vol].fill(b[o]);
    }
    for o in 0..d.o_ch {
        for c in 0..d.c_in {
            let wk = &w[(o * d.c_in + c) * 27..(o * d.c_in + c + 1) * 27];
            let x_c = &x[c * in_vol..(c + 1) * in_vol];
            for to in 0..d.t_out {
                let out_t = &mut out[o * out_vol + to * out_plane..o * out_vol + (to + 1) * out_plane];
                for kt in 0..3 {
                    let tin = clamp_t(to, st, kt, d.t_in);
                    let x_t = &x_c[tin * in_plane..(tin + 1) * in_plane];
                    for ky in 0..3 {
                        let wrow: &[f64; 3] = wk[kt * 9 + ky * 3..kt * 9 + ky * 3 + 3].try_into().unwrap();
                        for yo in 0..d.h_out {
                            let yi = (yo * sy + ky) as isize - 1;
                            if yi < 0 || yi as usize >= d.h_in {
                                continue;
                            }
                            let src = &x_t[yi as usize * d.w_in..(yi as usize + 1) * d.w_in];
                            let dst = &mut out_t[yo * d.w_out..(yo + 1) * d.w_out];
                            row_fwd(dst, src, wrow, sx);
                        }
                    }
                }
            }
        }
    }
}

fn conv3d_bwd_one(
    x: &[f64],
    w: &[f64],
    go: &[f64],
    d: &Dims3,
    mut dx: Option<&mut [f64]>,
    dw: &mut [f64],
    db: &mut [f64],
) {
    let (st, sy, sx) = d.stride;
    let in_plane = d.h_in * d.w_in;
    let in_vol = d.t_in * in_plane;
    let out_plane = d.h_out * d.w_out;
    let out_vol = d.t_out * out_plane;
    for o in 0..d.o_ch {
        let go_o = &go[o * out_vol..(o + 1) * out_vol];
        db[o] += go_o.iter().sum::<f64>();
        for c in 0..d.c_in {
            let x_c = &x[c * in_vol..(c + 1) * in_vol];
            let wk = &w[(o * d.c_in + c) * 27..(o * d.c_in + c + 1) * 27];
            let dwk = &mut dw[(o * d.c_in + c) * 27..(o * d.c_in + c + 1) * 27];
            for to in 0..d.t_out {
                let go_t = &go_o[to * out_plane..(to + 1) * out_plane];
                for kt in 0..3 {
                    let tin = clamp_t(to, st, kt, d.t_in);
                    let x_t = &x_c[tin * in_plane..(tin + 1) * in_plane];
                    for ky in 0..3 {
                        let wrow: &[f64; 3] = wk[kt * 9 + ky * 3..kt * 9 + ky * 3 + 3].try_into().unwrap();
                        let mut dwrow = [0.0f64; 3];
                        for yo in 0..d.h_out {
                            let yi = (yo * sy + ky) as isize - 1;
                            if yi < 0 || yi as usize >= d.h_in {
                                continue;
                            }
                            let go_row = &go_t[yo * d.w_out..(yo + 1) * d.w_out];
                            let src = &x_t[yi as usize * d.w_in..(yi as usize + 1) * d.w_in];
                            row_bwd_weight(go_row, src, &mut dwrow, sx);
                            if let Some(dx) = dx.as_deref_mut() {
                                let dx_base = c * in_vol + tin * in_plane + yi as usize * d.w_in;
                                row_bwd_data(go_row, &mut dx[dx_base..dx_base + d.w_in], wrow, sx);
                            }
                        }
                        for k in 0..3 {
                            dwk[kt * 9 + ky * 3 + k] += dwrow[k];
                        }
                    }
                }
            }
        }
    }
}

struct Dims2 {
    c_in: usize,
    h_in: usize,
    w_in: usize,
    o_ch: usize,
    h_out: usize,
    w_out: usize,
    stride: usize,
}

fn conv2d_fwd_one(x: &[f64], w: &[f64], b: &[f64], d: &Dims2, out: &mut [f64]) {
    let in_plane = d.h_in * d.w_in;
    let out_plane = d.h_out * d.w_out;
    for o in 0..d.o_ch {
        out[o * out_plane..(o + 1) * out_plane].fill(b[o]);
    }
    for o in 0..d.o_ch {
        for c in 0..d.c_in {
            let wk = &w[(o * d.c_in + c) * 9..(o * d.c_in + c + 1) * 9];
            let x_c = &x[c * in_plane..(c + 1) * in_plane];
            let out_o = &mut out[o * out_plane..(o + 1) * out_plane];
            for ky in 0..3 {
                let wrow: &[f64; 3] = wk[ky * 3..ky * 3 + 3].try_into().unwrap();
                for yo in 0..d.h_out {
                    let yi = (yo * d.stride + ky) as isize - 1;
                    if yi < 0 || yi as usize >= d.h_in {
                        continue;
                    }
                    let src = &x_c[yi as usize * d.w_in..(yi as usize + 1) * d.w_in];
                    let dst = &mut out_o[yo * d.w_out..(yo + 1) * d.w_out];
                    row_fwd(dst, src, wrow, d.stride);
                }
            }
        }
    }
}

fn conv2d_bwd_one(
    x: &[f64],
    w: &[f64],
    go: &[f64],
    d: &Dims2,
    mut dx: Option<&mut [f64]>,
    dw: &mut [f64],
    db: &mut [f64],
) {
    let in_plane = d.h_in * d.w_in;
    let out_plane = d.h_out * d.w_out;
    for o in 0..d.o_ch {
        let go_o = &go[o * out_plane..(o + 1) * out_plane];
        db[o] += go_o.iter().sum::<f64>();
        for c in 0..d.c_in {
            let x_c = &x[c * in_plane..(c + 1) * in_plane];
            let wk = &w[(o * d.c_in + c) * 9..(o * d.c_in + c + 1) * 9];
            let dwk = &mut dw[(o * d.c_in + c) * 9..(o * d.c_in + c + 1) * 9];
            for ky in 0..3 {
                let wrow: &[f64; 3] = wk[ky * 3..ky * 3 + 3].try_into().unwrap();
                let mut dwrow = [0.0f64; 3];
                for yo in 0..d.h_out {
                    let yi = (yo * d.stride + ky) as isize - 1;
                    if yi < 0 || yi as usize >= d.h_in {
                        continue;
                    }
                    let go_row = &go_o[yo * d.w_out..(yo + 1) * d.w_out];
                    let src = &x_c[yi as usize * d.w_in..(yi as usize + 1) * d.w_in];
                    row_bwd_weight(go_row, src, &mut dwrow, d.stride);
                    if let Some(dx) = dx.as_deref_mut() {
                        let dx_base = c * in_plane + yi as usize * d.w_in;
                        row_bwd_data(go_row, &mut dx[dx_base..dx_base + d.w_in], wrow, d.stride);
                    }
                }
                for k in 0..3 {
                    dwk[ky * 3 + k] += dwrow[k];
                }
            }
        }
    }
}

/// Contiguous standard-layout copy when the source is strided.
fn standard(a: &Arr) -> std::borrow::Cow<'_, Arr> {
    if a.as_slice().is_some() {
        std::borrow::Cow::Borrowed(a)
    } else {
        std::borrow::Cow::Owned(a.as_standard_layout().to_owned())
    }
}

impl Tape {
    /// 3x3x3 convolution over `(N, C, T, H, W)` with zero spatial padding 1
    /// and replicate temporal padding 1. `stride` is `(t, y, x)`.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Var, stride: (usize, usize, usize)) -> Var {
        let xv = self.value_rc(x);
        let wv = self.value_rc(w);
        let bv = self.value(b);
        let xd = xv.shape();
        assert_eq!(xd.len(), 5, "conv3d input rank 5");
        let (n, c, t, h, wd) = (xd[0], xd[1], xd[2], xd[3], xd[4]);
        let wsh = wv.shape();
        assert_eq!(wsh, &[wsh[0], c, 3, 3, 3], "conv3d weight shape");
        let o = wsh[0];
        assert_eq!(bv.len(), o, "conv3d bias len");
        let bvec: Vec<f64> = bv.iter().cloned().collect();
        let d = Dims3 {
            c_in: c,
            t_in: t,
            h_in: h,
            w_in: wd,
            o_ch: o,
            t_out: conv_out_len(t, stride.0),
            h_out: conv_out_len(h, stride.1),
            w_out: conv_out_len(wd, stride.2),
            stride,
        };
        let mut out = Array5::<f64>::zeros((n, o, d.t_out, d.h_out, d.w_out));
        {
            let xs = standard(&xv);
            let x_slice = xs.as_slice().unwrap();
            let ws = standard(&wv);
            let w_slice = ws.as_slice().unwrap();
            let in_sz = c * t * h * wd;
            out.axis_iter_mut(Axis(0))
                .into_par_iter()
                .enumerate()
                .for_each(|(i, mut out_n)| {
                    let x_n = &x_slice[i * in_sz..(i + 1) * in_sz];
                    conv3d_fwd_one(x_n, w_slice, &bvec, &d, out_n.as_slice_mut().unwrap());
                });
        }

        let xb = Rc::clone(&xv);
        let wb = Rc::clone(&wv);
        self.push(
            out.into_dyn(),
            vec![x, w, b],
            Box::new(move |g, mask| {
                let xs = standard(&xb);
                let x_slice = xs.as_slice().unwrap();
                let ws = standard(&wb);
                let w_slice = ws.as_slice().unwrap();
                let gs = standard(g);
                let g_slice = gs.as_slice().unwrap();
                let xd = xb.shape();
                let (n, c, t, h, wd) = (xd[0], xd[1], xd[2], xd[3], xd[4]);
                let o = wb.shape()[0];
                let d = Dims3 {
                    c_in: c,
                    t_in: t,
                    h_in: h,
                    w_in: wd,
                    o_ch: o,
                    t_out: conv_out_len(t, stride.0),
                    h_out: conv_out_len(h, stride.1),
                    w_out: conv_out_len(wd, stride.2),
                    stride,
                };
                let in_sz = c * t * h * wd;
                let out_sz = o * d.t_out * d.h_out * d.w_out;
                let wlen = wb.len();
                let mut dx = mask[0].then(|| Array5::<f64>::zeros((n, c, t, h, wd)));
                let dx_slices: Vec<Option<&mut [f64]>> = match dx.as_mut() {
                    Some(dx) => dx
                        .as_slice_mut()
                        .unwrap()
                        .chunks_mut(in_sz)
                        .map(Some)
                        .collect(),
                    None => (0..n).map(|_| None).collect(),
                };
                let partials: Vec<(Vec<f64>, Vec<f64>)> = dx_slices
                    .into_par_iter()
                    .enumerate()
                    .map(|(i, dx_n)| {
                        let mut dw = vec![0.0; wlen];
                        let mut db = vec![0.0; o];
                        conv3d_bwd_one(
                            &x_slice[i * in_sz..(i + 1) * in_sz],
                            w_slice,
                            &g_slice[i * out_sz..(i + 1) * out_sz],
                            &d,
                            dx_n,
                            &mut dw,
                            &mut db,
                        );
                        (dw, db)
                    })
                    .collect();
                let mut dw = vec![0.0; wlen];
                let mut db = vec![0.0; o];
                for (pw, pb) in partials {
                    for (a, v) in dw.iter_mut().zip(pw) {
                        *a += v;
                    }
                    for (a, v) in db.iter_mut().zip(pb) {
                        *a += v;
                    }
                }
                vec![
                    dx.map(|d| d.into_dyn()),
                    Some(Arr::from_shape_vec(wb.raw_dim(), dw).unwrap()),
                    Some(Array1::from_vec(db).into_dyn()),
                ]
            }),
        )
    }

    /// 3x3 convolution with zero padding 1 over `(B, C, H, W)`, square stride.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Var {
        let xv = self.value_rc(x);
        let wv = self.value_rc(w);
        let bv = self.value(b);
        let xd = xv.shape();
        assert_eq!(xd.len(), 4, "conv2d input rank 4");
        let (n, c, h, wd) = (xd[0], xd[1], xd[2], xd[3]);
        let wsh = wv.shape();
        assert_eq!(wsh, &[wsh[0], c, 3, 3], "conv2d weight shape");
        let o = wsh[0];
        assert_eq!(bv.len(), o, "conv2d bias len");
        let bvec: Vec<f64> = bv.iter().cloned().collect();
        let d = Dims2 {
            c_in: c,
            h_in: h,
            w_in: wd,
            o_ch: o,
            h_out: conv_out_len(h, stride),
            w_out: conv_out_len(wd, stride),
            stride,
        };
        let mut out = Array4::<f64>::zeros((n, o, d.h_out, d.w_out));
        {
            let xs = standard(&xv);
            let x_slice = xs.as_slice().unwrap();
            let ws = standard(&wv);
            let w_slice = ws.as_slice().unwrap();
            let in_sz = c * h * wd;
            // frames are cheap; chunk them so two workers split the batch
            let chunk = n.div_ceil(rayon::current_num_threads().max(1)).max(1);
            out.axis_chunks_iter_mut(Axis(0), chunk)
                .into_par_iter()
                .enumerate()
                .for_each(|(ci, mut out_chunk)| {
                    for (j, mut out_n) in out_chunk.axis_iter_mut(Axis(0)).enumerate() {
                        let i = ci * chunk + j;
                        let x_n = &x_slice[i * in_sz..(i + 1) * in_sz];
                        conv2d_fwd_one(x_n, w_slice, &bvec, &d, out_n.as_slice_mut().unwrap());
                    }
                });
        }

        let xb = Rc::clone(&xv);
        let wb = Rc::clone(&wv);
        self.push(
            out.into_dyn(),
            vec![x, w, b],
            Box::new(move |g, mask| {
                let xs = standard(&xb);
                let x_slice = xs.as_slice().unwrap();
                let ws = standard(&wb);
                let w_slice = ws.as_slice().unwrap();
                let gs = standard(g);
                let g_slice = gs.as_slice().unwrap();
                let xd = xb.shape();
                let (n, c, h, wd) = (xd[0], xd[1], xd[2], xd[3]);
                let o = wb.shape()[0];
                let d = Dims2 {
                    c_in: c,
                    h_in: h,
                    w_in: wd,
                    o_ch: o,
                    h_out: conv_out_len(h, stride),
                    w_out: conv_out_len(wd, stride),
                    stride,
                };
                let in_sz = c * h * wd;
                let out_sz = o * d.h_out * d.w_out;
                let wlen = wb.len();
                let mut dx = mask[0].then(|| Array4::<f64>::zeros((n, c, h, wd)));
                let chunk = n.div_ceil(2 * rayon::current_num_threads().max(1)).max(1);
                let dx_chunks: Vec<Option<&mut [f64]>> = match dx.as_mut() {
                    Some(dx) => dx
                        .as_slice_mut()
                        .unwrap()
                        .chunks_mut(in_sz * chunk)
                        .map(Some)
                        .collect(),
                    None => (0..n.div_ceil(chunk)).map(|_| None).collect(),
                };
                let partials: Vec<(Vec<f64>, Vec<f64>)> = dx_chunks
                    .into_par_iter()
                    .enumerate()
                    .map(|(ci, mut dx_chunk)| {
                        let mut dw = vec![0.0; wlen];
                        let mut db = vec![0.0; o];
                        let lo = ci * chunk;
                        let hi = ((ci + 1) * chunk).min(n);
                        for i in lo..hi {
                            let dx_n = dx_chunk
                                .as_deref_mut()
                                .map(|s| &mut s[(i - lo) * in_sz..(i - lo + 1) * in_sz]);
                            conv2d_bwd_one(
                                &x_slice[i * in_sz..(i + 1) * in_sz],
                                w_slice,
                                &g_slice[i * out_sz..(i + 1) * out_sz],
                                &d,
                                dx_n,
                                &mut dw,
                                &mut db,
                            );
                        }
                        (dw, db)
                    })
                    .collect();
                let mut dw = vec![0.0; wlen];
                let mut db = vec![0.0; o];
                for (pw, pb) in partials {
                    for (a, v) in dw.iter_mut().zip(pw) {
                        *a += v;
                    }
                    for (a, v) in db.iter_mut().zip(pb) {
                        *a += v;
                    }
                }
                vec![
                    dx.map(|d| d.into_dyn()),
                    Some(Arr::from_shape_vec(wb.raw_dim(), dw).unwrap()),
                    Some(Array1::from_vec(db).into_dyn()),
                ]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_len_matches_reference_sizes() {
        assert_eq!(conv_out_len(96, 2), 48);
        assert_eq!(conv_out_len(48, 2), 24);
        assert_eq!(conv_out_len(6, 2), 3);
        assert_eq!(conv_out_len(8, 2), 4);
        assert_eq!(conv_out_len(48, 1), 48);
    }

    #[test]
    fn conv2d_matches_naive() {
        use ndarray::{Array, IxDyn};
        let mut tape = Tape::new();
        let n = 2;
        let (c, h, w) = (3, 7, 6);
        let o = 4;
        let stride = 2;
        let xs = Array::from_shape_fn(IxDyn(&[n, c, h, w]), |ix| {
            (ix[0] * 1000 + ix[1] * 100 + ix[2] * 10 + ix[3]) as f64 * 0.01 - 1.0
        });
        let ws = Array::from_shape_fn(IxDyn(&[o, c, 3, 3]), |ix| {
            ((ix[0] + 2 * ix[1] + 3 * ix[2] + 5 * ix[3]) as f64).sin() * 0.3
        });
        let bs = Array::from_shape_fn(IxDyn(&[o]), |ix| ix[0] as f64 * 0.1);
        let x = tape.leaf(xs.clone());
        let wv = tape.leaf(ws.clone());
        let bv = tape.leaf(bs.clone());
        let y = tape.conv2d(x, wv, bv, stride);
        let yv = tape.value(y);
        let (ho, wo) = (conv_out_len(h, stride), conv_out_len(w, stride));
        assert_eq!(yv.shape(), &[n, o, ho, wo]);
        for ni in 0..n {
            for oc in 0..o {
                for yo in 0..ho {
                    for xo in 0..wo {
                        let mut acc = bs[[oc]];
                        for ic in 0..c {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let yi = (yo * stride + ky) as isize - 1;
                                    let xi = (xo * stride + kx) as isize - 1;
                                    if yi >= 0 && (yi as usize) < h && xi >= 0 && (xi as usize) < w {
                                        acc += ws[[oc, ic, ky, kx]]
                                            * xs[[ni, ic, yi as usize, xi as usize]];
                                    }
                                }
                            }
                        }
                        let got = yv[[ni, oc, yo, xo]];
                        assert!((got - acc).abs() < 1e-12, "mismatch at {:?}", (ni, oc, yo, xo));
                    }
                }
            }
        }
    }

    #[test]
    fn conv3d_matches_naive() {
        use ndarray::{Array, IxDyn};
        let mut tape = Tape::new();
        let (n, c, t, h, w) = (1, 2, 5, 6, 5);
        let o = 3;
        let stride = (2, 2, 2);
        let xs = Array::from_shape_fn(IxDyn(&[n, c, t, h, w]), |ix| {
            ((ix[1] * 7 + ix[2] * 5 + ix[3] * 3 + ix[4]) as f64).cos()
        });
        let ws = Array::from_shape_fn(IxDyn(&[o, c, 3, 3, 3]), |ix| {
            ((ix[0] + ix[1] + ix[2] * 2 + ix[3] * 3 + ix[4] * 4) as f64).sin() * 0.2
        });
        let bs = Array::from_shape_fn(IxDyn(&[o]), |ix| 0.05 * ix[0] as f64);
        let x = tape.leaf(xs.clone());
        let wv = tape.leaf(ws.clone());
        let bv = tape.leaf(bs.clone());
        let y = tape.conv3d(x, wv, bv, stride);
        let yv = tape.value(y);
        let (to, ho, wo) = (
            conv_out_len(t, stride.0),
            conv_out_len(h, stride.1),
            conv_out_len(w, stride.2),
        );
        assert_eq!(yv.shape(), &[n, o, to, ho, wo]);
        for oc in 0..o {
            for tt in 0..to {
                for yy in 0..ho {
                    for xx in 0..wo {
                        let mut acc = bs[[oc]];
                        for ic in 0..c {
                            for kt in 0..3 {
                                for ky in 0..3 {
                                    for kx in 0..3 {
                                        // time replicates at the edges, space zero-pads
                                        let ti = ((tt * stride.0 + kt) as isize - 1)
                                            .clamp(0, t as isize - 1);
                                        let yi = (yy * stride.1 + ky) as isize - 1;
                                        let xi = (xx * stride.2 + kx) as isize - 1;
                                        if yi >= 0 && (yi as usize) < h && xi >= 0 && (xi as usize) < w {
                                            acc += ws[[oc, ic, kt, ky, kx]]
                                                * xs[[0, ic, ti as usize, yi as usize, xi as usize]];
                                        }
                                    }
                                }
                            }
                        }
                        let got = yv[[0, oc, tt, yy, xx]];
                        assert!((got - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn conv3d_constant_in_time_stays_constant() {
        use ndarray::{Array, IxDyn};
        let mut tape = Tape::new();
        let (c, t, h, w) = (2, 8, 6, 6);
        let frame = Array::from_shape_fn(IxDyn(&[c, h, w]), |ix| ((ix[0] * 31 + ix[1] * 7 + ix[2]) as f64).sin());
        let mut xs = Array::zeros(IxDyn(&[1, c, t, h, w]));
        for tt in 0..t {
            for cc in 0..c {
                for yy in 0..h {
                    for xx in 0..w {
                        xs[[0, cc, tt, yy, xx]] = frame[[cc, yy, xx]];
                    }
                }
            }
        }
        let ws = Array::from_shape_fn(IxDyn(&[3, c, 3, 3, 3]), |ix| ((ix[0] + ix[1] + ix[2] + ix[3] + ix[4]) as f64).cos() * 0.2);
        let bs = Array::zeros(IxDyn(&[3]));
        let x = tape.leaf(xs);
        let wv = tape.leaf(ws);
        let bv = tape.leaf(bs);
        let y = tape.conv3d(x, wv, bv, (2, 2, 2));
        let yv = tape.value(y);
        let to = conv_out_len(t, 2);
        for oc in 0..3 {
            for tt in 1..to {
                for yy in 0..conv_out_len(h, 2) {
                    for xx in 0..conv_out_len(w, 2) {
                        let a = yv[[0, oc, 0, yy, xx]];
                        let b = yv[[0, oc, tt, yy, xx]];
                        assert!((a - b).abs() < 1e-12, "temporal replicate padding should keep constants constant");
                    }
                }
            }
        }
    }
}
