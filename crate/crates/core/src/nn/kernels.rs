//! Convolution kernels. Standard convolutions lower to im2col + gemm; depthwise
//! convolution runs as direct loops over each channel plane.

use crate::error::{Error, Result};

/// Output extent of a sliding window: floor((size + 2·pad − k) / stride) + 1.
pub fn conv_out_extent(size: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Config("stride must be positive".into()));
    }
    if k == 0 {
        return Err(Error::Config("kernel size must be positive".into()));
    }
    let padded = size + 2 * pad;
    if padded < k {
        return Err(Error::Config(format!(
            "kernel {k} larger than padded extent {padded}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

/// `c = beta·c + a·b` for an m×k times k×n product with explicit strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| {
        (rows.saturating_sub(1)) * rs + (cols.saturating_sub(1)) * cs
    };
    assert!(last(m, n, rsc, csc) < c.len(), "gemm: c too short");
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                c[i * rsc + j * csc] *= beta;
            }
        }
        return;
    }
    assert!(last(m, k, rsa, csa) < a.len(), "gemm: a too short");
    assert!(last(k, n, rsb, csb) < b.len(), "gemm: b too short");
    // SAFETY: every index touched by the product lies within the bounds
    // asserted above, and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub hout: usize,
    pub wout: usize,
}

impl ConvGeom {
    pub fn new(cin: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Result<Self> {
        Ok(ConvGeom {
            cin,
            h,
            w,
            k,
            stride,
            pad,
            hout: conv_out_extent(h, k, stride, pad)?,
            wout: conv_out_extent(w, k, stride, pad)?,
        })
    }

    fn is_plain_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Range of output indices `o` whose input coordinate `o*stride + offset - pad`
    /// falls inside `[0, size)`.
    fn valid_range(&self, offset: usize, size: usize, out: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let shift = offset as isize - self.pad as isize;
        // o*s + shift >= 0  and  o*s + shift <= size - 1
        let lo = if shift >= 0 { 0 } else { ((-shift) + s - 1) / s };
        let hi_num = size as isize - 1 - shift;
        let hi = if hi_num < 0 { 0 } else { hi_num / s + 1 };
        let lo = lo.max(0) as usize;
        let hi = (hi.max(0) as usize).min(out);
        (lo, hi.max(lo))
    }
}

/// Unfolds one image into a (cin·k·k) × (hout·wout) column matrix.
fn im2col(x: &[f64], g: &ConvGeom, col: &mut [f64]) {
    let p = g.hout * g.wout;
    col.iter_mut().for_each(|v| *v = 0.0);
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            let (oy_lo, oy_hi) = g.valid_range(ky, g.h, g.hout);
            for kx in 0..g.k {
                let (ox_lo, ox_hi) = g.valid_range(kx, g.w, g.wout);
                let row = &mut col[((c * g.k + ky) * g.k + kx) * p..][..p];
                for oy in oy_lo..oy_hi {
                    let iy = oy * g.stride + ky - g.pad;
                    let src = &plane[iy * g.w..(iy + 1) * g.w];
                    let dst = &mut row[oy * g.wout..(oy + 1) * g.wout];
                    for ox in ox_lo..ox_hi {
                        dst[ox] = src[ox * g.stride + kx - g.pad];
                    }
                }
            }
        }
    }
}

/// Folds a column matrix back, accumulating into the image gradient.
fn col2im_add(col: &[f64], g: &ConvGeom, x: &mut [f64]) {
    let p = g.hout * g.wout;
    for c in 0..g.cin {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            let (oy_lo, oy_hi) = g.valid_range(ky, g.h, g.hout);
            for kx in 0..g.k {
                let (ox_lo, ox_hi) = g.valid_range(kx, g.w, g.wout);
                let row = &col[((c * g.k + ky) * g.k + kx) * p..][..p];
                for oy in oy_lo..oy_hi {
                    let iy = oy * g.stride + ky - g.pad;
                    let src = &row[oy * g.wout..(oy + 1) * g.wout];
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    for ox in ox_lo..ox_hi {
                        dst[ox * g.stride + kx - g.pad] += src[ox];
                    }
                }
            }
        }
    }
}

/// Cross-correlation forward. `x` is (n, cin, h, w) flat; `weight` is
/// (cout, cin, k, k) flat; returns (n, cout, hout, wout) flat.
pub(crate) fn conv2d_forward(
    x: &[f64],
    n: usize,
    g: &ConvGeom,
    weight: &[f64],
    bias: Option<&[f64]>,
    cout: usize,
) -> Vec<f64> {
    let kk = g.cin * g.k * g.k;
    let p = g.hout * g.wout;
    let in_per = g.cin * g.h * g.w;
    let mut out = vec![0.0; n * cout * p];
    let mut col = if g.is_plain_pointwise() {
        Vec::new()
    } else {
        vec![0.0; kk * p]
    };
    for i in 0..n {
        let xi = &x[i * in_per..(i + 1) * in_per];
        let oi = &mut out[i * cout * p..(i + 1) * cout * p];
        if let Some(b) = bias {
            for (co, chunk) in oi.chunks_mut(p).enumerate() {
                chunk.iter_mut().for_each(|v| *v = b[co]);
            }
        }
        let src: &[f64] = if g.is_plain_pointwise() {
            xi
        } else {
            im2col(xi, g, &mut col);
            &col
        };
        gemm(cout, kk, p, weight, (kk, 1), src, (p, 1), 1.0, oi, (p, 1));
    }
    out
}

pub(crate) struct ConvGrads {
    pub input: Vec<f64>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

pub(crate) fn conv2d_backward(
    x: &[f64],
    n: usize,
    g: &ConvGeom,
    weight: &[f64],
    cout: usize,
    gout: &[f64],
) -> ConvGrads {
    let kk = g.cin * g.k * g.k;
    let p = g.hout * g.wout;
    let in_per = g.cin * g.h * g.w;
    let mut gx = vec![0.0; n * in_per];
    let mut gw = vec![0.0; cout * kk];
    let mut gb = vec![0.0; cout];
    let plain = g.is_plain_pointwise();
    let mut col = if plain { Vec::new() } else { vec![0.0; kk * p] };
    let mut gcol = if plain { Vec::new() } else { vec![0.0; kk * p] };
    for i in 0..n {
        let xi = &x[i * in_per..(i + 1) * in_per];
        let go = &gout[i * cout * p..(i + 1) * cout * p];
        for (co, chunk) in go.chunks(p).enumerate() {
            gb[co] += chunk.iter().sum::<f64>();
        }
        let src: &[f64] = if plain {
            xi
        } else {
            im2col(xi, g, &mut col);
            &col
        };
        // gw[cout, kk] += go[cout, p] · src[kk, p]^T
        gemm(cout, p, kk, go, (p, 1), src, (1, p), 1.0, &mut gw, (kk, 1));
        // gsrc[kk, p] = weight^T[kk, cout] · go[cout, p]
        let gxi = &mut gx[i * in_per..(i + 1) * in_per];
        if plain {
            gemm(kk, cout, p, weight, (1, kk), go, (p, 1), 1.0, gxi, (p, 1));
        } else {
            gemm(kk, cout, p, weight, (1, kk), go, (p, 1), 0.0, &mut gcol, (p, 1));
            col2im_add(&gcol, g, gxi);
        }
    }
    ConvGrads {
        input: gx,
        weight: gw,
        bias: gb,
    }
}

/// Per-channel convolution; `weight` is (c, 1, k, k) flat.
pub(crate) fn depthwise_forward(
    x: &[f64],
    n: usize,
    g: &ConvGeom,
    weight: &[f64],
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let c = g.cin;
    let plane_in = g.h * g.w;
    let plane_out = g.hout * g.wout;
    let mut out = vec![0.0; n * c * plane_out];
    for i in 0..n {
        for ch in 0..c {
            let src = &x[(i * c + ch) * plane_in..][..plane_in];
            let dst = &mut out[(i * c + ch) * plane_out..][..plane_out];
            if let Some(b) = bias {
                dst.iter_mut().for_each(|v| *v = b[ch]);
            }
            let wk = &weight[ch * g.k * g.k..(ch + 1) * g.k * g.k];
            for ky in 0..g.k {
                let (oy_lo, oy_hi) = g.valid_range(ky, g.h, g.hout);
                for kx in 0..g.k {
                    let wv = wk[ky * g.k + kx];
                    let (ox_lo, ox_hi) = g.valid_range(kx, g.w, g.wout);
                    for oy in oy_lo..oy_hi {
                        let iy = oy * g.stride + ky - g.pad;
                        let srow = &src[iy * g.w..(iy + 1) * g.w];
                        let drow = &mut dst[oy * g.wout..(oy + 1) * g.wout];
                        if g.stride == 1 {
                            let off = kx as isize - g.pad as isize;
                            let s = &srow[(ox_lo as isize + off) as usize..(ox_hi as isize + off) as usize];
                            for (d, &v) in drow[ox_lo..ox_hi].iter_mut().zip(s) {
                                *d += wv * v;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                drow[ox] += wv * srow[ox * g.stride + kx - g.pad];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn depthwise_backward(
    x: &[f64],
    n: usize,
    g: &ConvGeom,
    weight: &[f64],
    gout: &[f64],
) -> ConvGrads {
    let c = g.cin;
    let kk = g.k * g.k;
    let plane_in = g.h * g.w;
    let plane_out = g.hout * g.wout;
    let mut gx = vec![0.0; n * c * plane_in];
    let mut gw = vec![0.0; c * kk];
    let mut gb = vec![0.0; c];
    for i in 0..n {
        for ch in 0..c {
            let src = &x[(i * c + ch) * plane_in..][..plane_in];
            let go = &gout[(i * c + ch) * plane_out..][..plane_out];
            let gsrc = &mut gx[(i * c + ch) * plane_in..][..plane_in];
            gb[ch] += go.iter().sum::<f64>();
            for ky in 0..g.k {
                let (oy_lo, oy_hi) = g.valid_range(ky, g.h, g.hout);
                for kx in 0..g.k {
                    let wv = weight[ch * kk + ky * g.k + kx];
                    let (ox_lo, ox_hi) = g.valid_range(kx, g.w, g.wout);
                    let mut acc = 0.0;
                    for oy in oy_lo..oy_hi {
                        let iy = oy * g.stride + ky - g.pad;
                        let grow = &go[oy * g.wout..(oy + 1) * g.wout];
                        for ox in ox_lo..ox_hi {
                            let ix = iy * g.w + ox * g.stride + kx - g.pad;
                            acc += grow[ox] * src[ix];
                            gsrc[ix] += grow[ox] * wv;
                        }
                    }
                    gw[ch * kk + ky * g.k + kx] += acc;
                }
            }
        }
    }
    ConvGrads {
        input: gx,
        weight: gw,
        bias: gb,
    }
}
