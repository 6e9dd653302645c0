//! Forward kernels over plain tensors, plus the slice-level backward
//! routines the autodiff tape reuses.
//!
//! Layouts are channels-last: 1-D sequences are `[T, C]`, images are
//! `[H, W, C]` or batched `[N, H, W, C]`. Convolution kernels are
//! `[k, C_in, C_out]` and `[k_h, k_w, C_in, C_out]`, linear weights are
//! `[d_out, d_in]`.

use rand::Rng;

use super::{Scalar, Tensor};
use crate::error::{Result, ScanError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Output length equals input length; zeros split evenly (extra on the right).
    Same,
    /// `k - 1` zeros on the left, so output `t` only sees inputs `<= t`.
    Causal,
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding2d {
    Same,
    Valid,
}

/// `c (+)= op(a) * op(b)` for row-major buffers; `op(a)` is `m x k`, `op(b)` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a batched 2-D cross-correlation with explicit zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn patch(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    pub fn out_positions(&self) -> usize {
        self.n * self.oh * self.ow
    }

    pub fn out_shape(&self, batched: bool) -> Vec<usize> {
        if batched {
            vec![self.n, self.oh, self.ow, self.cout]
        } else {
            vec![self.oh, self.ow, self.cout]
        }
    }
}

fn split_pad(k: usize, pad: Padding) -> (usize, usize) {
    match pad {
        Padding::Valid => (0, 0),
        Padding::Causal => (k - 1, 0),
        Padding::Same => {
            let before = (k - 1) / 2;
            (before, k - 1 - before)
        }
    }
}

fn out_extent(op: &'static str, len: usize, k: usize, before: usize, after: usize) -> Result<usize> {
    let padded = len + before + after;
    if padded < k {
        return Err(ScanError::shape(
            op,
            format!("kernel {k} longer than padded input {padded}"),
        ));
    }
    Ok(padded - k + 1)
}

pub(crate) fn conv1d_geom(x: &[usize], w: &[usize], b: &[usize], pad: Padding) -> Result<ConvGeom> {
    if x.len() != 2 || w.len() != 3 || b.len() != 1 {
        return Err(ScanError::shape(
            "conv1d",
            format!("input {x:?}, kernel {w:?}, bias {b:?}"),
        ));
    }
    let (t, cin) = (x[0], x[1]);
    let (k, kcin, cout) = (w[0], w[1], w[2]);
    if kcin != cin || b[0] != cout {
        return Err(ScanError::shape(
            "conv1d",
            format!("input {x:?}, kernel {w:?}, bias {b:?}"),
        ));
    }
    let (before, after) = split_pad(k, pad);
    let ow = out_extent("conv1d", t, k, before, after)?;
    Ok(ConvGeom {
        n: 1,
        h: 1,
        w: t,
        cin,
        kh: 1,
        kw: k,
        cout,
        pad_top: 0,
        pad_left: before,
        oh: 1,
        ow,
    })
}

/// Returns the geometry and whether the input carried a batch axis.
pub(crate) fn conv2d_geom(
    x: &[usize],
    w: &[usize],
    b: &[usize],
    pad: Padding2d,
) -> Result<(ConvGeom, bool)> {
    let (batched, n, h, wd, cin) = match *x {
        [h, w, c] => (false, 1, h, w, c),
        [n, h, w, c] => (true, n, h, w, c),
        _ => return Err(ScanError::shape("conv2d", format!("input {x:?}"))),
    };
    if w.len() != 4 || w[2] != cin || b.len() != 1 || b[0] != w[3] {
        return Err(ScanError::shape(
            "conv2d",
            format!("input {x:?}, kernel {w:?}, bias {b:?}"),
        ));
    }
    let (kh, kw, cout) = (w[0], w[1], w[3]);
    let p = match pad {
        Padding2d::Same => Padding::Same,
        Padding2d::Valid => Padding::Valid,
    };
    let (pt, pb) = split_pad(kh, p);
    let (pl, pr) = split_pad(kw, p);
    let oh = out_extent("conv2d", h, kh, pt, pb)?;
    let ow = out_extent("conv2d", wd, kw, pl, pr)?;
    Ok((
        ConvGeom {
            n,
            h,
            w: wd,
            cin,
            kh,
            kw,
            cout,
            pad_top: pt,
            pad_left: pl,
            oh,
            ow,
        },
        batched,
    ))
}

/// Unfold receptive fields into rows of a `[positions, kh*kw*cin]` matrix.
pub(crate) fn im2col<T: Scalar>(g: &ConvGeom, x: &[T]) -> Vec<T> {
    let patch = g.patch();
    let mut cols = vec![T::zero(); g.out_positions() * patch];
    let mut row = 0;
    for img in 0..g.n {
        let base = img * g.h * g.w * g.cin;
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let dst = &mut cols[row * patch..(row + 1) * patch];
                for dy in 0..g.kh {
                    let iy = (oy + dy) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for dx in 0..g.kw {
                        let ix = (ox + dx) as isize - g.pad_left as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let src = base + (iy as usize * g.w + ix as usize) * g.cin;
                        let off = (dy * g.kw + dx) * g.cin;
                        dst[off..off + g.cin].copy_from_slice(&x[src..src + g.cin]);
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add patch gradients back onto the input.
pub(crate) fn col2im<T: Scalar>(g: &ConvGeom, dcols: &[T], dx: &mut [T]) {
    let patch = g.patch();
    let mut row = 0;
    for img in 0..g.n {
        let base = img * g.h * g.w * g.cin;
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let src = &dcols[row * patch..(row + 1) * patch];
                for dy in 0..g.kh {
                    let iy = (oy + dy) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for dx_ in 0..g.kw {
                        let ix = (ox + dx_) as isize - g.pad_left as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let dst = base + (iy as usize * g.w + ix as usize) * g.cin;
                        let off = (dy * g.kw + dx_) * g.cin;
                        for c in 0..g.cin {
                            dx[dst + c] += src[off + c];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Forward convolution; returns the output values and the unfolded input.
pub(crate) fn conv_forward<T: Scalar>(g: &ConvGeom, x: &[T], w: &[T], b: &[T]) -> (Vec<T>, Vec<T>) {
    let cols = im2col(g, x);
    let rows = g.out_positions();
    let mut y = Vec::with_capacity(rows * g.cout);
    for _ in 0..rows {
        y.extend_from_slice(b);
    }
    gemm(rows, g.patch(), g.cout, &cols, false, w, false, &mut y, true);
    (y, cols)
}

/// Accumulates weight and bias gradients; returns the input gradient when asked.
pub(crate) fn conv_backward<T: Scalar>(
    g: &ConvGeom,
    cols: &[T],
    w: &[T],
    dy: &[T],
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
    want_dx: bool,
) -> Option<Vec<T>> {
    let rows = g.out_positions();
    let patch = g.patch();
    if let Some(dw) = dw {
        gemm(patch, rows, g.cout, cols, true, dy, false, dw, true);
    }
    if let Some(db) = db {
        for r in 0..rows {
            for (acc, &v) in db.iter_mut().zip(&dy[r * g.cout..(r + 1) * g.cout]) {
                *acc += v;
            }
        }
    }
    if !want_dx {
        return None;
    }
    let mut dcols = vec![T::zero(); rows * patch];
    gemm(rows, g.cout, patch, dy, false, w, true, &mut dcols, false);
    let mut dx = vec![T::zero(); g.n * g.h * g.w * g.cin];
    col2im(g, &dcols, &mut dx);
    Some(dx)
}

/// 1-D cross-correlation of `[T, C_in]` with `[k, C_in, C_out]` plus bias.
pub fn conv1d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, pad: Padding) -> Result<Tensor<T>> {
    let g = conv1d_geom(x.shape(), w.shape(), b.shape(), pad)?;
    let (y, _) = conv_forward(&g, x.data(), w.data(), b.data());
    Tensor::new(&[g.ow, g.cout], y)?.ensure_finite("conv1d")
}

/// 2-D cross-correlation of `[H, W, C_in]` (or `[N, H, W, C_in]`) with
/// `[k_h, k_w, C_in, C_out]` plus bias.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, pad: Padding2d) -> Result<Tensor<T>> {
    let (g, batched) = conv2d_geom(x.shape(), w.shape(), b.shape(), pad)?;
    let (y, _) = conv_forward(&g, x.data(), w.data(), b.data());
    Tensor::new(&g.out_shape(batched), y)?.ensure_finite("conv2d")
}

/// 2x2 max pooling with stride 2; returns output and flat argmax indices.
pub(crate) fn maxpool2_forward<T: Scalar>(shape: &[usize], x: &[T]) -> Result<(Vec<usize>, Vec<T>, Vec<u32>)> {
    let (n, h, w, c) = match *shape {
        [h, w, c] => (1, h, w, c),
        [n, h, w, c] => (n, h, w, c),
        _ => return Err(ScanError::shape("maxpool2", format!("input {shape:?}"))),
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(ScanError::shape("maxpool2", format!("odd spatial extent in {shape:?}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * oh * ow * c);
    let mut arg = Vec::with_capacity(n * oh * ow * c);
    for img in 0..n {
        let base = img * h * w * c;
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best_i = base + ((2 * oy) * w + 2 * ox) * c + ch;
                    let mut best = x[best_i];
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = base + ((2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                        if x[i] > best {
                            best = x[i];
                            best_i = i;
                        }
                    }
                    out.push(best);
                    arg.push(best_i as u32);
                }
            }
        }
    }
    let mut out_shape = shape.to_vec();
    let r = out_shape.len();
    out_shape[r - 3] = oh;
    out_shape[r - 2] = ow;
    Ok((out_shape, out, arg))
}

pub fn maxpool2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (shape, out, _) = maxpool2_forward(x.shape(), x.data())?;
    Tensor::new(&shape, out)
}

pub(crate) fn linear_check(x: &[usize], w: &[usize], b: &[usize]) -> Result<(usize, usize, usize)> {
    if w.len() != 2 || b.len() != 1 || x.is_empty() || *x.last().unwrap() != w[1] || b[0] != w[0] {
        return Err(ScanError::shape("linear", format!("x {x:?}, W {w:?}, b {b:?}")));
    }
    let rows = x.iter().product::<usize>() / w[1];
    Ok((rows, w[1], w[0]))
}

pub(crate) fn linear_forward<T: Scalar>(rows: usize, din: usize, dout: usize, x: &[T], w: &[T], b: &[T]) -> Vec<T> {
    let mut y = Vec::with_capacity(rows * dout);
    for _ in 0..rows {
        y.extend_from_slice(b);
    }
    gemm(rows, din, dout, x, false, w, true, &mut y, true);
    y
}

/// `x W^T + b`, broadcasting over every leading axis of `x`.
pub fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (rows, din, dout) = linear_check(x.shape(), w.shape(), b.shape())?;
    let y = linear_forward(rows, din, dout, x.data(), w.data(), b.data());
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = dout;
    Tensor::new(&shape, y)?.ensure_finite("linear")
}

pub(crate) fn softmax_rows<T: Scalar>(cols: usize, x: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(cols) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        let mut sum = T::zero();
        for &v in row {
            let e = (v - max).exp();
            sum += e;
            out.push(e);
        }
        out[start..].iter_mut().for_each(|e| *e /= sum);
    }
    out
}

pub(crate) fn log_softmax_row<T: Scalar>(row: &[T]) -> Vec<T> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
    row.iter().map(|&v| v - lse).collect()
}

/// Softmax over the last axis.
pub fn softmax<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.is_empty() {
        return Err(ScanError::Empty("softmax"));
    }
    Tensor::new(x.shape(), softmax_rows(x.cols(), x.data()))?.ensure_finite("softmax")
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn glu_forward<T: Scalar>(cols: usize, x: &[T]) -> Vec<T> {
    let half = cols / 2;
    let mut out = Vec::with_capacity(x.len() / 2);
    for row in x.chunks(cols) {
        let (a, b) = row.split_at(half);
        out.extend(a.iter().zip(b).map(|(&a, &b)| a * sigmoid(b)));
    }
    out
}

/// Gated linear unit over the last axis: `a * sigmoid(b)` for `x = [a; b]`.
pub fn glu<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let cols = x.cols();
    if cols % 2 != 0 {
        return Err(ScanError::shape("glu", format!("odd channel count {cols}")));
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = cols / 2;
    Tensor::new(&shape, glu_forward(cols, x.data()))
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let data = x.data().iter().map(|&v| v.max(T::zero())).collect();
    Tensor::new(x.shape(), data).expect("same shape")
}

pub(crate) fn dropout_mask<T: Scalar, R: Rng + ?Sized>(len: usize, p: f64, rng: &mut R) -> Vec<T> {
    let keep = T::of(1.0 / (1.0 - p));
    (0..len)
        .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
        .collect()
}

pub(crate) fn check_dropout_p(p: f64) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(ScanError::InvalidArgument(format!("dropout probability {p} outside [0, 1)")))
    }
}

/// Inverted dropout: survivors are scaled by `1 / (1 - p)`; identity when
/// not training.
pub fn dropout<T: Scalar, R: Rng + ?Sized>(x: &Tensor<T>, p: f64, training: bool, rng: &mut R) -> Result<Tensor<T>> {
    check_dropout_p(p)?;
    if !training || p == 0.0 {
        return Ok(x.clone());
    }
    let mask: Vec<T> = dropout_mask(x.len(), p, rng);
    let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Tensor::new(x.shape(), data)
}
