//! Strided convolution and its transpose via im2col + GEMM.

use alloc::vec;
use alloc::vec::Vec;

use super::{expect_rank, GradSink, Graph, Op, Var};
use crate::error::{Error, Result};
use crate::real::{gemm, Real};
use crate::tensor::Tensor;

/// Output extent of a convolution along one axis, or `None` if the kernel
/// does not fit inside the padded input.
pub fn conv2d_output_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || input + 2 * pad < kernel {
        return None;
    }
    Some((input + 2 * pad - kernel) / stride + 1)
}

/// Output extent of a transposed convolution along one axis.
pub fn conv_transpose2d_output_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if input == 0 || stride == 0 {
        return None;
    }
    ((input - 1) * stride + kernel).checked_sub(2 * pad)
}

/// Geometry of a convolution from a `c x h x w` image to an `oh x ow` grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn new(op: &'static str, c: usize, h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> Result<Self> {
        let oh = conv2d_output_size(h, kh, stride, pad);
        let ow = conv2d_output_size(w, kw, stride, pad);
        match (oh, ow) {
            (Some(oh), Some(ow)) => Ok(ConvGeom {
                c,
                h,
                w,
                kh,
                kw,
                stride,
                pad,
                oh,
                ow,
            }),
            _ => Err(Error::config(
                op,
                alloc::format!(
                    "kernel {}x{} (stride {}, padding {}) does not fit a {}x{} input",
                    kh, kw, stride, pad, h, w
                ),
            )),
        }
    }

    fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.oh * self.ow
    }

    fn image_len(&self) -> usize {
        self.c * self.h * self.w
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Output columns `ox` whose input column `ox * stride + j - pad` lies
/// inside `0..w`, as a half-open range.
fn valid_cols(g: &ConvGeom, j: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(j).div_ceil(g.stride);
    let hi = if g.w + g.pad > j {
        ((g.w + g.pad - j - 1) / g.stride + 1).min(g.ow)
    } else {
        0
    };
    (lo.min(hi), hi)
}

fn im2col<T: Real>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let p = g.col_cols();
    let pad = g.pad as isize;
    for c in 0..g.c {
        let img = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let dst = &mut cols[row * p..(row + 1) * p];
                let (lo, hi) = valid_cols(g, j);
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + i) as isize - pad;
                    let drow = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize || lo == hi {
                        drow.fill(T::zero());
                        continue;
                    }
                    let src = &img[iy as usize * g.w..(iy as usize + 1) * g.w];
                    drow[..lo].fill(T::zero());
                    drow[hi..].fill(T::zero());
                    let start = lo * g.stride + j - g.pad;
                    if g.stride == 1 {
                        drow[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                    } else {
                        for (d, s) in drow[lo..hi].iter_mut().zip(src[start..].iter().step_by(g.stride)) {
                            *d = *s;
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add of `cols` back onto the image; adjoint of [`im2col`].
fn col2im<T: Real>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    let p = g.col_cols();
    let pad = g.pad as isize;
    for c in 0..g.c {
        let img = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let src = &cols[row * p..(row + 1) * p];
                let (lo, hi) = valid_cols(g, j);
                if lo == hi {
                    continue;
                }
                let start = lo * g.stride + j - g.pad;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + i) as isize - pad;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut img[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let srow = &src[oy * g.ow + lo..oy * g.ow + hi];
                    if g.stride == 1 {
                        for (d, &s) in dst[start..start + hi - lo].iter_mut().zip(srow) {
                            *d += s;
                        }
                    } else {
                        for (d, &s) in dst[start..].iter_mut().step_by(g.stride).zip(srow) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
}

fn add_bias<T: Real>(out: &mut [T], bias: &[T], plane: usize) {
    for (k, &b) in bias.iter().enumerate() {
        for v in &mut out[k * plane..(k + 1) * plane] {
            *v += b;
        }
    }
}

fn bias_grad<T: Real>(gout: &[T], n: usize, k: usize, plane: usize, db: &mut [T]) {
    for s in 0..n {
        for (ch, d) in db.iter_mut().enumerate() {
            let start = (s * k + ch) * plane;
            *d += gout[start..start + plane].iter().copied().sum::<T>();
        }
    }
}

fn check_bias<T: Real>(op: &'static str, bias: Option<&Tensor<T>>, k: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [k] {
            return Err(Error::config(
                op,
                alloc::format!("bias shape {:?} does not match {} output channels", b.shape(), k),
            ));
        }
    }
    Ok(())
}

impl<T: Real> Graph<T> {
    /// Cross-correlation of `input [N,C,H,W]` with `kernel [K,C,kh,kw]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        const OP: &str = "conv2d";
        let x = self.value(input);
        let w = self.value(kernel);
        expect_rank(OP, x, 4)?;
        expect_rank(OP, w, 4)?;
        let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (k, kc, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
        if kc != c {
            return Err(Error::config(
                OP,
                alloc::format!("kernel expects {} input channels, input has {}", kc, c),
            ));
        }
        check_bias(OP, bias.map(|b| self.value(b)), k)?;
        let geom = ConvGeom::new(OP, c, h, wd, kh, kw, stride, pad)?;
        let plane = geom.col_cols();
        let mut out = vec![T::zero(); n * k * plane];
        let mut cols = if geom.is_pointwise() {
            Vec::new()
        } else {
            vec![T::zero(); geom.col_rows() * plane]
        };
        for s in 0..n {
            let xs = &x.data()[s * geom.image_len()..(s + 1) * geom.image_len()];
            let b: &[T] = if geom.is_pointwise() {
                xs
            } else {
                im2col(xs, &geom, &mut cols);
                &cols
            };
            let os = &mut out[s * k * plane..(s + 1) * k * plane];
            gemm(false, false, k, plane, geom.col_rows(), T::one(), w.data(), b, T::zero(), os);
            if let Some(bv) = bias {
                add_bias(os, self.value(bv).data(), plane);
            }
        }
        let value = Tensor::new([n, k, geom.oh, geom.ow], out)?;
        let mut deps = vec![input, kernel];
        deps.extend(bias);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
            &deps,
        ))
    }

    /// Fractionally-strided convolution: the adjoint of a stride-`stride`
    /// [`conv2d`](Self::conv2d) sharing the same `kernel [C_in,C_out,kh,kw]`.
    ///
    /// Only exact up-scaling is accepted: output extents must equal
    /// `stride` times the input extents.
    pub fn conv_transpose2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        const OP: &str = "fractionally_strided_conv2d";
        let x = self.value(input);
        let w = self.value(kernel);
        expect_rank(OP, x, 4)?;
        expect_rank(OP, w, 4)?;
        let (n, c_in, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (kc, c_out, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
        if kc != c_in {
            return Err(Error::config(
                OP,
                alloc::format!("kernel expects {} input channels, input has {}", kc, c_in),
            ));
        }
        check_bias(OP, bias.map(|b| self.value(b)), c_out)?;
        let oh = conv_transpose2d_output_size(h, kh, stride, pad);
        let ow = conv_transpose2d_output_size(wd, kw, stride, pad);
        let (oh, ow) = match (oh, ow) {
            (Some(oh), Some(ow)) if oh == stride * h && ow == stride * wd => (oh, ow),
            _ => {
                return Err(Error::config(
                    OP,
                    alloc::format!(
                        "kernel {}x{} with padding {} cannot map {}x{} to exactly {}x",
                        kh, kw, pad, h, wd, stride
                    ),
                ))
            }
        };
        let geom = ConvGeom::new(OP, c_out, oh, ow, kh, kw, stride, pad)?;
        debug_assert_eq!((geom.oh, geom.ow), (h, wd));
        let plane_in = h * wd;
        let plane_out = oh * ow;
        let mut out = vec![T::zero(); n * c_out * plane_out];
        let mut cols = vec![T::zero(); geom.col_rows() * plane_in];
        for s in 0..n {
            let xs = &x.data()[s * c_in * plane_in..(s + 1) * c_in * plane_in];
            gemm(true, false, geom.col_rows(), plane_in, c_in, T::one(), w.data(), xs, T::zero(), &mut cols);
            let os = &mut out[s * c_out * plane_out..(s + 1) * c_out * plane_out];
            col2im(&cols, &geom, os);
            if let Some(bv) = bias {
                add_bias(os, self.value(bv).data(), plane_out);
            }
        }
        let value = Tensor::new([n, c_out, oh, ow], out)?;
        let mut deps = vec![input, kernel];
        deps.extend(bias);
        Ok(self.push(
            value,
            Op::ConvTranspose2d {
                input,
                kernel,
                bias,
                geom,
            },
            &deps,
        ))
    }
}

pub(super) fn conv2d_backward<T: Real>(
    mut sink: GradSink<'_, T>,
    input: Var,
    kernel: Var,
    bias: Option<Var>,
    geom: &ConvGeom,
    gout: &[T],
) {
    let x = sink.value(input);
    let w = sink.value(kernel);
    let n = x.shape()[0];
    let k = w.shape()[0];
    let plane = geom.col_cols();
    let rows = geom.col_rows();
    let want_x = sink.wants(input);
    let want_w = sink.wants(kernel);
    let mut cols = vec![T::zero(); rows * plane];
    let mut dcols = vec![T::zero(); rows * plane];
    for s in 0..n {
        let gs = &gout[s * k * plane..(s + 1) * k * plane];
        if want_w {
            let xs = &x.data()[s * geom.image_len()..(s + 1) * geom.image_len()];
            let b: &[T] = if geom.is_pointwise() {
                xs
            } else {
                im2col(xs, geom, &mut cols);
                &cols
            };
            let dw = sink.buf(kernel).expect("kernel wants grad");
            gemm(false, true, k, rows, plane, T::one(), gs, b, T::one(), dw);
        }
        if want_x {
            let dx = sink.buf(input).expect("input wants grad");
            let dxs = &mut dx[s * geom.image_len()..(s + 1) * geom.image_len()];
            if geom.is_pointwise() {
                gemm(true, false, rows, plane, k, T::one(), w.data(), gs, T::one(), dxs);
            } else {
                gemm(true, false, rows, plane, k, T::one(), w.data(), gs, T::zero(), &mut dcols);
                col2im(&dcols, geom, dxs);
            }
        }
    }
    if let Some(b) = bias {
        if let Some(db) = sink.buf(b) {
            bias_grad(gout, n, k, plane, db);
        }
    }
}

pub(super) fn conv_transpose2d_backward<T: Real>(
    mut sink: GradSink<'_, T>,
    input: Var,
    kernel: Var,
    bias: Option<Var>,
    geom: &ConvGeom,
    gout: &[T],
) {
    let x = sink.value(input);
    let w = sink.value(kernel);
    let n = x.shape()[0];
    let c_in = x.shape()[1];
    let c_out = geom.c;
    let plane_in = geom.col_cols();
    let plane_out = geom.h * geom.w;
    let rows = geom.col_rows();
    let want_x = sink.wants(input);
    let want_w = sink.wants(kernel);
    let mut cols = vec![T::zero(); rows * plane_in];
    for s in 0..n {
        if !want_x && !want_w {
            break;
        }
        let gs = &gout[s * c_out * plane_out..(s + 1) * c_out * plane_out];
        im2col(gs, geom, &mut cols);
        if want_x {
            let dx = sink.buf(input).expect("input wants grad");
            let dxs = &mut dx[s * c_in * plane_in..(s + 1) * c_in * plane_in];
            gemm(false, false, c_in, plane_in, rows, T::one(), w.data(), &cols, T::one(), dxs);
        }
        if want_w {
            let xs = &x.data()[s * c_in * plane_in..(s + 1) * c_in * plane_in];
            let dw = sink.buf(kernel).expect("kernel wants grad");
            gemm(false, true, c_in, rows, plane_in, T::one(), xs, &cols, T::one(), dw);
        }
    }
    if let Some(b) = bias {
        if let Some(db) = sink.buf(b) {
            bias_grad(gout, n, c_out, plane_out, db);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    /// Direct summation over window positions.
    fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let [n, c, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
        let [k, _, kh, kw] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let mut out = Tensor::zeros([n, k, oh, ow]);
        for s in 0..n {
            for o in 0..k {
                for y in 0..oh {
                    for xo in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..c {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let iy = (y * stride + i) as isize - pad as isize;
                                    let ix = (xo * stride + j) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc += x.data()[((s * c + ci) * h + iy as usize) * wd + ix as usize]
                                            * w.data()[((o * c + ci) * kh + i) * kw + j];
                                    }
                                }
                            }
                        }
                        out.data_mut()[((s * k + o) * oh + y) * ow + xo] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut g = Graph::<f64>::new();
        let xt = Tensor::from_fn([1, 1, 3, 4], |i| i as f64 - 5.0);
        let x = g.input(xt.clone());
        let w = g.input(Tensor::ones([1, 1, 1, 1]));
        let b = g.input(Tensor::zeros([1]));
        let y = g.conv2d(x, w, Some(b), 1, 0).unwrap();
        assert_eq!(g.value(y), &xt);
    }

    #[test]
    fn ones_3x3_with_ones_2x2_gives_fours() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::ones([1, 1, 3, 3]));
        let w = g.input(Tensor::ones([1, 1, 2, 2]));
        let y = g.conv2d(x, w, None, 1, 0).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 2, 2]);
        // Direct summation oracle.
        let expect = conv_oracle(&Tensor::ones([1, 1, 3, 3]), &Tensor::ones([1, 1, 2, 2]), 1, 0);
        assert_eq!(g.value(y), &expect);
        assert!(g.value(y).data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn stride_two_kernel_five_pad_two_halves_72() {
        assert_eq!(conv2d_output_size(72, 5, 2, 2), Some(36));
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::zeros([1, 3, 72, 72]));
        let w = g.input(Tensor::zeros([4, 3, 5, 5]));
        let y = g.conv2d(x, w, None, 2, 2).unwrap();
        assert_eq!(g.shape(y), &[1, 4, 36, 36]);
    }

    #[test]
    fn matches_direct_summation_on_random_input() {
        let mut r = rng::stream(1, 2, 3);
        for &(stride, pad, kh) in &[(1, 0, 3), (2, 1, 3), (2, 2, 5), (1, 1, 1)] {
            let xt = rng::gaussian::<f64>(&mut r, &[2, 3, 7, 6], 1.0);
            let wt = rng::gaussian::<f64>(&mut r, &[4, 3, kh, kh], 1.0);
            let mut g = Graph::new();
            let x = g.input(xt.clone());
            let w = g.input(wt.clone());
            let y = g.conv2d(x, w, None, stride, pad).unwrap();
            let expect = conv_oracle(&xt, &wt, stride, pad);
            assert_eq!(g.shape(y), expect.shape());
            for (a, b) in g.value(y).data().iter().zip(expect.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn channel_mismatch_is_config_error() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::zeros([1, 3, 8, 8]));
        let w = g.input(Tensor::zeros([4, 2, 3, 3]));
        assert!(matches!(g.conv2d(x, w, None, 1, 1), Err(Error::Config { .. })));
    }

    #[test]
    fn kernel_larger_than_padded_input_is_rejected() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::zeros([1, 1, 2, 2]));
        let w = g.input(Tensor::zeros([1, 1, 5, 5]));
        assert!(g.conv2d(x, w, None, 1, 1).is_err());
    }

    #[test]
    fn transpose_doubles_nine_to_eighteen() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::zeros([1, 4, 9, 9]));
        let w = g.input(Tensor::zeros([4, 2, 4, 4]));
        let y = g.conv_transpose2d(x, w, None, 2, 1).unwrap();
        assert_eq!(g.shape(y), &[1, 2, 18, 18]);
    }

    #[test]
    fn transpose_rejects_inexact_doubling() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::zeros([1, 1, 9, 9]));
        let w = g.input(Tensor::zeros([1, 1, 3, 3]));
        assert!(g.conv_transpose2d(x, w, None, 2, 1).is_err());
        let w5 = g.input(Tensor::zeros([1, 1, 5, 5]));
        assert!(g.conv_transpose2d(x, w5, None, 2, 1).is_err());
    }

    #[test]
    fn single_pixel_places_kernel_footprint() {
        // Oracle: the transpose of the explicit stride-2 conv matrix applied
        // to a one-hot input at (1,1) of a 3x3 grid.
        let mut g = Graph::<f64>::new();
        let mut xt = Tensor::zeros([1, 1, 3, 3]);
        xt.data_mut()[4] = 1.0;
        let x = g.input(xt);
        let w = g.input(Tensor::ones([1, 1, 4, 4]));
        let y = g.conv_transpose2d(x, w, None, 2, 1).unwrap();
        let out = g.value(y);
        assert_eq!(out.shape(), &[1, 1, 6, 6]);
        // Explicit conv matrix A: rows = 3x3 output cells, cols = 6x6 input cells.
        let mut expect = [0.0f64; 36];
        for iy in 0..6 {
            for ix in 0..6 {
                // A[(1,1), (iy,ix)] is 1 iff (iy,ix) lies inside the window of output cell (1,1).
                let ky = iy as isize - (2 - 1);
                let kx = ix as isize - (2 - 1);
                if (0..4).contains(&ky) && (0..4).contains(&kx) {
                    expect[iy * 6 + ix] = 1.0;
                }
            }
        }
        assert_eq!(out.data(), &expect[..]);
        assert_eq!(out.data().iter().sum::<f64>(), 16.0);
    }

    #[test]
    fn transpose_is_adjoint_of_strided_conv() {
        let mut r = rng::stream(7, 7, 7);
        let xt = rng::gaussian::<f64>(&mut r, &[2, 3, 8, 8], 1.0);
        let yt = rng::gaussian::<f64>(&mut r, &[2, 5, 4, 4], 1.0);
        let wt = rng::gaussian::<f64>(&mut r, &[5, 3, 4, 4], 1.0);
        let mut g = Graph::new();
        let x = g.input(xt.clone());
        let y = g.input(yt.clone());
        let w = g.input(wt);
        let ax = g.conv2d(x, w, None, 2, 1).unwrap();
        let aty = g.conv_transpose2d(y, w, None, 2, 1).unwrap();
        let lhs: f64 = g.value(ax).data().iter().zip(yt.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = xt.data().iter().zip(g.value(aty).data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() <= 1e-6 * lhs.abs().max(1.0));
    }
}
