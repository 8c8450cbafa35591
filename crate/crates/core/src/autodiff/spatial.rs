use alloc::vec;
use alloc::vec::Vec;

use super::{expect_rank, GradSink, Graph, Op, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Source taps for one output coordinate: `(lo, hi, weight_of_hi)`.
///
/// Half-pixel centers (align-corners false), source clamped at the border.
pub(crate) fn bilinear_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let ratio = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * ratio - 0.5).max(0.0);
            let lo = (src as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

impl<T: Real> Graph<T> {
    /// Bilinear resize of `x [N,C,H,W]` to `out_h x out_w`. Downsampling is
    /// not supported.
    pub fn resize_bilinear(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        const OP: &str = "bilinear_upsample";
        let x = self.value(input);
        expect_rank(OP, x, 4)?;
        let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        if out_h < h || out_w < w || h == 0 || w == 0 {
            return Err(Error::config(
                OP,
                alloc::format!("cannot resize {}x{} to {}x{}; only upsampling is supported", h, w, out_h, out_w),
            ));
        }
        let ty = bilinear_taps(h, out_h);
        let tx = bilinear_taps(w, out_w);
        let mut out = vec![T::zero(); n * c * out_h * out_w];
        for (plane_in, plane_out) in x.data().chunks(h * w).zip(out.chunks_mut(out_h * out_w)) {
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                let (fy1, fy0) = (T::lit(fy), T::lit(1.0 - fy));
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let (fx1, fx0) = (T::lit(fx), T::lit(1.0 - fx));
                    let top = plane_in[y0 * w + x0] * fx0 + plane_in[y0 * w + x1] * fx1;
                    let bot = plane_in[y1 * w + x0] * fx0 + plane_in[y1 * w + x1] * fx1;
                    plane_out[oy * out_w + ox] = top * fy0 + bot * fy1;
                }
            }
        }
        let value = Tensor::new([n, c, out_h, out_w], out)?;
        Ok(self.push(value, Op::Resize { input }, &[input]))
    }

    /// Bilinear upsampling by an integer factor.
    pub fn upsample_bilinear(&mut self, input: Var, factor: usize) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if shape.len() != 4 || factor == 0 {
            return Err(Error::config("bilinear_upsample", "needs a rank-4 input and a positive factor"));
        }
        self.resize_bilinear(input, shape[2] * factor, shape[3] * factor)
    }

    /// Max pooling with implicit `-inf` padding.
    pub fn max_pool2d(&mut self, input: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        const OP: &str = "max_pool2d";
        let x = self.value(input);
        expect_rank(OP, x, 4)?;
        let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        if pad >= kernel {
            return Err(Error::config(OP, "padding must be smaller than the window"));
        }
        let oh = super::conv2d_output_size(h, kernel, stride, pad)
            .ok_or_else(|| Error::config(OP, "window does not fit the input"))?;
        let ow = super::conv2d_output_size(w, kernel, stride, pad)
            .ok_or_else(|| Error::config(OP, "window does not fit the input"))?;
        let mut out = vec![T::zero(); n * c * oh * ow];
        let mut argmax = vec![0usize; n * c * oh * ow];
        for plane in 0..n * c {
            let src = &x.data()[plane * h * w..(plane + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut best_i = 0;
                    for i in 0..kernel {
                        let iy = (oy * stride + i) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for j in 0..kernel {
                            let ix = (ox * stride + j) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = iy as usize * w + ix as usize;
                            if src[idx] > best {
                                best = src[idx];
                                best_i = idx;
                            }
                        }
                    }
                    let o = plane * oh * ow + oy * ow + ox;
                    out[o] = best;
                    argmax[o] = plane * h * w + best_i;
                }
            }
        }
        let value = Tensor::new([n, c, oh, ow], out)?;
        Ok(self.push(value, Op::MaxPool { input, argmax }, &[input]))
    }

    /// Stack `a [N,Ca,H,W]` and `b [N,Cb,H,W]` along channels.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        const OP: &str = "concat_channels";
        let (x, y) = (self.value(a), self.value(b));
        expect_rank(OP, x, 4)?;
        expect_rank(OP, y, 4)?;
        let (xs, ys) = (x.shape(), y.shape());
        if xs[0] != ys[0] || xs[2] != ys[2] || xs[3] != ys[3] {
            return Err(Error::config(
                OP,
                alloc::format!("cannot stack {:?} with {:?}", xs, ys),
            ));
        }
        let n = xs[0];
        let (sa, sb) = (xs[1] * xs[2] * xs[3], ys[1] * ys[2] * ys[3]);
        let mut out = Vec::with_capacity(n * (sa + sb));
        for s in 0..n {
            out.extend_from_slice(&x.data()[s * sa..(s + 1) * sa]);
            out.extend_from_slice(&y.data()[s * sb..(s + 1) * sb]);
        }
        let value = Tensor::new([n, xs[1] + ys[1], xs[2], xs[3]], out)?;
        Ok(self.push(value, Op::Concat { a, b }, &[a, b]))
    }
}

pub(super) fn resize_backward<T: Real>(mut sink: GradSink<'_, T>, input: Var, out: &Tensor<T>, gout: &[T]) {
    let x = sink.value(input);
    let (h, w) = (x.shape()[2], x.shape()[3]);
    let (out_h, out_w) = (out.shape()[2], out.shape()[3]);
    let Some(dx) = sink.buf(input) else { return };
    let ty = bilinear_taps(h, out_h);
    let tx = bilinear_taps(w, out_w);
    for (plane_in, plane_out) in dx.chunks_mut(h * w).zip(gout.chunks(out_h * out_w)) {
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let (fy1, fy0) = (T::lit(fy), T::lit(1.0 - fy));
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let (fx1, fx0) = (T::lit(fx), T::lit(1.0 - fx));
                let g = plane_out[oy * out_w + ox];
                plane_in[y0 * w + x0] += g * fy0 * fx0;
                plane_in[y0 * w + x1] += g * fy0 * fx1;
                plane_in[y1 * w + x0] += g * fy1 * fx0;
                plane_in[y1 * w + x1] += g * fy1 * fx1;
            }
        }
    }
}

pub(super) fn max_pool_backward<T: Real>(mut sink: GradSink<'_, T>, input: Var, argmax: &[usize], gout: &[T]) {
    if let Some(dx) = sink.buf(input) {
        for (&i, &g) in argmax.iter().zip(gout) {
            dx[i] += g;
        }
    }
}

pub(super) fn concat_backward<T: Real>(mut sink: GradSink<'_, T>, a: Var, b: Var, gout: &[T]) {
    let (xa, xb) = (sink.value(a), sink.value(b));
    let n = xa.shape()[0];
    let sa = xa.numel() / n.max(1);
    let sb = xb.numel() / n.max(1);
    if let Some(da) = sink.buf(a) {
        for s in 0..n {
            let src = &gout[s * (sa + sb)..s * (sa + sb) + sa];
            for (d, &g) in da[s * sa..(s + 1) * sa].iter_mut().zip(src) {
                *d += g;
            }
        }
    }
    if let Some(db) = sink.buf(b) {
        for s in 0..n {
            let src = &gout[s * (sa + sb) + sa..(s + 1) * (sa + sb)];
            for (d, &g) in db[s * sb..(s + 1) * sb].iter_mut().zip(src) {
                *d += g;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_stays_constant() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::full([1, 2, 3, 3], 0.7));
        let y = g.resize_bilinear(x, 8, 5).unwrap();
        assert_eq!(g.shape(y), &[1, 2, 8, 5]);
        assert!(g.value(y).data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn two_by_two_to_four_by_four() {
        // Hand-derived taps for 2 -> 4 with half-pixel centers:
        // output 0: src -0.25 -> clamped to 0 -> (1, 0)
        // output 1: src  0.25 -> (0.75, 0.25)
        // output 2: src  0.75 -> (0.25, 0.75)
        // output 3: src  1.25 -> lo = hi = 1 -> (0, 1)
        let w = [[1.0, 0.0], [0.75, 0.25], [0.25, 0.75], [0.0, 1.0]];
        let src = [[0.0, 1.0], [2.0, 3.0]];
        let mut oracle = [0.0f64; 16];
        for r in 0..4 {
            for c in 0..4 {
                let mut v = 0.0;
                for i in 0..2 {
                    for j in 0..2 {
                        v += w[r][i] * w[c][j] * src[i][j];
                    }
                }
                oracle[r * 4 + c] = v;
            }
        }
        let frozen = [
            0.0, 0.25, 0.75, 1.0, //
            0.5, 0.75, 1.25, 1.5, //
            1.5, 1.75, 2.25, 2.5, //
            2.0, 2.25, 2.75, 3.0,
        ];
        assert_eq!(oracle, frozen);
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::new([1, 1, 2, 2], alloc::vec![0.0, 1.0, 2.0, 3.0]).unwrap());
        let y = g.upsample_bilinear(x, 2).unwrap();
        assert_eq!(g.value(y).data(), &frozen[..]);
    }

    #[test]
    fn structure_output_to_style_input() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::zeros([1, 3, 72, 72]));
        let y = g.resize_bilinear(x, 128, 128).unwrap();
        assert_eq!(g.shape(y), &[1, 3, 128, 128]);
    }

    #[test]
    fn downsampling_is_rejected() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::zeros([1, 1, 8, 8]));
        assert!(g.resize_bilinear(x, 4, 8).is_err());
    }

    #[test]
    fn concat_channel_counts_add() {
        let mut g = Graph::<f32>::new();
        let a = g.input(Tensor::zeros([2, 128, 32, 32]));
        let b = g.input(Tensor::zeros([2, 64, 32, 32]));
        let y = g.concat_channels(a, b).unwrap();
        assert_eq!(g.shape(y), &[2, 192, 32, 32]);
        let n = g.input(Tensor::zeros([1, 3, 128, 128]));
        let i = g.input(Tensor::zeros([1, 3, 128, 128]));
        let ni = g.concat_channels(n, i).unwrap();
        assert_eq!(g.shape(ni), &[1, 6, 128, 128]);
    }

    #[test]
    fn concat_with_empty_is_identity() {
        let mut g = Graph::<f64>::new();
        let xt = Tensor::from_fn([2, 3, 2, 2], |i| i as f64);
        let x = g.input(xt.clone());
        let e = g.input(Tensor::zeros([2, 0, 2, 2]));
        let y = g.concat_channels(x, e).unwrap();
        assert_eq!(g.value(y), &xt);
    }

    #[test]
    fn concat_spatial_mismatch_is_rejected() {
        let mut g = Graph::<f32>::new();
        let a = g.input(Tensor::zeros([1, 1, 4, 4]));
        let b = g.input(Tensor::zeros([1, 1, 4, 5]));
        assert!(g.concat_channels(a, b).is_err());
    }

    #[test]
    fn max_pool_picks_window_maximum() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_fn([1, 1, 4, 4], |i| i as f64));
        let y = g.max_pool2d(x, 2, 2, 0).unwrap();
        assert_eq!(g.value(y).data(), &[5.0, 7.0, 13.0, 15.0]);
    }
}
