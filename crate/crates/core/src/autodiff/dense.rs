use alloc::vec;

use super::{expect_rank, GradSink, Graph, Op, Var};
use crate::error::{Error, Result};
use crate::real::{gemm, Real};
use crate::tensor::Tensor;

impl<T: Real> Graph<T> {
    /// Affine map `input [N,D] x weight [D,E] + bias [E]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        const OP: &str = "fully_connected";
        let x = self.value(input);
        let w = self.value(weight);
        expect_rank(OP, x, 2)?;
        expect_rank(OP, w, 2)?;
        let (n, d) = (x.shape()[0], x.shape()[1]);
        let (wd, e) = (w.shape()[0], w.shape()[1]);
        if wd != d {
            return Err(Error::config(
                OP,
                alloc::format!("input has {} features, weight expects {}", d, wd),
            ));
        }
        let mut out = vec![T::zero(); n * e];
        if let Some(b) = bias {
            let bv = self.value(b);
            if bv.shape() != [e] {
                return Err(Error::config(
                    OP,
                    alloc::format!("bias shape {:?} does not match {} outputs", bv.shape(), e),
                ));
            }
            for row in out.chunks_mut(e) {
                row.copy_from_slice(bv.data());
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        gemm(false, false, n, e, d, T::one(), x.data(), w.data(), beta, &mut out);
        let value = Tensor::new([n, e], out)?;
        let mut deps = vec![input, weight];
        deps.extend(bias);
        Ok(self.push(
            value,
            Op::Linear {
                input,
                weight,
                bias,
            },
            &deps,
        ))
    }
}

pub(super) fn linear_backward<T: Real>(
    mut sink: GradSink<'_, T>,
    input: Var,
    weight: Var,
    bias: Option<Var>,
    gout: &[T],
) {
    let x = sink.value(input);
    let w = sink.value(weight);
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let e = w.shape()[1];
    if let Some(dx) = sink.buf(input) {
        gemm(false, true, n, d, e, T::one(), gout, w.data(), T::one(), dx);
    }
    if let Some(dw) = sink.buf(weight) {
        gemm(true, false, d, e, n, T::one(), x.data(), gout, T::one(), dw);
    }
    if let Some(b) = bias {
        if let Some(db) = sink.buf(b) {
            for row in gout.chunks(e) {
                for (d, &g) in db.iter_mut().zip(row) {
                    *d += g;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn identity_weight_zero_bias_is_identity() {
        let mut g = Graph::<f64>::new();
        let xt = Tensor::from_fn([2, 3], |i| i as f64 * 1.5 - 2.0);
        let x = g.input(xt.clone());
        let w = g.input(Tensor::from_fn([3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 }));
        let b = g.input(Tensor::zeros([3]));
        let y = g.linear(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y), &xt);
    }

    #[test]
    fn matches_triple_loop_matmul() {
        let mut r = rng::stream(3, 3, 3);
        let xt = rng::gaussian::<f64>(&mut r, &[2, 3], 1.0);
        let wt = rng::gaussian::<f64>(&mut r, &[3, 2], 1.0);
        let bt = rng::gaussian::<f64>(&mut r, &[2], 1.0);
        let mut g = Graph::new();
        let x = g.input(xt.clone());
        let w = g.input(wt.clone());
        let b = g.input(bt.clone());
        let y = g.linear(x, w, Some(b)).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mut s = bt.data()[j];
                for k in 0..3 {
                    s += xt.data()[i * 3 + k] * wt.data()[k * 2 + j];
                }
                assert!((g.value(y).data()[i * 2 + j] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn noise_to_structure_block() {
        let mut g = Graph::<f32>::new();
        let z = g.input(Tensor::zeros([2, 100]));
        let w = g.input(Tensor::zeros([100, 9 * 9 * 64]));
        let y = g.linear(z, w, None).unwrap();
        let block = g.reshape(y, &[2, 64, 9, 9]).unwrap();
        assert_eq!(g.shape(block), &[2, 64, 9, 9]);
    }

    #[test]
    fn inner_dim_mismatch_is_config_error() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::zeros([2, 4]));
        let w = g.input(Tensor::zeros([3, 2]));
        assert!(g.linear(x, w, None).is_err());
    }
}
