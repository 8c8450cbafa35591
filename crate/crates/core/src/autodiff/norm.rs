use alloc::vec;
use alloc::vec::Vec;

use super::{GradSink, Graph, Op, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;

/// Weight of the old running statistic in the moving average.
pub const BN_MOMENTUM: f64 = 0.9;

pub enum BatchNormMode<'a, T> {
    /// Normalize with batch statistics and fold them into the running
    /// averages.
    Train {
        running_mean: &'a mut [T],
        running_var: &'a mut [T],
    },
    /// Normalize with the running statistics.
    Eval {
        running_mean: &'a [T],
        running_var: &'a [T],
    },
}

/// `(batch, channels, spatial)` extents of a `[N,C]` or `[N,C,H,W]` input.
fn layout(shape: &[usize]) -> Option<(usize, usize, usize)> {
    match *shape {
        [n, c] => Some((n, c, 1)),
        [n, c, h, w] => Some((n, c, h * w)),
        _ => None,
    }
}

impl<T: Real> Graph<T> {
    pub fn batch_norm(&mut self, input: Var, gamma: Var, beta: Var, mode: BatchNormMode<'_, T>) -> Result<Var> {
        const OP: &str = "batch_norm";
        let x = self.value(input);
        let (n, c, plane) = layout(x.shape()).ok_or_else(|| {
            Error::config(OP, alloc::format!("expected [N,C] or [N,C,H,W], got {:?}", x.shape()))
        })?;
        let gm = self.value(gamma).data();
        let bt = self.value(beta).data();
        if gm.len() != c || bt.len() != c {
            return Err(Error::config(
                OP,
                alloc::format!("gamma/beta need {} entries, got {}/{}", c, gm.len(), bt.len()),
            ));
        }
        let count = n * plane;
        let eps = T::lit(BN_EPS);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        let train = matches!(mode, BatchNormMode::Train { .. });
        match mode {
            BatchNormMode::Train {
                running_mean,
                running_var,
            } => {
                if count < 2 {
                    return Err(Error::config(OP, "train mode needs at least two values per channel"));
                }
                if running_mean.len() != c || running_var.len() != c {
                    return Err(Error::config(OP, "running statistics have the wrong length"));
                }
                let inv_count = T::one() / T::lit(count as f64);
                for ch in 0..c {
                    let mut s = T::zero();
                    for b in 0..n {
                        let start = (b * c + ch) * plane;
                        s += x.data()[start..start + plane].iter().copied().sum::<T>();
                    }
                    let m = s * inv_count;
                    let mut ss = T::zero();
                    for b in 0..n {
                        let start = (b * c + ch) * plane;
                        for &v in &x.data()[start..start + plane] {
                            ss += (v - m) * (v - m);
                        }
                    }
                    mean[ch] = m;
                    var[ch] = ss * inv_count;
                }
                let mom = T::lit(BN_MOMENTUM);
                let unbias = T::lit(count as f64 / (count - 1) as f64);
                for ch in 0..c {
                    running_mean[ch] = mom * running_mean[ch] + (T::one() - mom) * mean[ch];
                    running_var[ch] = mom * running_var[ch] + (T::one() - mom) * var[ch] * unbias;
                }
            }
            BatchNormMode::Eval {
                running_mean,
                running_var,
            } => {
                if running_mean.len() != c || running_var.len() != c {
                    return Err(Error::config(OP, "running statistics have the wrong length"));
                }
                mean.copy_from_slice(running_mean);
                var.copy_from_slice(running_var);
            }
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); x.numel()];
        let mut out = vec![T::zero(); x.numel()];
        for b in 0..n {
            for ch in 0..c {
                let start = (b * c + ch) * plane;
                for i in start..start + plane {
                    let h = (x.data()[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = gm[ch] * h + bt[ch];
                }
            }
        }
        let value = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            &[input, gamma, beta],
        ))
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn batch_norm_backward<T: Real>(
    mut sink: GradSink<'_, T>,
    input: Var,
    gamma: Var,
    beta: Var,
    xhat: &[T],
    inv_std: &[T],
    train: bool,
    gout: &[T],
) {
    let x = sink.value(input);
    let (n, c, plane) = layout(x.shape()).expect("validated in forward");
    let gm = sink.value(gamma).data();
    let mut sum_dy = vec![T::zero(); c];
    let mut sum_dy_xhat = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let start = (b * c + ch) * plane;
            for i in start..start + plane {
                sum_dy[ch] += gout[i];
                sum_dy_xhat[ch] += gout[i] * xhat[i];
            }
        }
    }
    if let Some(dg) = sink.buf(gamma) {
        for (d, &s) in dg.iter_mut().zip(&sum_dy_xhat) {
            *d += s;
        }
    }
    if let Some(db) = sink.buf(beta) {
        for (d, &s) in db.iter_mut().zip(&sum_dy) {
            *d += s;
        }
    }
    let Some(dx) = sink.buf(input) else { return };
    let m = T::lit((n * plane) as f64);
    for b in 0..n {
        for ch in 0..c {
            let start = (b * c + ch) * plane;
            let k = gm[ch] * inv_std[ch];
            for i in start..start + plane {
                if train {
                    // dx = gamma*inv_std/m * (m*dy - sum(dy) - xhat*sum(dy*xhat))
                    dx[i] += k / m * (m * gout[i] - sum_dy[ch] - xhat[i] * sum_dy_xhat[ch]);
                } else {
                    dx[i] += k * gout[i];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn run_train(xt: Tensor<f64>, gamma: f64, beta: f64) -> Tensor<f64> {
        let c = xt.shape()[1];
        let mut g = Graph::new();
        let x = g.input(xt);
        let gm = g.input(Tensor::full([c], gamma));
        let bt = g.input(Tensor::full([c], beta));
        let mut rm = vec![0.0; c];
        let mut rv = vec![1.0; c];
        let y = g
            .batch_norm(
                x,
                gm,
                bt,
                BatchNormMode::Train {
                    running_mean: &mut rm,
                    running_var: &mut rv,
                },
            )
            .unwrap();
        g.value(y).clone()
    }

    #[test]
    fn constant_channels_map_to_beta() {
        let xt = Tensor::from_fn([3, 2, 2, 2], |i| if (i / 4) % 2 == 0 { 5.0 } else { -1.5 });
        let y = run_train(xt, 1.7, 0.3);
        assert!(y.data().iter().all(|&v| (v - 0.3).abs() < 1e-9));
    }

    #[test]
    fn output_statistics_are_beta_and_gamma() {
        let mut r = rng::stream(11, 0, 0);
        let xt = rng::gaussian::<f64>(&mut r, &[4, 3, 5, 5], 3.0).map(|v| v + 2.0);
        let (gamma, beta) = (1.8, -0.4);
        let y = run_train(xt, gamma, beta);
        for ch in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|b| y.data()[(b * 3 + ch) * 25..(b * 3 + ch + 1) * 25].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let std = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64).sqrt();
            assert!((mean - beta).abs() < 1e-3);
            assert!((std - gamma).abs() < 1e-3);
        }
    }

    #[test]
    fn eval_before_training_uses_unit_statistics() {
        let mut g = Graph::<f64>::new();
        let xt = Tensor::from_fn([2, 2], |i| i as f64);
        let x = g.input(xt.clone());
        let gm = g.input(Tensor::ones([2]));
        let bt = g.input(Tensor::zeros([2]));
        let y = g
            .batch_norm(
                x,
                gm,
                bt,
                BatchNormMode::Eval {
                    running_mean: &[0.0, 0.0],
                    running_var: &[1.0, 1.0],
                },
            )
            .unwrap();
        for (a, b) in g.value(y).data().iter().zip(xt.data()) {
            assert!((a - b / (1.0 + BN_EPS).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn running_stats_follow_moving_average() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::new([2, 1], vec![1.0, 3.0]).unwrap());
        let gm = g.input(Tensor::ones([1]));
        let bt = g.input(Tensor::zeros([1]));
        let (mut rm, mut rv) = (vec![0.0], vec![1.0]);
        g.batch_norm(
            x,
            gm,
            bt,
            BatchNormMode::Train {
                running_mean: &mut rm,
                running_var: &mut rv,
            },
        )
        .unwrap();
        assert!((rm[0] - 0.2).abs() < 1e-12);
        // batch var 1, unbiased 2: 0.9 * 1 + 0.1 * 2
        assert!((rv[0] - 1.1).abs() < 1e-12);
    }

    #[test]
    fn single_value_per_channel_is_rejected_in_train_mode() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros([1, 2]));
        let gm = g.input(Tensor::ones([2]));
        let bt = g.input(Tensor::zeros([2]));
        let (mut rm, mut rv) = (vec![0.0; 2], vec![1.0; 2]);
        let res = g.batch_norm(
            x,
            gm,
            bt,
            BatchNormMode::Train {
                running_mean: &mut rm,
                running_var: &mut rv,
            },
        );
        assert!(res.is_err());
    }
}
