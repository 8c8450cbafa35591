//! Central-difference gradient checks.
//!
//! [`grad_check`] compares reverse-mode gradients of a graph-building closure
//! with central differences. [`registry`] lists one case per differentiable
//! op plus one scalar-loss composition per network; the CLI `gradcheck`
//! command and the test suite both run it.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;

use crate::autodiff::{Activation, BatchNormMode, CustomOp, Graph, Var};
use crate::error::Result;
use crate::rng::{self, StreamRng};
use crate::tensor::Tensor;

/// Worst coordinate found by [`grad_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(1, |analytic|)` over checked coordinates.
    pub max_error: f64,
    /// `(input index, flat coordinate)` of the worst coordinate.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
}

/// Check `build` at `inputs`.
///
/// `build` receives one leaf per input and returns any node; non-scalar
/// outputs are reduced with fixed random weights first. At most `max_coords`
/// coordinates (drawn without replacement across all inputs) are perturbed.
pub fn grad_check<F>(build: F, inputs: &[Tensor<f64>], step: f64, max_coords: usize, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut rng = rng::stream(seed, rng::tag("gradcheck/projection"), 0);
    let mut projection: Option<Vec<f64>> = None;

    let mut eval = |values: &[Tensor<f64>], want_grads: bool| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut g = Graph::new();
        let leaves: Vec<Var> = values.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let out = build(&mut g, &leaves)?;
        let n = g.value(out).numel();
        let root = if n == 1 {
            out
        } else {
            let w = projection
                .get_or_insert_with(|| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .clone();
            g.weighted_sum(out, w)?
        };
        let value = g.value(root).item();
        let grads = if want_grads {
            g.backward(root)?;
            leaves.iter().map(|&v| g.grad_tensor(v).into_data()).collect()
        } else {
            Vec::new()
        };
        Ok((value, grads))
    };

    let (_, analytic) = eval(inputs, true)?;
    let sizes: Vec<usize> = inputs.iter().map(Tensor::numel).collect();
    let total: usize = sizes.iter().sum();
    let mut pick = rng::stream(seed, rng::tag("gradcheck/coords"), 0);
    let flat: Vec<usize> = if total <= max_coords {
        (0..total).collect()
    } else {
        let mut v = index::sample(&mut pick, total, max_coords).into_vec();
        v.sort_unstable();
        v
    };

    let mut report = GradCheckReport {
        max_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        coords_checked: flat.len(),
    };
    let mut point: Vec<Tensor<f64>> = inputs.to_vec();
    for f in flat {
        let (mut which, mut coord) = (0, f);
        while coord >= sizes[which] {
            coord -= sizes[which];
            which += 1;
        }
        let x0 = point[which].data()[coord];
        point[which].data_mut()[coord] = x0 + step;
        let (plus, _) = eval(&point, false)?;
        point[which].data_mut()[coord] = x0 - step;
        let (minus, _) = eval(&point, false)?;
        point[which].data_mut()[coord] = x0;
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic[which][coord];
        let err = (a - numeric).abs() / a.abs().max(1.0);
        if err > report.max_error || !err.is_finite() {
            report.max_error = if err.is_finite() { err } else { f64::INFINITY };
            report.worst = (which, coord);
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Ops,
    Networks,
}

/// One registered check.
#[derive(Clone, Copy)]
pub struct GradCase {
    pub name: &'static str,
    pub scope: Scope,
    /// Independent random points to evaluate.
    pub points: usize,
    pub step: f64,
    pub tolerance: f64,
    run: fn(u64, f64) -> Result<GradCheckReport>,
}

impl GradCase {
    pub fn new(name: &'static str, scope: Scope, points: usize, run: fn(u64, f64) -> Result<GradCheckReport>) -> Self {
        GradCase {
            name,
            scope,
            points,
            step: 1e-3,
            tolerance: 1e-3,
            run,
        }
    }

    pub fn with_step(mut self, step: f64) -> Self {
        self.step = step;
        self
    }

    /// Worst report over all points; point `i` uses seed `base_seed + i`.
    pub fn run(&self, base_seed: u64) -> Result<CaseOutcome> {
        let mut worst: Option<GradCheckReport> = None;
        for i in 0..self.points as u64 {
            let r = (self.run)(base_seed.wrapping_add(i), self.step)?;
            if worst.as_ref().is_none_or(|w| r.max_error > w.max_error || r.max_error.is_nan()) {
                worst = Some(r);
            }
        }
        let report = worst.expect("at least one point");
        Ok(CaseOutcome {
            name: String::from(self.name),
            passed: report.max_error <= self.tolerance,
            tolerance: self.tolerance,
            report,
        })
    }
}

#[derive(Debug, Clone)]
pub struct CaseOutcome {
    pub name: String,
    pub passed: bool,
    pub tolerance: f64,
    pub report: GradCheckReport,
}

/// Cases for `scope`, each op or network exactly once.
pub fn registry(scope: Scope) -> Vec<GradCase> {
    match scope {
        Scope::Ops => op_cases(),
        Scope::Networks => crate::networks::gradcheck_cases(),
    }
}

/// A case whose backward is deliberately wrong; the harness must flag it.
pub fn corrupted_case() -> GradCase {
    GradCase::new("corrupted_square", Scope::Ops, 1, |seed, step| {
        let x = smooth_point(seed, &[6]);
        grad_check(
            |g, v| g.custom(&[v[0]], Box::new(BrokenSquare)),
            &[x],
            step,
            64,
            seed,
        )
    })
}

/// `x^2` with its derivative off by a factor of 3.
struct BrokenSquare;

impl CustomOp<f64> for BrokenSquare {
    fn name(&self) -> &str {
        "corrupted_square"
    }

    fn forward(&self, inputs: &[&Tensor<f64>]) -> Result<Tensor<f64>> {
        Ok(inputs[0].map(|x| x * x))
    }

    fn backward(&self, inputs: &[&Tensor<f64>], _output: &Tensor<f64>, grad_out: &[f64]) -> Vec<Vec<f64>> {
        vec![inputs[0].data().iter().zip(grad_out).map(|(&x, &g)| 6.0 * x * g).collect()]
    }
}

fn point_rng(seed: u64) -> StreamRng {
    rng::stream(seed, rng::tag("gradcheck/point"), 0)
}

/// Standard-normal values scaled to keep tanh/sigmoid away from saturation.
pub(crate) fn smooth_point(seed: u64, shape: &[usize]) -> Tensor<f64> {
    rng::gaussian(&mut point_rng(seed ^ mix_shape(shape)), shape, 0.7)
}

/// Values at least 0.05 from zero, for ops with a kink there.
fn kink_free_point(seed: u64, shape: &[usize]) -> Tensor<f64> {
    let mut rng = point_rng(seed ^ mix_shape(shape));
    Tensor::from_fn(shape, |_| {
        let m: f64 = rng.gen_range(0.05..1.0);
        if rng.gen::<bool>() {
            m
        } else {
            -m
        }
    })
}

/// Distinct values spaced 0.01 apart in random order; no ties for max-pool.
fn distinct_point(seed: u64, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut rng = point_rng(seed ^ mix_shape(shape));
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    Tensor::from_fn(shape, |i| order[i] as f64 * 0.01 - 0.005 * n as f64)
}

fn mix_shape(shape: &[usize]) -> u64 {
    shape.iter().fold(0u64, |h, &d| rng::mix(h ^ d as u64))
}

fn act_case(seed: u64, step: f64, kind: Activation) -> Result<GradCheckReport> {
    let x = match kind {
        Activation::Relu | Activation::LeakyRelu { .. } => kink_free_point(seed, &[2, 3, 4, 4]),
        _ => smooth_point(seed, &[2, 3, 4, 4]),
    };
    grad_check(move |g, v| Ok(g.activation(v[0], kind)), &[x], step, 24, seed)
}

fn op_cases() -> Vec<GradCase> {
    use Scope::Ops;
    vec![
        GradCase::new("conv2d", Ops, 10, |seed, step| {
            let x = smooth_point(seed, &[2, 3, 7, 7]);
            let k = smooth_point(seed + 1, &[4, 3, 3, 3]);
            let b = smooth_point(seed + 2, &[4]);
            grad_check(|g, v| g.conv2d(v[0], v[1], Some(v[2]), 2, 1), &[x, k, b], step, 24, seed)
        }),
        GradCase::new("fractionally_strided_conv2d", Ops, 10, |seed, step| {
            let x = smooth_point(seed, &[2, 3, 4, 4]);
            let k = smooth_point(seed + 1, &[3, 2, 4, 4]);
            let b = smooth_point(seed + 2, &[2]);
            grad_check(
                |g, v| g.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1),
                &[x, k, b],
                step,
                24,
                seed,
            )
        }),
        GradCase::new("fully_connected", Ops, 10, |seed, step| {
            let x = smooth_point(seed, &[3, 5]);
            let w = smooth_point(seed + 1, &[5, 4]);
            let b = smooth_point(seed + 2, &[4]);
            grad_check(|g, v| g.linear(v[0], v[1], Some(v[2])), &[x, w, b], step, 24, seed)
        }),
        GradCase::new("relu", Ops, 10, |seed, step| act_case(seed, step, Activation::Relu)),
        GradCase::new("leaky_relu", Ops, 10, |seed, step| act_case(seed, step, Activation::leaky())),
        GradCase::new("tanh", Ops, 10, |seed, step| act_case(seed, step, Activation::Tanh)),
        GradCase::new("sigmoid", Ops, 10, |seed, step| act_case(seed, step, Activation::Sigmoid)),
        GradCase::new("batch_norm", Ops, 10, |seed, step| {
            let x = smooth_point(seed, &[3, 2, 3, 3]);
            let gamma = smooth_point(seed + 1, &[2]);
            let beta = smooth_point(seed + 2, &[2]);
            grad_check(
                |g, v| {
                    let (mut mean, mut var) = (vec![0.0; 2], vec![1.0; 2]);
                    let mode = BatchNormMode::Train {
                        running_mean: &mut mean,
                        running_var: &mut var,
                    };
                    g.batch_norm(v[0], v[1], v[2], mode)
                },
                &[x, gamma, beta],
                step,
                24,
                seed,
            )
        }),
        GradCase::new("softmax_per_pixel", Ops, 10, |seed, step| {
            let x = smooth_point(seed, &[2, 5, 3, 3]);
            grad_check(|g, v| g.softmax_channels(v[0]), &[x], step, 24, seed)
        }),
        GradCase::new("softmax_cross_entropy", Ops, 10, |seed, step| {
            let x = smooth_point(seed, &[2, 5, 3, 3]);
            let mut rng = point_rng(seed + 7);
            let targets: Vec<usize> = (0..18).map(|_| rng.gen_range(0..5)).collect();
            grad_check(
                move |g, v| g.softmax_cross_entropy(v[0], &targets, 1.0 / 9.0),
                &[x],
                step,
                24,
                seed,
            )
        }),
        GradCase::new("binary_cross_entropy", Ops, 10, |seed, step| {
            let mut rng = point_rng(seed);
            let s = Tensor::from_fn([4, 1], |_| rng.gen_range(0.1..0.9));
            let label = if seed % 2 == 0 { 1.0 } else { 0.0 };
            grad_check(move |g, v| Ok(g.binary_cross_entropy(v[0], label)), &[s], step, 24, seed)
        }),
        GradCase::new("bilinear_upsample", Ops, 10, |seed, step| {
            let x = smooth_point(seed, &[2, 2, 5, 5]);
            grad_check(|g, v| g.resize_bilinear(v[0], 9, 12), &[x], step, 24, seed)
        }),
        GradCase::new("max_pool2d", Ops, 10, |seed, step| {
            let x = distinct_point(seed, &[2, 2, 6, 6]);
            grad_check(|g, v| g.max_pool2d(v[0], 3, 2, 1), &[x], step, 24, seed)
        }),
        GradCase::new("concat_channels", Ops, 10, |seed, step| {
            let a = smooth_point(seed, &[2, 2, 3, 3]);
            let b = smooth_point(seed + 1, &[2, 3, 3, 3]);
            grad_check(|g, v| g.concat_channels(v[0], v[1]), &[a, b], step, 24, seed)
        }),
        GradCase::new("reshape", Ops, 10, |seed, step| {
            let x = smooth_point(seed, &[2, 12]);
            grad_check(|g, v| g.reshape(v[0], &[2, 3, 2, 2]), &[x], step, 24, seed)
        }),
        GradCase::new("slice_batch", Ops, 10, |seed, step| {
            let x = smooth_point(seed, &[4, 3]);
            grad_check(|g, v| g.slice_outer(v[0], 1, 3), &[x], step, 24, seed)
        }),
        GradCase::new("add", Ops, 10, |seed, step| {
            let a = smooth_point(seed, &[3, 4]);
            let b = smooth_point(seed + 1, &[3, 4]);
            grad_check(|g, v| g.add(v[0], v[1]), &[a, b], step, 24, seed)
        }),
        GradCase::new("scale", Ops, 10, |seed, step| {
            let x = smooth_point(seed, &[3, 4]);
            grad_check(|g, v| Ok(g.scale(v[0], -0.3)), &[x], step, 24, seed)
        }),
        GradCase::new("sum", Ops, 10, |seed, step| {
            let x = smooth_point(seed, &[3, 4]);
            grad_check(|g, v| Ok(g.sum(v[0])), &[x], step, 24, seed)
        }),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_is_exact_to_rounding() {
        let x = smooth_point(1, &[3, 5]);
        let w = smooth_point(2, &[5, 4]);
        let b = smooth_point(3, &[4]);
        let r = grad_check(|g, v| g.linear(v[0], v[1], Some(v[2])), &[x, w, b], 1e-3, 1000, 9).unwrap();
        assert_eq!(r.coords_checked, 15 + 20 + 4);
        assert!(r.max_error <= 1e-7, "{:?}", r);
    }

    #[test]
    fn tanh_with_small_step() {
        for seed in 0..10 {
            let x = smooth_point(seed, &[50]);
            let r = grad_check(|g, v| Ok(g.activation(v[0], Activation::Tanh)), &[x], 1e-4, 50, seed).unwrap();
            assert!(r.max_error <= 1e-5, "{:?}", r);
        }
    }

    #[test]
    fn every_op_passes() {
        for case in registry(Scope::Ops) {
            let out = case.run(1000).unwrap();
            assert!(out.passed, "{} failed: {:?}", out.name, out.report);
        }
    }

    #[test]
    fn op_names_are_unique() {
        let cases = registry(Scope::Ops);
        for (i, a) in cases.iter().enumerate() {
            for b in &cases[i + 1..] {
                assert_ne!(a.name, b.name);
            }
        }
    }

    #[test]
    fn corrupted_backward_is_flagged() {
        let out = corrupted_case().run(3).unwrap();
        assert!(!out.passed);
        assert!(out.report.max_error > 0.5);
    }

    #[test]
    fn coordinate_sampling_respects_cap() {
        let x = smooth_point(4, &[100]);
        let r = grad_check(|g, v| Ok(g.sum(v[0])), &[x], 1e-3, 7, 1).unwrap();
        assert_eq!(r.coords_checked, 7);
    }
}
