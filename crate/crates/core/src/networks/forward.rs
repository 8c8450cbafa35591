use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{build, Init, LayerSpec, NetworkKind, NetworkParams, NetworkSpec, Scale};
use crate::autodiff::{BatchNormMode, Graph, Var};
use crate::error::{Error, Result};
use crate::gradcheck::{grad_check, smooth_point, GradCase, GradCheckReport, Scope};
use crate::real::Real;
use crate::tensor::Tensor;
use crate::{losses, rng, NUM_CLASSES};

/// Batch-norm behaviour during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running averages are updated.
    Train,
    /// Running statistics.
    Eval,
}

fn apply_layer<T: Real>(
    g: &mut Graph<T>,
    layer: &LayerSpec,
    x: Var,
    params: &mut core::slice::Iter<'_, Var>,
    buffers: &mut [Tensor<T>],
    next_buffer: &mut usize,
    mode: Mode,
) -> Result<Var> {
    let mut take = || {
        params
            .next()
            .copied()
            .ok_or_else(|| Error::config("forward", "fewer parameters than the spec needs"))
    };
    match *layer {
        LayerSpec::Fc { reshape, bias, .. } => {
            let shape = g.shape(x).to_vec();
            let flat = if shape.len() == 2 {
                x
            } else {
                g.reshape(x, &[shape[0], shape[1..].iter().product()])?
            };
            let w = take()?;
            let b = if bias { Some(take()?) } else { None };
            let y = g.linear(flat, w, b)?;
            match reshape {
                Some([c, h, w]) => g.reshape(y, &[shape[0], c, h, w]),
                None => Ok(y),
            }
        }
        LayerSpec::Conv {
            stride, pad, bias, ..
        } => {
            let w = take()?;
            let b = if bias { Some(take()?) } else { None };
            g.conv2d(x, w, b, stride, pad)
        }
        LayerSpec::Uconv {
            stride, pad, bias, ..
        } => {
            let w = take()?;
            let b = if bias { Some(take()?) } else { None };
            g.conv_transpose2d(x, w, b, stride, pad)
        }
        LayerSpec::BatchNorm => {
            let gamma = take()?;
            let beta = take()?;
            let i = *next_buffer;
            *next_buffer += 2;
            if buffers.len() < i + 2 {
                return Err(Error::config("forward", "missing batch-norm running statistics"));
            }
            let (mean, var) = buffers[i..i + 2].split_at_mut(1);
            let mode = match mode {
                Mode::Train => BatchNormMode::Train {
                    running_mean: mean[0].data_mut(),
                    running_var: var[0].data_mut(),
                },
                Mode::Eval => BatchNormMode::Eval {
                    running_mean: mean[0].data(),
                    running_var: var[0].data(),
                },
            };
            g.batch_norm(x, gamma, beta, mode)
        }
        LayerSpec::Act(kind) => Ok(g.activation(x, kind)),
        LayerSpec::Upsample { factor } => g.upsample_bilinear(x, factor),
        LayerSpec::MaxPool { kernel, stride, pad } => g.max_pool2d(x, kernel, stride, pad),
    }
}

/// Run `spec` on `inputs` (each `[N, ...per-sample shape]`).
///
/// `params` are graph nodes in [`NetworkParams`] order; `buffers` are the
/// running statistics, updated in [`Mode::Train`].
pub fn forward<T: Real>(
    spec: &NetworkSpec,
    g: &mut Graph<T>,
    params: &[Var],
    buffers: &mut [Tensor<T>],
    inputs: &[Var],
    mode: Mode,
) -> Result<Var> {
    if inputs.len() != spec.inputs.len() {
        return Err(Error::config(
            "forward",
            alloc::format!("{} takes {} inputs, got {}", spec.name(), spec.inputs.len(), inputs.len()),
        ));
    }
    let n = g.shape(inputs[0]).first().copied().unwrap_or(0);
    for (v, want) in inputs.iter().zip(&spec.inputs) {
        let got = g.shape(*v);
        if got.len() != want.shape.len() + 1 || got[0] != n || got[1..] != want.shape[..] {
            return Err(Error::config(
                "forward",
                alloc::format!(
                    "{} input {:?} must be [{}, {:?}], got {:?}",
                    spec.name(),
                    want.name,
                    n,
                    want.shape,
                    got
                ),
            ));
        }
    }
    let mut it = params.iter();
    let mut next_buffer = 0;
    let mut outs = Vec::with_capacity(inputs.len());
    for (branch, &input) in spec.branches.iter().zip(inputs) {
        let mut x = input;
        for layer in &branch.layers {
            x = apply_layer(g, layer, x, &mut it, buffers, &mut next_buffer, mode)?;
        }
        outs.push(x);
    }
    let mut x = outs[0];
    for &o in &outs[1..] {
        x = g.concat_channels(x, o)?;
    }
    for layer in &spec.trunk {
        x = apply_layer(g, layer, x, &mut it, buffers, &mut next_buffer, mode)?;
    }
    if it.next().is_some() {
        return Err(Error::config("forward", "more parameters than the spec uses"));
    }
    Ok(x)
}

/// A spec together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub spec: NetworkSpec,
    pub params: NetworkParams<T>,
}

impl<T: Real> Network<T> {
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let params = NetworkParams::init(&spec, seed, Init::Dcgan)?;
        Ok(Network { spec, params })
    }

    pub fn build(kind: NetworkKind, scale: Scale, seed: u64) -> Result<Self> {
        Self::new(build(kind, scale), seed)
    }

    /// Copy the parameters into `g` as leaves.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.params
            .tensors
            .iter()
            .map(|t| g.leaf(t.clone(), trainable))
            .collect()
    }

    pub fn forward(&mut self, g: &mut Graph<T>, params: &[Var], inputs: &[Var], mode: Mode) -> Result<Var> {
        forward(&self.spec, g, params, &mut self.params.buffers, inputs, mode)
    }

    /// Bind constant parameters and run on `inputs` in a fresh graph.
    pub fn run(&mut self, inputs: &[Tensor<T>], mode: Mode) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let params = self.bind(&mut g, false);
        let xs: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let y = self.forward(&mut g, &params, &xs, mode)?;
        Ok(g.value(y).clone())
    }
}

/// One scalar-loss composition per network, at quarter scale, batch 2.
///
/// A step of 1e-6 keeps the perturbation clear of ReLU and max-pool kinks
/// in deep stacks; truncation error at that step is far below tolerance.
pub(crate) fn gradcheck_cases() -> Vec<GradCase> {
    use Scope::Networks;
    let cases = vec![
        GradCase::new("structure_generator", Networks, 3, |s, h| network_case(NetworkKind::StructureGenerator, s, h)),
        GradCase::new("structure_discriminator", Networks, 3, |s, h| {
            network_case(NetworkKind::StructureDiscriminator, s, h)
        }),
        GradCase::new("style_generator", Networks, 3, |s, h| network_case(NetworkKind::StyleGenerator, s, h)),
        GradCase::new("style_discriminator", Networks, 3, |s, h| network_case(NetworkKind::StyleDiscriminator, s, h)),
        GradCase::new("fcn", Networks, 3, |s, h| network_case(NetworkKind::Fcn, s, h)),
    ];
    cases.into_iter().map(|c| c.with_step(1e-6)).collect()
}

/// Generators: fixed random projection of the output. Discriminators: the
/// adversarial loss with sample 0 real and sample 1 generated. FCN: the
/// pixel-wise loss against random labels.
fn network_case(kind: NetworkKind, seed: u64, step: f64) -> Result<GradCheckReport> {
    let spec = build(kind, Scale::Quarter);
    let init = NetworkParams::<f64>::init(&spec, seed, Init::FanIn)?;
    let batch = 2;
    let mut point = init.tensors.clone();
    let n_params = point.len();
    for (i, inp) in spec.inputs.iter().enumerate() {
        let mut shape = vec![batch];
        shape.extend_from_slice(&inp.shape);
        point.push(smooth_point(seed.wrapping_add(100 + i as u64), &shape));
    }
    let side = spec.scale.style_size();
    let mut r = rng::stream(seed, rng::tag("gradcheck/labels"), 0);
    let labels: Vec<u8> = (0..batch * side * side)
        .map(|_| r.gen_range(1..=NUM_CLASSES as u8))
        .collect();
    let buffers = init.buffers;
    grad_check(
        |g, v| {
            let mut buf = buffers.clone();
            let out = forward(&spec, g, &v[..n_params], &mut buf, &v[n_params..], Mode::Train)?;
            match kind {
                NetworkKind::StructureDiscriminator | NetworkKind::StyleDiscriminator => {
                    let real = g.slice_outer(out, 0, 1)?;
                    let fake = g.slice_outer(out, 1, 2)?;
                    losses::gan_d_loss(g, real, fake)
                }
                NetworkKind::Fcn => losses::fcn_loss(g, out, &labels),
                _ => Ok(out),
            }
        },
        &point,
        step,
        16,
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::*;

    #[test]
    fn fresh_structure_generator_is_bounded() {
        let mut net = Network::<f32>::build(NetworkKind::StructureGenerator, Scale::Quarter, 3).unwrap();
        let y = net.run(&[Tensor::zeros([2, 100])], Mode::Train).unwrap();
        assert_eq!(y.shape(), &[2, 3, 18, 18]);
        assert!(y.data().iter().all(|v| v.is_finite() && *v > -1.0 && *v < 1.0));
    }

    #[test]
    fn eval_is_deterministic() {
        let mut net = Network::<f32>::build(NetworkKind::StyleGenerator, Scale::Quarter, 3).unwrap();
        let n = Tensor::from_fn([1, 3, 32, 32], |i| ((i % 7) as f32 - 3.0) / 3.0);
        let z = Tensor::from_fn([1, 100], |i| ((i % 5) as f32 - 2.0) / 2.0);
        let a = net.run(&[n.clone(), z.clone()], Mode::Eval).unwrap();
        let b = net.run(&[n, z], Mode::Eval).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn full_scale_output_shapes() {
        let cases: [(NetworkKind, Vec<Vec<usize>>, Vec<usize>); 5] = [
            (NetworkKind::StructureGenerator, vec![vec![1, 100]], vec![1, 3, 72, 72]),
            (NetworkKind::StructureDiscriminator, vec![vec![1, 3, 72, 72]], vec![1, 1]),
            (
                NetworkKind::StyleGenerator,
                vec![vec![1, 3, 128, 128], vec![1, 100]],
                vec![1, 3, 128, 128],
            ),
            (
                NetworkKind::StyleDiscriminator,
                vec![vec![1, 3, 128, 128], vec![1, 3, 128, 128]],
                vec![1, 1],
            ),
            (NetworkKind::Fcn, vec![vec![1, 3, 128, 128]], vec![1, 40, 128, 128]),
        ];
        for (kind, ins, out) in cases {
            let mut net = Network::<f32>::build(kind, Scale::Full, 0).unwrap();
            let xs: Vec<Tensor<f32>> = ins.into_iter().map(Tensor::zeros).collect();
            let y = net.run(&xs, Mode::Eval).unwrap();
            assert_eq!(y.shape(), &out[..], "{}", kind.name());
            if matches!(kind, NetworkKind::StructureDiscriminator | NetworkKind::StyleDiscriminator) {
                let s = y.item();
                assert!(s > 0.0 && s < 1.0);
            }
        }
    }

    #[test]
    fn wrong_input_shape_is_config_error() {
        let mut net = Network::<f32>::build(NetworkKind::StructureDiscriminator, Scale::Quarter, 0).unwrap();
        let err = net.run(&[Tensor::zeros([1, 3, 20, 20])], Mode::Eval).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }

    #[test]
    fn train_mode_moves_running_statistics() {
        let mut net = Network::<f32>::build(NetworkKind::StructureGenerator, Scale::Quarter, 1).unwrap();
        let before = net.params.buffers.clone();
        let z = Tensor::from_fn([2, 100], |i| (i as f32 * 0.37).sin());
        net.run(&[z.clone()], Mode::Eval).unwrap();
        assert_eq!(net.params.buffers, before);
        net.run(&[z], Mode::Train).unwrap();
        assert_ne!(net.params.buffers, before);
    }

    #[test]
    fn generators_end_in_tanh_discriminators_in_sigmoid() {
        use crate::Activation;
        for scale in Scale::ALL {
            for kind in NetworkKind::ALL {
                let spec = build(kind, scale);
                let last = *spec.trunk.last().unwrap();
                match kind {
                    NetworkKind::StructureGenerator | NetworkKind::StyleGenerator => {
                        assert_eq!(last, LayerSpec::Act(Activation::Tanh))
                    }
                    NetworkKind::StructureDiscriminator | NetworkKind::StyleDiscriminator => {
                        assert_eq!(last, LayerSpec::Act(Activation::Sigmoid));
                        assert_eq!(spec.count(|l| *l == LayerSpec::BatchNorm), 0);
                    }
                    NetworkKind::Fcn => assert_eq!(spec.count(|l| *l == LayerSpec::BatchNorm), 0),
                }
            }
        }
    }

    #[test]
    fn structure_generator_normalizes_every_hidden_layer() {
        let spec = build_structure_generator(Scale::Full);
        let t = &spec.trunk;
        let mains: Vec<usize> = (0..t.len()).filter(|&i| t[i].is_main()).collect();
        assert_eq!(mains.len(), 10);
        for &i in &mains[..9] {
            assert_eq!(t[i + 1], LayerSpec::BatchNorm);
            assert_eq!(t[i + 2], LayerSpec::Act(crate::Activation::Relu));
        }
        assert_eq!(t.len(), mains[9] + 2);
    }

    #[test]
    fn every_network_passes_gradient_check() {
        for case in gradcheck_cases() {
            let out = case.run(11).unwrap();
            assert!(out.passed, "{}: {:?}", out.name, out.report);
        }
    }
}
