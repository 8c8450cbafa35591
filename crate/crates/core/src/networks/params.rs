use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{shape_audit, LayerSpec, NetworkSpec};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng;
use crate::tensor::Tensor;

/// Standard deviation of the Gaussian weight init.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Weights `N(0, 0.02)`, zero biases, gamma 1, beta 0.
    Dcgan,
    /// Weights `N(0, 1/sqrt(fan_in))` and small random biases, gammas and
    /// betas. Keeps activations O(1) in unnormalized stacks; used for
    /// gradient checks.
    FanIn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Role {
    Weight { fan_in: usize },
    Bias,
    Gamma,
    Beta,
}

/// Learnable tensors of one network plus its batch-norm running statistics.
///
/// Order follows the spec's layers; for each layer weight precedes bias and
/// gamma precedes beta.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<T>>,
    /// `running_mean` / `running_var` pairs, one per batch-norm layer.
    pub buffer_names: Vec<String>,
    pub buffers: Vec<Tensor<T>>,
}

pub(crate) struct Layout {
    pub params: Vec<(String, Vec<usize>, Role)>,
    pub buffers: Vec<(String, Vec<usize>)>,
}

pub(crate) fn layout(spec: &NetworkSpec) -> Result<Layout> {
    let rows = shape_audit(spec)?;
    let mut params = Vec::new();
    let mut buffers = Vec::new();
    for row in &rows {
        let Some(layer) = row.layer else { continue };
        let prefix = alloc::format!("{}.{:02}.{}", row.stage, row.index, row.kind);
        let name = |suffix: &str| alloc::format!("{}.{}", prefix, suffix);
        let in_c = row.input[0];
        match layer {
            LayerSpec::Fc { out, bias, .. } => {
                let fan_in: usize = row.input.iter().product();
                params.push((name("weight"), vec![fan_in, out], Role::Weight { fan_in }));
                if bias {
                    params.push((name("bias"), vec![out], Role::Bias));
                }
            }
            LayerSpec::Conv { out, kernel, bias, .. } => {
                let fan_in = in_c * kernel * kernel;
                params.push((name("weight"), vec![out, in_c, kernel, kernel], Role::Weight { fan_in }));
                if bias {
                    params.push((name("bias"), vec![out], Role::Bias));
                }
            }
            LayerSpec::Uconv {
                out, kernel, stride, bias, ..
            } => {
                // Each output pixel sees about in_c * (k/stride)^2 inputs.
                let fan_in = in_c * (kernel / stride).max(1).pow(2);
                params.push((name("weight"), vec![in_c, out, kernel, kernel], Role::Weight { fan_in }));
                if bias {
                    params.push((name("bias"), vec![out], Role::Bias));
                }
            }
            LayerSpec::BatchNorm => {
                params.push((name("gamma"), vec![in_c], Role::Gamma));
                params.push((name("beta"), vec![in_c], Role::Beta));
                buffers.push((name("running_mean"), vec![in_c]));
                buffers.push((name("running_var"), vec![in_c]));
            }
            LayerSpec::Act(_) | LayerSpec::Upsample { .. } | LayerSpec::MaxPool { .. } => {}
        }
    }
    Ok(Layout { params, buffers })
}

impl<T: Real> NetworkParams<T> {
    /// Seeded initialization; identical `(spec, seed, init)` gives identical
    /// tensors.
    pub fn init(spec: &NetworkSpec, seed: u64, init: Init) -> Result<Self> {
        let layout = layout(spec)?;
        let tag = rng::tag(spec.name());
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (i, (name, shape, role)) in layout.params.into_iter().enumerate() {
            let mut r = rng::stream(seed, tag, i as u64);
            let t = match (init, role) {
                (Init::Dcgan, Role::Weight { .. }) => rng::gaussian(&mut r, &shape, INIT_STD),
                (Init::Dcgan, Role::Bias | Role::Beta) => Tensor::zeros(shape),
                (Init::Dcgan, Role::Gamma) => Tensor::ones(shape),
                (Init::FanIn, Role::Weight { fan_in }) => {
                    rng::gaussian(&mut r, &shape, 1.0 / libm_sqrt(fan_in as f64))
                }
                (Init::FanIn, Role::Bias | Role::Beta) => rng::gaussian(&mut r, &shape, 0.1),
                (Init::FanIn, Role::Gamma) => rng::gaussian::<T>(&mut r, &shape, 0.1).map(|v| v + T::one()),
            };
            names.push(name);
            tensors.push(t);
        }
        let mut buffer_names = Vec::new();
        let mut buffers = Vec::new();
        for (name, shape) in layout.buffers {
            let t = if name.ends_with("running_var") {
                Tensor::ones(shape)
            } else {
                Tensor::zeros(shape)
            };
            buffer_names.push(name);
            buffers.push(t);
        }
        Ok(NetworkParams {
            names,
            tensors,
            buffer_names,
            buffers,
        })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of learnable scalars.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn cast<U: Real>(&self) -> NetworkParams<U> {
        NetworkParams {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            buffer_names: self.buffer_names.clone(),
            buffers: self.buffers.iter().map(Tensor::cast).collect(),
        }
    }

    /// Check names and shapes against the layout of `spec`.
    pub fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        let layout = layout(spec)?;
        let expect = layout
            .params
            .iter()
            .map(|(n, s, _)| (n, s))
            .chain(layout.buffers.iter().map(|(n, s)| (n, s)));
        let have = self
            .names
            .iter()
            .zip(&self.tensors)
            .chain(self.buffer_names.iter().zip(&self.buffers));
        let (ne, nh) = (layout.params.len() + layout.buffers.len(), self.len() + self.buffers.len());
        if ne != nh || self.names.len() != self.tensors.len() || self.buffer_names.len() != self.buffers.len() {
            return Err(Error::Snapshot {
                field: String::from(spec.name()),
                detail: alloc::format!("expected {} tensors, found {}", ne, nh),
            });
        }
        for ((en, es), (hn, ht)) in expect.zip(have) {
            if en != hn || es.as_slice() != ht.shape() {
                return Err(Error::Snapshot {
                    field: hn.clone(),
                    detail: alloc::format!("expected {} {:?}, found {} {:?}", en, es, hn, ht.shape()),
                });
            }
        }
        Ok(())
    }
}

fn libm_sqrt(x: f64) -> f64 {
    num_traits::Float::sqrt(x)
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::*;

    #[test]
    fn names_are_unique_and_counts_stable() {
        for scale in Scale::ALL {
            for kind in NetworkKind::ALL {
                let spec = build(kind, scale);
                let a = NetworkParams::<f32>::init(&spec, 5, Init::Dcgan).unwrap();
                let b = NetworkParams::<f32>::init(&spec, 5, Init::Dcgan).unwrap();
                assert_eq!(a, b);
                let mut names = a.names.clone();
                names.extend(a.buffer_names.iter().cloned());
                let total = names.len();
                names.sort();
                names.dedup();
                assert_eq!(names.len(), total, "{}", spec.describe());
                a.validate(&spec).unwrap();
            }
        }
    }

    #[test]
    fn dcgan_init_statistics() {
        let spec = build_structure_generator(Scale::Full);
        let p = NetworkParams::<f64>::init(&spec, 1, Init::Dcgan).unwrap();
        let w = p.get("trunk.00.fc.weight").unwrap();
        assert_eq!(w.shape(), &[100, 64 * 81]);
        let n = w.numel() as f64;
        let mean = w.data().iter().sum::<f64>() / n;
        let std = (w.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-3);
        assert!((std - 0.02).abs() < 5e-4);
        assert!(p.get("trunk.01.bn.gamma").unwrap().data().iter().all(|&v| v == 1.0));
        assert!(p.get("trunk.01.bn.beta").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn different_seeds_differ() {
        let spec = build_style_discriminator(Scale::Quarter);
        let a = NetworkParams::<f32>::init(&spec, 1, Init::Dcgan).unwrap();
        let b = NetworkParams::<f32>::init(&spec, 2, Init::Dcgan).unwrap();
        assert_ne!(a.tensors[0], b.tensors[0]);
    }

    #[test]
    fn discriminators_have_no_batch_norm_parameters() {
        for kind in [NetworkKind::StructureDiscriminator, NetworkKind::StyleDiscriminator, NetworkKind::Fcn] {
            let p = NetworkParams::<f32>::init(&build(kind, Scale::Full), 0, Init::Dcgan).unwrap();
            assert!(p.buffers.is_empty());
            assert!(!p.names.iter().any(|n| n.contains(".bn.")));
        }
    }

    #[test]
    fn validate_rejects_wrong_shape() {
        let spec = build_structure_discriminator(Scale::Quarter);
        let mut p = NetworkParams::<f32>::init(&spec, 0, Init::Dcgan).unwrap();
        p.tensors[0] = Tensor::zeros([1]);
        assert!(matches!(p.validate(&spec), Err(Error::Snapshot { .. })));
    }
}
