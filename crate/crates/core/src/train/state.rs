//! Everything a run needs to resume, and its flat named-array form.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::adam::{AdamConfig, AdamState};
use super::{kind_index, Digest, Phase};
use crate::error::{Error, Result};
use crate::networks::{build, Network, NetworkKind, NetworkParams, Scale};
use crate::real::Real;
use crate::synth::NormalCodebook;
use crate::tensor::Tensor;

/// Typed payload of a [`NamedArray`].
#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U64(Vec<u64>),
    U8(Vec<u8>),
}

impl ArrayData {
    pub fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
            ArrayData::U64(v) => v.len(),
            ArrayData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> &'static str {
        match self {
            ArrayData::F32(_) => "f32",
            ArrayData::F64(_) => "f64",
            ArrayData::U64(_) => "u64",
            ArrayData::U8(_) => "u8",
        }
    }

    fn from_real<T: Real>(values: &[T]) -> Self {
        if T::NAME == "f32" {
            ArrayData::F32(values.iter().map(|&v| v.to_f64() as f32).collect())
        } else {
            ArrayData::F64(values.iter().map(|&v| v.to_f64()).collect())
        }
    }

    fn to_real<T: Real>(&self, field: &str) -> Result<Vec<T>> {
        match self {
            ArrayData::F32(v) if T::NAME == "f32" => Ok(v.iter().map(|&x| T::lit(x as f64)).collect()),
            ArrayData::F64(v) if T::NAME == "f64" => Ok(v.iter().map(|&x| T::lit(x)).collect()),
            other => Err(snapshot_err(
                field,
                format!("stored as {}, expected {}", other.dtype(), T::NAME),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

impl NamedArray {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: ArrayData) -> Self {
        NamedArray {
            name: name.into(),
            shape,
            data,
        }
    }
}

fn snapshot_err(field: &str, detail: impl Into<String>) -> Error {
    Error::Snapshot {
        field: field.to_string(),
        detail: detail.into(),
    }
}

/// Networks, optimizer moments, counters and the codebook.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T> {
    pub scale: Scale,
    pub phase: Phase,
    /// Iterations finished in the current phase.
    pub iteration: u64,
    pub completed: Vec<Phase>,
    /// Indexed in [`NetworkKind::ALL`] order.
    pub nets: Vec<Network<T>>,
    pub adam: Vec<AdamState<T>>,
    /// Consecutive iterations with the guarded loss above the ceiling.
    pub guard_streak: usize,
    pub codebook: NormalCodebook,
    pub config_digest: u64,
}

impl<T: Real> TrainState<T> {
    /// Fresh networks seeded from `seed`; zeroed optimizers.
    pub fn new(scale: Scale, seed: u64, codebook: NormalCodebook, config_digest: u64) -> Result<Self> {
        let nets = NetworkKind::ALL
            .iter()
            .map(|&k| Network::build(k, scale, seed))
            .collect::<Result<Vec<_>>>()?;
        let adam = nets
            .iter()
            .map(|n| AdamState::new(AdamConfig::new(0.0), &n.params.tensors))
            .collect();
        Ok(TrainState {
            scale,
            phase: Phase::Structure,
            iteration: 0,
            completed: Vec::new(),
            nets,
            adam,
            guard_streak: 0,
            codebook,
            config_digest,
        })
    }

    pub fn net(&self, kind: NetworkKind) -> &Network<T> {
        &self.nets[kind_index(kind)]
    }

    pub fn net_mut(&mut self, kind: NetworkKind) -> &mut Network<T> {
        &mut self.nets[kind_index(kind)]
    }

    pub fn adam(&self, kind: NetworkKind) -> &AdamState<T> {
        &self.adam[kind_index(kind)]
    }

    pub fn has_completed(&self, phase: Phase) -> bool {
        self.completed.contains(&phase)
    }

    /// FNV-1a over the bit patterns of one network's parameters and buffers.
    pub fn param_digest(&self, kind: NetworkKind) -> u64 {
        let p = &self.net(kind).params;
        let mut h = Digest::new();
        for t in p.tensors.iter().chain(&p.buffers) {
            for v in t.data() {
                h.u64(Real::to_f64(*v).to_bits());
            }
        }
        h.finish()
    }

    /// Flatten into named arrays. Names are stable; restoring reads them
    /// back by name.
    pub fn snapshot(&self) -> Vec<NamedArray> {
        let mut out = vec![
            NamedArray::new("meta.scale", vec![1], ArrayData::U8(vec![self.scale.halvings() as u8])),
            NamedArray::new("meta.phase", vec![1], ArrayData::U8(vec![self.phase.index()])),
            NamedArray::new("meta.iteration", vec![1], ArrayData::U64(vec![self.iteration])),
            NamedArray::new(
                "meta.completed",
                vec![self.completed.len()],
                ArrayData::U8(self.completed.iter().map(|p| p.index()).collect()),
            ),
            NamedArray::new("meta.guard_streak", vec![1], ArrayData::U64(vec![self.guard_streak as u64])),
            NamedArray::new("meta.config_digest", vec![1], ArrayData::U64(vec![self.config_digest])),
            NamedArray::new(
                "codebook.centroids",
                vec![self.codebook.len(), 3],
                ArrayData::F64(self.codebook.centroids.iter().flatten().copied().collect()),
            ),
        ];
        for (net, adam) in self.nets.iter().zip(&self.adam) {
            let prefix = net.spec.name();
            let p = &net.params;
            for (name, t) in p.names.iter().zip(&p.tensors) {
                out.push(tensor_array(format!("{}.param.{}", prefix, name), t));
            }
            for (name, t) in p.buffer_names.iter().zip(&p.buffers) {
                out.push(tensor_array(format!("{}.buffer.{}", prefix, name), t));
            }
            let c = adam.config;
            out.push(NamedArray::new(
                format!("{}.adam.config", prefix),
                vec![4],
                ArrayData::F64(vec![c.lr, c.beta1, c.beta2, c.eps]),
            ));
            out.push(NamedArray::new(
                format!("{}.adam.step", prefix),
                vec![1],
                ArrayData::U64(vec![adam.step]),
            ));
            for (name, (m, v)) in p.names.iter().zip(adam.m.iter().zip(&adam.v)) {
                out.push(tensor_array(format!("{}.adam.m.{}", prefix, name), m));
                out.push(tensor_array(format!("{}.adam.v.{}", prefix, name), v));
            }
        }
        out
    }

    /// Inverse of [`snapshot`](Self::snapshot). Every expected field must be
    /// present with the expected shape and element type.
    pub fn restore(arrays: &[NamedArray]) -> Result<Self> {
        let lookup = Lookup(arrays);
        let scale = match lookup.u8s("meta.scale")?.as_slice() {
            [0] => Scale::Full,
            [1] => Scale::Half,
            [2] => Scale::Quarter,
            other => return Err(snapshot_err("meta.scale", format!("bad value {:?}", other))),
        };
        let phase = phase_of(lookup.scalar_u8("meta.phase")?, "meta.phase")?;
        let iteration = lookup.scalar_u64("meta.iteration")?;
        let completed = lookup
            .u8s("meta.completed")?
            .into_iter()
            .map(|i| phase_of(i, "meta.completed"))
            .collect::<Result<Vec<_>>>()?;
        let guard_streak = lookup.scalar_u64("meta.guard_streak")? as usize;
        let config_digest = lookup.scalar_u64("meta.config_digest")?;
        let cb = lookup.get("codebook.centroids")?;
        let centroids: Vec<[f64; 3]> = match &cb.data {
            ArrayData::F64(v) if cb.shape.len() == 2 && cb.shape[1] == 3 && v.len() == cb.shape[0] * 3 => {
                v.chunks(3).map(|c| [c[0], c[1], c[2]]).collect()
            }
            _ => return Err(snapshot_err("codebook.centroids", "expected f64 [k, 3]")),
        };
        let codebook = NormalCodebook::from_unit(centroids)?;

        let mut nets = Vec::new();
        let mut adam = Vec::new();
        for kind in NetworkKind::ALL {
            let spec = build(kind, scale);
            let prefix = spec.name();
            // Fresh layout gives names and shapes; values come from the
            // snapshot.
            let mut params: NetworkParams<T> = NetworkParams::init(&spec, 0, crate::networks::Init::Dcgan)?;
            for (name, t) in params.names.iter().zip(params.tensors.iter_mut()) {
                *t = lookup.tensor(&format!("{}.param.{}", prefix, name), t.shape())?;
            }
            for (name, t) in params.buffer_names.iter().zip(params.buffers.iter_mut()) {
                *t = lookup.tensor(&format!("{}.buffer.{}", prefix, name), t.shape())?;
            }
            let field = format!("{}.adam.config", prefix);
            let config = match &lookup.get(&field)?.data {
                ArrayData::F64(v) if v.len() == 4 => AdamConfig {
                    lr: v[0],
                    beta1: v[1],
                    beta2: v[2],
                    eps: v[3],
                },
                _ => return Err(snapshot_err(&field, "expected 4 f64 values")),
            };
            let step = lookup.scalar_u64(&format!("{}.adam.step", prefix))?;
            let mut m = Vec::new();
            let mut v = Vec::new();
            for (name, t) in params.names.iter().zip(&params.tensors) {
                m.push(lookup.tensor(&format!("{}.adam.m.{}", prefix, name), t.shape())?);
                v.push(lookup.tensor(&format!("{}.adam.v.{}", prefix, name), t.shape())?);
            }
            nets.push(Network { spec, params });
            adam.push(AdamState { config, step, m, v });
        }
        Ok(TrainState {
            scale,
            phase,
            iteration,
            completed,
            nets,
            adam,
            guard_streak,
            codebook,
            config_digest,
        })
    }
}

fn tensor_array<T: Real>(name: String, t: &Tensor<T>) -> NamedArray {
    NamedArray::new(name, t.shape().to_vec(), ArrayData::from_real(t.data()))
}

fn phase_of(i: u8, field: &str) -> Result<Phase> {
    Phase::ALL
        .get(i as usize)
        .copied()
        .ok_or_else(|| snapshot_err(field, format!("unknown phase index {}", i)))
}

struct Lookup<'a>(&'a [NamedArray]);

impl Lookup<'_> {
    fn get(&self, name: &str) -> Result<&NamedArray> {
        self.0
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| snapshot_err(name, "missing"))
    }

    fn u8s(&self, name: &str) -> Result<Vec<u8>> {
        match &self.get(name)?.data {
            ArrayData::U8(v) => Ok(v.clone()),
            other => Err(snapshot_err(name, format!("expected u8, found {}", other.dtype()))),
        }
    }

    fn scalar_u8(&self, name: &str) -> Result<u8> {
        match self.u8s(name)?.as_slice() {
            [x] => Ok(*x),
            other => Err(snapshot_err(name, format!("expected one value, found {}", other.len()))),
        }
    }

    fn scalar_u64(&self, name: &str) -> Result<u64> {
        match &self.get(name)?.data {
            ArrayData::U64(v) if v.len() == 1 => Ok(v[0]),
            other => Err(snapshot_err(name, format!("expected one u64, found {} {}", other.len(), other.dtype()))),
        }
    }

    fn tensor<T: Real>(&self, name: &str, shape: &[usize]) -> Result<Tensor<T>> {
        let a = self.get(name)?;
        if a.shape != shape {
            return Err(snapshot_err(name, format!("expected shape {:?}, found {:?}", shape, a.shape)));
        }
        let data = a.data.to_real::<T>(name)?;
        Tensor::new(shape.to_vec(), data).map_err(|_| snapshot_err(name, "length does not match shape"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn codebook() -> NormalCodebook {
        NormalCodebook::new((0..40).map(|i| [i as f64, 1.0, 2.0]).collect()).unwrap()
    }

    #[test]
    fn snapshot_round_trip_is_exact() {
        let mut s: TrainState<f32> = TrainState::new(Scale::Quarter, 3, codebook(), 99).unwrap();
        s.iteration = 17;
        s.completed = vec![Phase::Structure, Phase::FcnPretrain];
        s.guard_streak = 4;
        s.adam[1].step = 5;
        s.adam[1].m[0].data_mut()[0] = 0.125;
        s.nets[0].params.buffers[0].data_mut()[1] = -3.5;
        let back = TrainState::<f32>::restore(&s.snapshot()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn missing_field_is_named() {
        let s: TrainState<f32> = TrainState::new(Scale::Quarter, 3, codebook(), 0).unwrap();
        let mut arrays = s.snapshot();
        let i = arrays.iter().position(|a| a.name.contains(".adam.v.")).unwrap();
        let name = arrays.remove(i).name;
        match TrainState::<f32>::restore(&arrays).unwrap_err() {
            Error::Snapshot { field, .. } => assert_eq!(field, name),
            other => panic!("{:?}", other),
        }
    }

    #[test]
    fn wrong_precision_is_rejected() {
        let s: TrainState<f32> = TrainState::new(Scale::Quarter, 3, codebook(), 0).unwrap();
        assert!(matches!(
            TrainState::<f64>::restore(&s.snapshot()),
            Err(Error::Snapshot { .. })
        ));
    }

    #[test]
    fn digest_sees_single_bit() {
        let mut s: TrainState<f32> = TrainState::new(Scale::Quarter, 3, codebook(), 0).unwrap();
        let before = s.param_digest(NetworkKind::Fcn);
        let x = &mut s.nets[4].params.tensors[0].data_mut()[0];
        *x = f32::from_bits(x.to_bits() ^ 1);
        assert_ne!(before, s.param_digest(NetworkKind::Fcn));
    }
}
