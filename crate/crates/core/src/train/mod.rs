//! Adam and the training phases: FCN pretraining, Structure-GAN,
//! Style-GAN with the FCN constraint (frozen, then fine-tuned) and joint
//! learning.
//!
//! One [`Trainer`] owns every network. Each iteration shares one graph: the
//! generators run once, each discriminator is updated on detached samples,
//! and the generators are then updated against the updated discriminators.

mod adam;
mod config;
mod metrics;
mod state;
mod trainer;

pub use adam::{AdamConfig, AdamState, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPS};
pub use config::TrainConfig;
pub use metrics::{
    argmax_labels, discriminator_accuracy, fcn_label_map, fcn_normal_error, fcn_pixel_accuracy, mean_angular_error,
    mean_norm_deviation,
    normals_from_tensor,
};
pub use state::{ArrayData, NamedArray, TrainState};
pub use trainer::{Control, DivergenceGuard, IterationRecord, Observer, Trainer, Update};

use crate::error::{Error, Result};
use crate::networks::NetworkKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    FcnPretrain,
    Structure,
    StyleFrozenFcn,
    StyleFinetuneFcn,
    Joint,
}

impl Phase {
    pub const ALL: [Phase; 5] = [
        Phase::FcnPretrain,
        Phase::Structure,
        Phase::StyleFrozenFcn,
        Phase::StyleFinetuneFcn,
        Phase::Joint,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::FcnPretrain => "fcn-pretrain",
            Phase::Structure => "structure",
            Phase::StyleFrozenFcn => "style-frozen-fcn",
            Phase::StyleFinetuneFcn => "style-finetune-fcn",
            Phase::Joint => "joint",
        }
    }

    pub fn parse(s: &str) -> Result<Phase> {
        Phase::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::config("phase", alloc::format!("unknown phase {:?}", s)))
    }

    pub fn index(self) -> u8 {
        Phase::ALL.iter().position(|&p| p == self).expect("listed") as u8
    }

    /// Networks whose parameters this phase updates.
    pub fn trainable(self) -> &'static [NetworkKind] {
        use NetworkKind::*;
        match self {
            Phase::FcnPretrain => &[Fcn],
            Phase::Structure => &[StructureGenerator, StructureDiscriminator],
            Phase::StyleFrozenFcn => &[StyleGenerator, StyleDiscriminator],
            Phase::StyleFinetuneFcn => &[StyleGenerator, StyleDiscriminator, Fcn],
            Phase::Joint => &[
                StructureGenerator,
                StructureDiscriminator,
                StyleGenerator,
                StyleDiscriminator,
            ],
        }
    }

    /// Phases that must have finished before this one starts.
    pub fn requires(self) -> &'static [Phase] {
        match self {
            Phase::FcnPretrain | Phase::Structure => &[],
            Phase::StyleFrozenFcn => &[Phase::FcnPretrain],
            Phase::StyleFinetuneFcn => &[Phase::StyleFrozenFcn],
            Phase::Joint => &[Phase::Structure, Phase::StyleFrozenFcn],
        }
    }
}

impl core::fmt::Display for Phase {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

pub(crate) fn kind_index(kind: NetworkKind) -> usize {
    NetworkKind::ALL.iter().position(|&k| k == kind).expect("listed")
}

/// 64-bit FNV-1a.
#[derive(Debug, Clone, Copy)]
pub struct Digest(u64);

impl Default for Digest {
    fn default() -> Self {
        Self::new()
    }
}

impl Digest {
    pub fn new() -> Self {
        Digest(0xcbf2_9ce4_8422_2325)
    }

    pub fn bytes(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn finish(self) -> u64 {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phase_names_round_trip() {
        for p in Phase::ALL {
            assert_eq!(Phase::parse(p.name()).unwrap(), p);
        }
        assert!(Phase::parse("warmup").is_err());
    }

    #[test]
    fn fcn_path_only_in_style_phases() {
        for p in Phase::ALL {
            let fcn = p.trainable().contains(&NetworkKind::Fcn);
            assert_eq!(fcn, matches!(p, Phase::FcnPretrain | Phase::StyleFinetuneFcn), "{}", p);
        }
        assert!(!Phase::StyleFrozenFcn.trainable().contains(&NetworkKind::Fcn));
        assert!(!Phase::Joint.trainable().contains(&NetworkKind::Fcn));
    }
}
