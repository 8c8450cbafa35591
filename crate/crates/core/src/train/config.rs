//! Hyperparameters for every phase.

use crate::losses::DEFAULT_LAMBDA;
use crate::networks::Scale;

use super::Phase;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub scale: Scale,
    pub seed: u64,
    /// Scenes per batch: half real, half generated.
    pub batch_size: usize,
    /// Training scenes per epoch.
    pub data_count: usize,
    /// Training scenes the codebook is fit on.
    pub codebook_scenes: usize,
    pub lr_structure: f64,
    pub lr_style: f64,
    pub lr_fcn: f64,
    /// Style-GAN learning rate in the joint phase.
    pub lr_joint_style: f64,
    /// Style : Structure learning-rate ratio in the joint phase.
    pub joint_lr_ratio: f64,
    pub lambda: f64,
    /// Weight of the FCN term in the style generator loss.
    pub fcn_weight: f64,
    /// Keep updating the style D and G while the FCN is fine-tuned.
    pub finetune_gan: bool,
    pub epochs_structure: u64,
    pub epochs_fcn: u64,
    pub epochs_style: u64,
    pub epochs_finetune: u64,
    pub epochs_joint: u64,
    /// Iteration caps; when set they replace the epoch counts.
    pub iters_structure: Option<u64>,
    pub iters_fcn: Option<u64>,
    pub iters_style: Option<u64>,
    pub iters_finetune: Option<u64>,
    pub iters_joint: Option<u64>,
    pub divergence_ceiling: f64,
    pub divergence_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            scale: Scale::Full,
            seed: 0,
            batch_size: 128,
            data_count: 4096,
            codebook_scenes: 32,
            lr_structure: 2e-4,
            lr_style: 2e-4,
            lr_fcn: 2e-4,
            lr_joint_style: 1e-6,
            joint_lr_ratio: 10.0,
            lambda: DEFAULT_LAMBDA,
            fcn_weight: 1.0,
            finetune_gan: true,
            epochs_structure: 25,
            epochs_fcn: 25,
            epochs_style: 25,
            epochs_finetune: 5,
            epochs_joint: 5,
            iters_structure: None,
            iters_fcn: None,
            iters_style: None,
            iters_finetune: None,
            iters_joint: None,
            divergence_ceiling: 15.0,
            divergence_patience: 100,
        }
    }
}

impl TrainConfig {
    /// Quarter scale, batch 16, a small scene pool and the given iteration
    /// cap on every phase.
    pub fn desk(seed: u64, iterations: u64) -> Self {
        let cap = Some(iterations);
        TrainConfig {
            scale: Scale::Quarter,
            seed,
            batch_size: 16,
            data_count: 1024,
            iters_structure: cap,
            iters_fcn: cap,
            iters_style: cap,
            iters_finetune: cap,
            iters_joint: cap,
            ..TrainConfig::default()
        }
    }

    /// Structure-GAN learning rate in the joint phase.
    pub fn lr_joint_structure(&self) -> f64 {
        self.lr_joint_style / self.joint_lr_ratio
    }

    pub fn batches_per_epoch(&self) -> u64 {
        (self.data_count / self.batch_size.max(1)) as u64
    }

    pub fn iterations(&self, phase: Phase) -> u64 {
        let (cap, epochs) = match phase {
            Phase::FcnPretrain => (self.iters_fcn, self.epochs_fcn),
            Phase::Structure => (self.iters_structure, self.epochs_structure),
            Phase::StyleFrozenFcn => (self.iters_style, self.epochs_style),
            Phase::StyleFinetuneFcn => (self.iters_finetune, self.epochs_finetune),
            Phase::Joint => (self.iters_joint, self.epochs_joint),
        };
        cap.unwrap_or(epochs * self.batches_per_epoch())
    }

    /// FNV-1a over the fields in a fixed order; stored in checkpoints.
    pub fn digest(&self) -> u64 {
        let mut h = super::Digest::new();
        h.bytes(self.scale.label().as_bytes());
        for v in [
            self.seed,
            self.batch_size as u64,
            self.data_count as u64,
            self.codebook_scenes as u64,
            self.finetune_gan as u64,
            self.epochs_structure,
            self.epochs_fcn,
            self.epochs_style,
            self.epochs_finetune,
            self.epochs_joint,
            self.divergence_patience as u64,
        ] {
            h.u64(v);
        }
        for v in [
            self.lr_structure,
            self.lr_style,
            self.lr_fcn,
            self.lr_joint_style,
            self.joint_lr_ratio,
            self.lambda,
            self.fcn_weight,
            self.divergence_ceiling,
        ] {
            h.u64(v.to_bits());
        }
        for v in [
            self.iters_structure,
            self.iters_fcn,
            self.iters_style,
            self.iters_finetune,
            self.iters_joint,
        ] {
            h.u64(v.map_or(u64::MAX, |x| x));
        }
        h.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_hyperparameters() {
        let c = TrainConfig::default();
        assert_eq!(c.batch_size, 128);
        assert_eq!(c.lr_structure, 2e-4);
        assert_eq!(c.lr_style, 2e-4);
        assert_eq!(c.lambda, 0.1);
        assert_eq!(c.lr_joint_style, 1e-6);
        assert!((c.lr_joint_structure() - 1e-7).abs() < 1e-20);
        assert_eq!(c.lr_joint_style / c.lr_joint_structure(), 10.0);
        assert_eq!((c.epochs_structure, c.epochs_style, c.epochs_finetune, c.epochs_joint), (25, 25, 5, 5));
    }

    #[test]
    fn caps_override_epochs() {
        let mut c = TrainConfig::default();
        assert_eq!(c.iterations(Phase::Structure), 25 * 32);
        c.iters_structure = Some(7);
        assert_eq!(c.iterations(Phase::Structure), 7);
        assert_eq!(TrainConfig::desk(0, 9).iterations(Phase::Joint), 9);
    }

    #[test]
    fn digest_tracks_fields() {
        let a = TrainConfig::default();
        let mut b = a;
        assert_eq!(a.digest(), b.digest());
        b.lambda = 0.2;
        assert_ne!(a.digest(), b.digest());
    }
}
