//! Flat `key = value` run configuration.

use std::fs;
use std::path::{Path, PathBuf};

use s2gan_core::networks::Scale;
use s2gan_core::train::TrainConfig;

use crate::error::{Error, Result};

pub const DEFAULT_CHECKPOINT_EVERY: u64 = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub out_dir: PathBuf,
    /// Iterations between periodic checkpoints.
    pub checkpoint_every: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            out_dir: PathBuf::from("out"),
            checkpoint_every: DEFAULT_CHECKPOINT_EVERY,
        }
    }
}

pub const KEYS: &[&str] = &[
    "scale",
    "seed",
    "batch_size",
    "data_count",
    "codebook_scenes",
    "lr_structure",
    "lr_style",
    "lr_fcn",
    "lr_joint_style",
    "joint_lr_ratio",
    "lambda",
    "fcn_weight",
    "finetune_gan",
    "epochs_structure",
    "epochs_fcn",
    "epochs_style",
    "epochs_finetune",
    "epochs_joint",
    "iters_structure",
    "iters_fcn",
    "iters_style",
    "iters_finetune",
    "iters_joint",
    "iters",
    "divergence_ceiling",
    "divergence_patience",
    "checkpoint_every",
    "out_dir",
];

impl RunConfig {
    /// Apply one key. `iters` caps every phase at once.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<V: std::str::FromStr>(v: &str) -> std::result::Result<V, String> {
            v.parse().map_err(|_| format!("cannot parse {:?}", v))
        }
        let t = &mut self.train;
        match key {
            "scale" => t.scale = Scale::parse(value).map_err(|e| e.to_string())?,
            "seed" => t.seed = num(value)?,
            "batch_size" => t.batch_size = num(value)?,
            "data_count" => t.data_count = num(value)?,
            "codebook_scenes" => t.codebook_scenes = num(value)?,
            "lr_structure" => t.lr_structure = num(value)?,
            "lr_style" => t.lr_style = num(value)?,
            "lr_fcn" => t.lr_fcn = num(value)?,
            "lr_joint_style" => t.lr_joint_style = num(value)?,
            "joint_lr_ratio" => t.joint_lr_ratio = num(value)?,
            "lambda" => t.lambda = num(value)?,
            "fcn_weight" => t.fcn_weight = num(value)?,
            "finetune_gan" => t.finetune_gan = num(value)?,
            "epochs_structure" => t.epochs_structure = num(value)?,
            "epochs_fcn" => t.epochs_fcn = num(value)?,
            "epochs_style" => t.epochs_style = num(value)?,
            "epochs_finetune" => t.epochs_finetune = num(value)?,
            "epochs_joint" => t.epochs_joint = num(value)?,
            "iters_structure" => t.iters_structure = Some(num(value)?),
            "iters_fcn" => t.iters_fcn = Some(num(value)?),
            "iters_style" => t.iters_style = Some(num(value)?),
            "iters_finetune" => t.iters_finetune = Some(num(value)?),
            "iters_joint" => t.iters_joint = Some(num(value)?),
            "iters" => {
                let n = Some(num(value)?);
                t.iters_structure = n;
                t.iters_fcn = n;
                t.iters_style = n;
                t.iters_finetune = n;
                t.iters_joint = n;
            }
            "divergence_ceiling" => t.divergence_ceiling = num(value)?,
            "divergence_patience" => t.divergence_patience = num(value)?,
            "checkpoint_every" => self.checkpoint_every = num(value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            _ => return Err(format!("unknown key {:?}; known keys: {}", key, KEYS.join(", "))),
        }
        Ok(())
    }

    /// `#` starts a comment; blank lines are ignored.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut c = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("{}:{}: expected key = value", path.display(), i + 1)))?;
            c.set(k.trim(), v.trim())
                .map_err(|m| Error::Usage(format!("{}:{}: {}: {}", path.display(), i + 1, k.trim(), m)))?;
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_keys() {
        let text = "# desk run\nscale = 1/4\nseed=7\nbatch_size = 16\nlr_style = 1e-4 # slower\niters = 50\niters_joint = 9\nout_dir = runs/a\nfinetune_gan = false\n";
        let c = RunConfig::parse(text, Path::new("x.conf")).unwrap();
        assert_eq!(c.train.scale, Scale::Quarter);
        assert_eq!(c.train.seed, 7);
        assert_eq!(c.train.batch_size, 16);
        assert_eq!(c.train.lr_style, 1e-4);
        assert_eq!(c.train.iters_structure, Some(50));
        assert_eq!(c.train.iters_joint, Some(9));
        assert!(!c.train.finetune_gan);
        assert_eq!(c.out_dir, PathBuf::from("runs/a"));
    }

    #[test]
    fn errors_name_line_and_key() {
        let e = RunConfig::parse("seed = 1\nlamda = 2\n", Path::new("c")).unwrap_err();
        assert!(e.to_string().starts_with("c:2: lamda: unknown key"), "{}", e);
        let e = RunConfig::parse("seed 1\n", Path::new("c")).unwrap_err();
        assert_eq!(e.exit_code(), 1);
    }

    #[test]
    fn every_listed_key_is_accepted() {
        for k in KEYS {
            let v = match *k {
                "scale" => "1/2",
                "finetune_gan" => "true",
                "out_dir" => "o",
                _ => "3",
            };
            RunConfig::default().set(k, v).unwrap();
        }
    }
}
