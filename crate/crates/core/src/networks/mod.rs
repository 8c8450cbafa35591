//! Architecture specs, parameters and forward passes for the five networks.
//!
//! A [`NetworkSpec`] is a plain description: one layer list per input
//! (branches), whose outputs are stacked along channels, followed by a trunk.
//! [`shape_audit`] propagates shapes symbolically; [`forward`] runs the spec
//! on a [`Graph`](crate::Graph).

use alloc::string::String;
use alloc::vec::Vec;

use crate::autodiff::Activation;
use crate::error::{Error, Result};

mod audit;
mod builders;
mod forward;
mod params;

pub use audit::{shape_audit, table, AuditRow};
pub use builders::{
    build, build_fcn, build_structure_discriminator, build_structure_generator, build_style_discriminator,
    build_style_generator,
};
pub use forward::{forward, Mode, Network};
pub use params::{Init, NetworkParams};

pub(crate) use forward::gradcheck_cases;

/// Uniform size multiplier for desk-scale variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scale {
    Full,
    Half,
    Quarter,
}

impl Scale {
    pub const ALL: [Scale; 3] = [Scale::Full, Scale::Half, Scale::Quarter];

    pub fn factor(self) -> f64 {
        match self {
            Scale::Full => 1.0,
            Scale::Half => 0.5,
            Scale::Quarter => 0.25,
        }
    }

    /// Number of halvings relative to full scale.
    pub fn halvings(self) -> usize {
        match self {
            Scale::Full => 0,
            Scale::Half => 1,
            Scale::Quarter => 2,
        }
    }

    /// Channel count at this scale, never below 8.
    pub fn channels(self, full: usize) -> usize {
        (full >> self.halvings()).max(8)
    }

    /// Side of the generated normal maps (72 at full scale).
    pub fn structure_size(self) -> usize {
        72 >> self.halvings()
    }

    /// Side of images and style-stage normals (128 at full scale).
    pub fn style_size(self) -> usize {
        128 >> self.halvings()
    }

    pub fn label(self) -> &'static str {
        match self {
            Scale::Full => "1",
            Scale::Half => "1/2",
            Scale::Quarter => "1/4",
        }
    }

    pub fn parse(s: &str) -> Result<Scale> {
        match s.trim() {
            "1" | "1.0" | "full" => Ok(Scale::Full),
            "1/2" | "0.5" | "half" => Ok(Scale::Half),
            "1/4" | "0.25" | "quarter" => Ok(Scale::Quarter),
            other => Err(Error::config(
                "scale",
                alloc::format!("unsupported scale {:?}; use 1, 1/2 or 1/4", other),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NetworkKind {
    StructureGenerator,
    StructureDiscriminator,
    StyleGenerator,
    StyleDiscriminator,
    Fcn,
}

impl NetworkKind {
    pub const ALL: [NetworkKind; 5] = [
        NetworkKind::StructureGenerator,
        NetworkKind::StructureDiscriminator,
        NetworkKind::StyleGenerator,
        NetworkKind::StyleDiscriminator,
        NetworkKind::Fcn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NetworkKind::StructureGenerator => "structure_generator",
            NetworkKind::StructureDiscriminator => "structure_discriminator",
            NetworkKind::StyleGenerator => "style_generator",
            NetworkKind::StyleDiscriminator => "style_discriminator",
            NetworkKind::Fcn => "fcn",
        }
    }

    /// Heading used by the table printer.
    pub fn title(self) -> &'static str {
        match self {
            NetworkKind::StructureGenerator => "Structure-GAN(G)",
            NetworkKind::StructureDiscriminator => "Structure-GAN(D)",
            NetworkKind::StyleGenerator => "Style-GAN(G)",
            NetworkKind::StyleDiscriminator => "Style-GAN(D)",
            NetworkKind::Fcn => "FCN",
        }
    }
}

/// One layer of a spec.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    /// Fully connected; 4-D inputs are flattened first. With `reshape`, the
    /// output is viewed as `[N, c, h, w]`.
    Fc { out: usize, reshape: Option<[usize; 3]>, bias: bool },
    Conv { out: usize, kernel: usize, stride: usize, pad: usize, bias: bool },
    /// Fractionally strided convolution; must double the spatial size.
    Uconv { out: usize, kernel: usize, stride: usize, pad: usize, bias: bool },
    BatchNorm,
    Act(Activation),
    /// Bilinear upsampling by an integer factor.
    Upsample { factor: usize },
    MaxPool { kernel: usize, stride: usize, pad: usize },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Fc { .. } => "fc",
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Uconv { .. } => "uconv",
            LayerSpec::BatchNorm => "bn",
            LayerSpec::Act(a) => a.name(),
            LayerSpec::Upsample { .. } => "upsample",
            LayerSpec::MaxPool { .. } => "maxpool",
        }
    }

    /// fc, conv and uconv: the columns of the architecture table.
    pub fn is_main(&self) -> bool {
        matches!(self, LayerSpec::Fc { .. } | LayerSpec::Conv { .. } | LayerSpec::Uconv { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputSpec {
    pub name: &'static str,
    /// Per-sample shape, without the batch axis.
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub name: &'static str,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub kind: NetworkKind,
    pub scale: Scale,
    pub inputs: Vec<InputSpec>,
    /// One per input. With several inputs the branch outputs are stacked
    /// along channels before the trunk.
    pub branches: Vec<Branch>,
    pub trunk: Vec<LayerSpec>,
    /// Per-sample output shape.
    pub output: Vec<usize>,
}

impl NetworkSpec {
    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    /// All layers in evaluation order with their stage name.
    pub fn layers(&self) -> impl Iterator<Item = (&'static str, &LayerSpec)> {
        self.branches
            .iter()
            .flat_map(|b| b.layers.iter().map(move |l| (b.name, l)))
            .chain(self.trunk.iter().map(|l| ("trunk", l)))
    }

    pub fn count(&self, pred: impl Fn(&LayerSpec) -> bool) -> usize {
        self.layers().filter(|(_, l)| pred(l)).count()
    }

    pub fn describe(&self) -> String {
        alloc::format!("{} at scale {}", self.name(), self.scale.label())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_rule() {
        assert_eq!(Scale::Quarter.channels(64), 16);
        assert_eq!(Scale::Quarter.channels(3), 8);
        assert_eq!(Scale::Half.channels(512), 256);
        assert_eq!(Scale::Quarter.structure_size(), 18);
        assert_eq!(Scale::Quarter.style_size(), 32);
        assert_eq!(Scale::parse("1/4").unwrap(), Scale::Quarter);
        assert_eq!(Scale::parse("0.5").unwrap(), Scale::Half);
        assert!(Scale::parse("1/3").is_err());
    }
}
