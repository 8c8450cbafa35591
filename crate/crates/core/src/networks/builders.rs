use alloc::vec;
use alloc::vec::Vec;

use super::{Branch, InputSpec, LayerSpec, NetworkKind, NetworkSpec, Scale};
use crate::autodiff::Activation;
use crate::{NOISE_DIM, NUM_CLASSES};

const RELU: LayerSpec = LayerSpec::Act(Activation::Relu);

fn leaky() -> LayerSpec {
    LayerSpec::Act(Activation::leaky())
}

/// Convolution with padding `(k-1)/2`: same size at stride 1, halves at
/// stride 2.
fn conv(out: usize, kernel: usize, stride: usize, bias: bool) -> LayerSpec {
    LayerSpec::Conv {
        out,
        kernel,
        stride,
        pad: (kernel - 1) / 2,
        bias,
    }
}

/// Kernel 4, stride 2, pad 1: exactly doubles the spatial size.
fn uconv(out: usize, bias: bool) -> LayerSpec {
    LayerSpec::Uconv {
        out,
        kernel: 4,
        stride: 2,
        pad: 1,
        bias,
    }
}

/// Layer followed by batch norm and ReLU; the layer's bias is dropped
/// because batch norm cancels it.
fn bn_relu(layers: &mut Vec<LayerSpec>, layer: LayerSpec) {
    layers.extend([layer, LayerSpec::BatchNorm, RELU]);
}

fn image_input(name: &'static str, channels: usize, side: usize) -> InputSpec {
    InputSpec {
        name,
        shape: vec![channels, side, side],
    }
}

fn noise_input(name: &'static str) -> InputSpec {
    InputSpec {
        name,
        shape: vec![NOISE_DIM],
    }
}

fn passthrough(name: &'static str) -> Branch {
    Branch {
        name,
        layers: Vec::new(),
    }
}

pub fn build(kind: NetworkKind, scale: Scale) -> NetworkSpec {
    match kind {
        NetworkKind::StructureGenerator => build_structure_generator(scale),
        NetworkKind::StructureDiscriminator => build_structure_discriminator(scale),
        NetworkKind::StyleGenerator => build_style_generator(scale),
        NetworkKind::StyleDiscriminator => build_style_discriminator(scale),
        NetworkKind::Fcn => build_fcn(scale),
    }
}

/// Noise to a normal map: fc to a 9x9 grid, three doubling uconvs, tanh.
///
/// Below full scale the fc grid stays 9x9 and the leading uconvs become
/// 3x3 stride-1 convolutions, one per halving, so the output side is
/// `72 * s` with the same layer count.
pub fn build_structure_generator(scale: Scale) -> NetworkSpec {
    let ch = |c| scale.channels(c);
    let demoted = scale.halvings();
    // (channels, is_uconv, kernel)
    let body: [(usize, bool, usize); 8] = [
        (128, true, 4),
        (128, false, 3),
        (256, false, 3),
        (512, false, 3),
        (512, false, 3),
        (256, true, 4),
        (128, false, 3),
        (64, true, 4),
    ];
    let mut trunk = Vec::new();
    bn_relu(
        &mut trunk,
        LayerSpec::Fc {
            out: ch(64) * 81,
            reshape: Some([ch(64), 9, 9]),
            bias: false,
        },
    );
    let mut uconvs_seen = 0;
    for (c, is_up, k) in body {
        let layer = if is_up {
            uconvs_seen += 1;
            if uconvs_seen <= demoted {
                conv(ch(c), 3, 1, false)
            } else {
                uconv(ch(c), false)
            }
        } else {
            conv(ch(c), k, 1, false)
        };
        bn_relu(&mut trunk, layer);
    }
    trunk.extend([conv(3, 5, 1, true), LayerSpec::Act(Activation::Tanh)]);
    let side = scale.structure_size();
    NetworkSpec {
        kind: NetworkKind::StructureGenerator,
        scale,
        inputs: vec![noise_input("noise")],
        branches: vec![passthrough("noise")],
        trunk,
        output: vec![3, side, side],
    }
}

/// Five LeakyReLU convolutions, fc, sigmoid. No batch norm.
fn discriminator_trunk(scale: Scale, strides: [usize; 5]) -> Vec<LayerSpec> {
    let ch = |c| scale.channels(c);
    let convs = [(64, 5), (128, 5), (256, 3), (512, 3), (128, 3)];
    let mut trunk = Vec::new();
    for ((c, k), s) in convs.into_iter().zip(strides) {
        trunk.extend([conv(ch(c), k, s, true), leaky()]);
    }
    trunk.extend([
        LayerSpec::Fc {
            out: 1,
            reshape: None,
            bias: true,
        },
        LayerSpec::Act(Activation::Sigmoid),
    ]);
    trunk
}

pub fn build_structure_discriminator(scale: Scale) -> NetworkSpec {
    let side = scale.structure_size();
    NetworkSpec {
        kind: NetworkKind::StructureDiscriminator,
        scale,
        inputs: vec![image_input("normals", 3, side)],
        branches: vec![passthrough("normals")],
        trunk: discriminator_trunk(scale, [2, 1, 2, 2, 1]),
        output: vec![1],
    }
}

/// Scores a (normals, image) pair stacked to six channels.
pub fn build_style_discriminator(scale: Scale) -> NetworkSpec {
    let side = scale.style_size();
    NetworkSpec {
        kind: NetworkKind::StyleDiscriminator,
        scale,
        inputs: vec![image_input("normals", 3, side), image_input("image", 3, side)],
        branches: vec![passthrough("normals"), passthrough("image")],
        trunk: discriminator_trunk(scale, [2, 2, 2, 2, 1]),
        output: vec![1],
    }
}

/// Normals and noise to an image.
///
/// Condition branch: two strided convolutions down to a quarter of the side
/// with 128 channels. Noise branch: fc to an 8x8x256 grid and two uconvs up
/// to the same quarter side with 64 channels. After stacking (192 channels)
/// the trunk runs seven conv/uconv layers up to the full side and 3 tanh
/// channels. The per-layer channel counts and kernel sizes of both branches
/// and the trunk are a reconstruction; the stacked and output shapes are
/// the fixed points.
pub fn build_style_generator(scale: Scale) -> NetworkSpec {
    let ch = |c| scale.channels(c);
    let side = scale.style_size();
    let grid = 8 >> scale.halvings();

    let mut condition = Vec::new();
    bn_relu(&mut condition, conv(ch(64), 5, 2, false));
    bn_relu(&mut condition, conv(ch(128), 3, 2, false));

    let mut noise = Vec::new();
    bn_relu(
        &mut noise,
        LayerSpec::Fc {
            out: ch(256) * grid * grid,
            reshape: Some([ch(256), grid, grid]),
            bias: false,
        },
    );
    bn_relu(&mut noise, uconv(ch(128), false));
    bn_relu(&mut noise, uconv(ch(64), false));

    let mut trunk = Vec::new();
    bn_relu(&mut trunk, conv(ch(256), 3, 1, false));
    bn_relu(&mut trunk, conv(ch(256), 3, 1, false));
    bn_relu(&mut trunk, uconv(ch(256), false));
    bn_relu(&mut trunk, conv(ch(128), 3, 1, false));
    bn_relu(&mut trunk, uconv(ch(64), false));
    bn_relu(&mut trunk, conv(ch(32), 3, 1, false));
    trunk.extend([conv(3, 3, 1, true), LayerSpec::Act(Activation::Tanh)]);

    NetworkSpec {
        kind: NetworkKind::StyleGenerator,
        scale,
        inputs: vec![image_input("normals", 3, side), noise_input("noise")],
        branches: vec![
            Branch {
                name: "condition",
                layers: condition,
            },
            Branch {
                name: "noise",
                layers: noise,
            },
        ],
        trunk,
        output: vec![3, side, side],
    }
}

/// Image to per-pixel class logits.
///
/// Bilinear 4x input upsampling, an AlexNet-style trunk (five convolutions,
/// three max-pools), two narrower layers of 1024 and 512 kernels, a doubling
/// uconv to the class count, and a final 4x bilinear upsampling back to the
/// input side. No batch norm.
pub fn build_fcn(scale: Scale) -> NetworkSpec {
    let ch = |c| scale.channels(c);
    let side = scale.style_size();
    let pool = LayerSpec::MaxPool {
        kernel: 3,
        stride: 2,
        pad: 1,
    };
    let trunk = vec![
        LayerSpec::Upsample { factor: 4 },
        LayerSpec::Conv {
            out: ch(96),
            kernel: 11,
            stride: 4,
            pad: 4,
            bias: true,
        },
        RELU,
        pool,
        conv(ch(256), 5, 1, true),
        RELU,
        pool,
        conv(ch(384), 3, 1, true),
        RELU,
        conv(ch(384), 3, 1, true),
        RELU,
        conv(ch(256), 3, 1, true),
        RELU,
        pool,
        conv(ch(1024), 3, 1, true),
        RELU,
        conv(ch(512), 1, 1, true),
        RELU,
        uconv(NUM_CLASSES, true),
        LayerSpec::Upsample { factor: 4 },
    ];
    NetworkSpec {
        kind: NetworkKind::Fcn,
        scale,
        inputs: vec![image_input("image", 3, side)],
        branches: vec![passthrough("image")],
        trunk,
        output: vec![NUM_CLASSES, side, side],
    }
}
