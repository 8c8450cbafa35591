use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use super::{LayerSpec, NetworkSpec};
use crate::autodiff::{conv2d_output_size, conv_transpose2d_output_size};
use crate::error::{Error, Result};

/// One propagated layer. Shapes exclude the batch axis.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditRow {
    /// Position in [`NetworkSpec::layers`] order; the stacking step, when
    /// present, shares the index of the first trunk layer.
    pub index: usize,
    pub stage: &'static str,
    pub kind: &'static str,
    /// `None` for the channel-stacking step between branches and trunk.
    pub layer: Option<LayerSpec>,
    pub input: Vec<usize>,
    pub output: Vec<usize>,
}

/// Spatial side of a per-sample shape; `None` for flat vectors.
pub(crate) fn side(shape: &[usize]) -> Option<usize> {
    (shape.len() == 3).then(|| shape[1])
}

fn fail(index: usize, stage: &str, layer: &LayerSpec, detail: String) -> Error {
    Error::Audit {
        layer: index,
        name: alloc::format!("{}.{}", stage, layer.kind()),
        detail,
    }
}

fn spatial(index: usize, stage: &str, layer: &LayerSpec, input: &[usize]) -> Result<(usize, usize, usize)> {
    match *input {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(fail(index, stage, layer, alloc::format!("needs a [C,H,W] input, got {:?}", input))),
    }
}

pub(crate) fn propagate(index: usize, stage: &'static str, layer: &LayerSpec, input: &[usize]) -> Result<Vec<usize>> {
    match *layer {
        LayerSpec::Fc { out, reshape, .. } => {
            if let Some([c, h, w]) = reshape {
                if c * h * w != out {
                    return Err(fail(
                        index,
                        stage,
                        layer,
                        alloc::format!("reshape {}x{}x{} does not hold {} outputs", c, h, w, out),
                    ));
                }
                Ok(vec![c, h, w])
            } else {
                Ok(vec![out])
            }
        }
        LayerSpec::Conv {
            out, kernel, stride, pad, ..
        } => {
            let (_, h, w) = spatial(index, stage, layer, input)?;
            let size = |n| {
                conv2d_output_size(n, kernel, stride, pad).ok_or_else(|| {
                    fail(
                        index,
                        stage,
                        layer,
                        alloc::format!("kernel {} with pad {} does not fit side {}", kernel, pad, n),
                    )
                })
            };
            Ok(vec![out, size(h)?, size(w)?])
        }
        LayerSpec::Uconv {
            out, kernel, stride, pad, ..
        } => {
            let (_, h, w) = spatial(index, stage, layer, input)?;
            for n in [h, w] {
                let got = conv_transpose2d_output_size(n, kernel, stride, pad);
                if got != Some(2 * n) {
                    return Err(fail(
                        index,
                        stage,
                        layer,
                        alloc::format!(
                            "kernel {} stride {} pad {} maps side {} to {:?}, expected exactly {}",
                            kernel,
                            stride,
                            pad,
                            n,
                            got,
                            2 * n
                        ),
                    ));
                }
            }
            Ok(vec![out, 2 * h, 2 * w])
        }
        LayerSpec::BatchNorm | LayerSpec::Act(_) => Ok(input.to_vec()),
        LayerSpec::Upsample { factor } => {
            let (c, h, w) = spatial(index, stage, layer, input)?;
            if factor == 0 {
                return Err(fail(index, stage, layer, "factor must be positive".to_string()));
            }
            Ok(vec![c, h * factor, w * factor])
        }
        LayerSpec::MaxPool { kernel, stride, pad } => {
            let (c, h, w) = spatial(index, stage, layer, input)?;
            let size = |n| {
                conv2d_output_size(n, kernel, stride, pad)
                    .filter(|_| pad < kernel)
                    .ok_or_else(|| fail(index, stage, layer, alloc::format!("window does not fit side {}", n)))
            };
            Ok(vec![c, size(h)?, size(w)?])
        }
    }
}

/// Propagate per-sample shapes through `spec` without allocating
/// activations. Fails at the first inconsistent layer, or at the last layer
/// if the result differs from the declared output.
pub fn shape_audit(spec: &NetworkSpec) -> Result<Vec<AuditRow>> {
    if spec.branches.len() != spec.inputs.len() {
        return Err(Error::config(
            "shape_audit",
            alloc::format!("{} branches for {} inputs", spec.branches.len(), spec.inputs.len()),
        ));
    }
    let mut rows = Vec::new();
    let mut index = 0;
    let mut branch_out = Vec::new();
    for (branch, input) in spec.branches.iter().zip(&spec.inputs) {
        let mut shape = input.shape.clone();
        for layer in &branch.layers {
            let out = propagate(index, branch.name, layer, &shape)?;
            rows.push(AuditRow {
                index,
                stage: branch.name,
                kind: layer.kind(),
                layer: Some(*layer),
                input: shape,
                output: out.clone(),
            });
            shape = out;
            index += 1;
        }
        branch_out.push(shape);
    }
    let mut shape = if branch_out.len() == 1 {
        branch_out.pop().expect("one branch")
    } else {
        let first = &branch_out[0];
        let mut channels = 0;
        for s in &branch_out {
            if s.len() != 3 || s[1..] != first[1..] {
                return Err(Error::Audit {
                    layer: index,
                    name: "concat".to_string(),
                    detail: alloc::format!("branch outputs {:?} cannot be stacked", branch_out),
                });
            }
            channels += s[0];
        }
        let out = vec![channels, first[1], first[2]];
        rows.push(AuditRow {
            index,
            stage: "concat",
            kind: "concat",
            layer: None,
            input: first.clone(),
            output: out.clone(),
        });
        out
    };
    for layer in &spec.trunk {
        let out = propagate(index, "trunk", layer, &shape)?;
        rows.push(AuditRow {
            index,
            stage: "trunk",
            kind: layer.kind(),
            layer: Some(*layer),
            input: shape,
            output: out.clone(),
        });
        shape = out;
        index += 1;
    }
    if shape != spec.output {
        let last = spec.trunk.last().copied().unwrap_or(LayerSpec::BatchNorm);
        return Err(fail(
            index.saturating_sub(1),
            "trunk",
            &last,
            alloc::format!("network ends in {:?}, declared output is {:?}", shape, spec.output),
        ));
    }
    Ok(rows)
}

/// Architecture table with one column per fc/conv/uconv layer, followed by
/// the full resolved layer list.
pub fn table(spec: &NetworkSpec) -> Result<String> {
    let rows = shape_audit(spec)?;
    let main: Vec<&AuditRow> = rows
        .iter()
        .filter(|r| r.layer.is_some_and(|l| l.is_main()))
        .collect();
    let mut header = vec![alloc::format!("{} s={}", spec.kind.title(), spec.scale.label())];
    let mut input = vec!["Input Size".to_string()];
    let mut number = vec!["Kernel Number".to_string()];
    let mut size = vec!["Kernel Size".to_string()];
    let mut stride = vec!["Stride".to_string()];
    let mut padding = vec!["Padding".to_string()];
    for r in &main {
        let stage = if spec.branches.len() > 1 && r.stage != "trunk" {
            alloc::format!("{}:", r.stage)
        } else {
            String::new()
        };
        header.push(alloc::format!("{}{}", stage, r.kind));
        let fc = matches!(r.layer, Some(LayerSpec::Fc { .. }));
        input.push(match side(&r.input) {
            Some(s) if !fc => s.to_string(),
            _ => "-".to_string(),
        });
        match r.layer.expect("main rows carry a layer") {
            LayerSpec::Fc { out, reshape, .. } => {
                number.push(match reshape {
                    Some([c, h, w]) => alloc::format!("{}x{}x{}", h, w, c),
                    None => out.to_string(),
                });
                size.push("-".to_string());
                stride.push("-".to_string());
                padding.push("-".to_string());
            }
            LayerSpec::Conv {
                out, kernel, stride: s, pad, ..
            } => {
                number.push(out.to_string());
                size.push(kernel.to_string());
                stride.push(s.to_string());
                padding.push(pad.to_string());
            }
            LayerSpec::Uconv { out, kernel, pad, .. } => {
                number.push(out.to_string());
                size.push(kernel.to_string());
                stride.push("2(up)".to_string());
                padding.push(pad.to_string());
            }
            _ => unreachable!("filtered to main layers"),
        }
    }
    let lines = [header, input, number, size, stride, padding];
    let cols = lines[0].len();
    let widths: Vec<usize> = (0..cols)
        .map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for line in &lines {
        let cells: Vec<String> = line
            .iter()
            .zip(&widths)
            .map(|(cell, &w)| alloc::format!("{:<w$}", cell, w = w))
            .collect();
        let _ = writeln!(out, "| {} |", cells.join(" | "));
    }
    let _ = writeln!(out);
    for r in &rows {
        let _ = writeln!(
            out,
            "{:>3} {:<10} {:<10} {:?} -> {:?}",
            r.index, r.stage, r.kind, r.input, r.output
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::*;

    fn main_input_sides(spec: &NetworkSpec, stage: &str) -> Vec<Option<usize>> {
        shape_audit(spec)
            .unwrap()
            .iter()
            .filter(|r| r.stage == stage && r.layer.is_some_and(|l| l.is_main()))
            .map(|r| side(&r.input))
            .collect()
    }

    #[test]
    fn structure_generator_size_row() {
        let spec = build_structure_generator(Scale::Full);
        let sides = main_input_sides(&spec, "trunk");
        let expected = [None, Some(9), Some(18), Some(18), Some(18), Some(18), Some(18), Some(36), Some(36), Some(72)];
        assert_eq!(sides, expected);
        let rows = shape_audit(&spec).unwrap();
        assert_eq!(rows.last().unwrap().output, vec![3, 72, 72]);
        assert_eq!(rows[0].input, vec![100]);
        assert_eq!(rows[0].output, vec![64, 9, 9]);
    }

    #[test]
    fn structure_generator_kernel_rows() {
        let spec = build_structure_generator(Scale::Full);
        let main: Vec<LayerSpec> = spec.trunk.iter().copied().filter(LayerSpec::is_main).collect();
        let numbers: Vec<usize> = main
            .iter()
            .map(|l| match *l {
                LayerSpec::Fc { out, .. } => out,
                LayerSpec::Conv { out, .. } | LayerSpec::Uconv { out, .. } => out,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(numbers, [9 * 9 * 64, 128, 128, 256, 512, 512, 256, 128, 64, 3]);
        let kernels: Vec<usize> = main
            .iter()
            .filter_map(|l| match *l {
                LayerSpec::Conv { kernel, .. } | LayerSpec::Uconv { kernel, .. } => Some(kernel),
                _ => None,
            })
            .collect();
        assert_eq!(kernels, [4, 3, 3, 3, 3, 4, 3, 4, 5]);
    }

    #[test]
    fn structure_discriminator_size_row() {
        let spec = build_structure_discriminator(Scale::Full);
        let sides = main_input_sides(&spec, "trunk");
        assert_eq!(&sides[..5], [Some(72), Some(36), Some(36), Some(18), Some(9)]);
        assert_eq!(sides.len(), 6);
    }

    #[test]
    fn style_discriminator_size_row() {
        let spec = build_style_discriminator(Scale::Full);
        let sides = main_input_sides(&spec, "trunk");
        assert_eq!(&sides[..5], [Some(128), Some(64), Some(32), Some(16), Some(8)]);
        let rows = shape_audit(&spec).unwrap();
        let concat = rows.iter().find(|r| r.stage == "concat").unwrap();
        assert_eq!(concat.output, vec![6, 128, 128]);
    }

    #[test]
    fn style_generator_fixed_points() {
        let spec = build_style_generator(Scale::Full);
        let rows = shape_audit(&spec).unwrap();
        let concat = rows.iter().find(|r| r.stage == "concat").unwrap();
        assert_eq!(concat.output, vec![192, 32, 32]);
        assert_eq!(rows.last().unwrap().output, vec![3, 128, 128]);
        let trunk_main = spec.trunk.iter().filter(|l| l.is_main()).count();
        assert_eq!(trunk_main, 7);
        let q = shape_audit(&build_style_generator(Scale::Quarter)).unwrap();
        assert_eq!(q.last().unwrap().output, vec![3, 32, 32]);
    }

    #[test]
    fn fcn_output_is_class_logits_at_input_side() {
        for scale in Scale::ALL {
            let rows = shape_audit(&build_fcn(scale)).unwrap();
            let s = scale.style_size();
            assert_eq!(rows.last().unwrap().output, vec![40, s, s]);
            assert_eq!(rows[0].output, vec![3, 4 * s, 4 * s]);
        }
    }

    #[test]
    fn scaled_variants_audit() {
        for scale in Scale::ALL {
            for kind in NetworkKind::ALL {
                shape_audit(&build(kind, scale)).unwrap();
            }
        }
        let g = shape_audit(&build_structure_generator(Scale::Half)).unwrap();
        assert_eq!(g.last().unwrap().output, vec![3, 36, 36]);
        let d = build_structure_discriminator(Scale::Half);
        assert_eq!(d.inputs[0].shape, vec![3, 36, 36]);
    }

    #[test]
    fn stride_three_uconv_is_reported_at_its_layer() {
        let mut spec = build_structure_generator(Scale::Full);
        let pos = spec
            .trunk
            .iter()
            .position(|l| matches!(l, LayerSpec::Uconv { .. }))
            .unwrap();
        if let LayerSpec::Uconv { stride, .. } = &mut spec.trunk[pos] {
            *stride = 3;
        }
        match shape_audit(&spec) {
            Err(Error::Audit { layer, name, .. }) => {
                assert_eq!(layer, pos);
                assert_eq!(name, "trunk.uconv");
            }
            other => panic!("expected audit error, got {:?}", other),
        }
    }

    #[test]
    fn declared_output_mismatch_is_reported() {
        let mut spec = build_style_discriminator(Scale::Full);
        spec.output = vec![2];
        assert!(matches!(shape_audit(&spec), Err(Error::Audit { .. })));
    }

    #[test]
    fn table_mirrors_size_row() {
        let t = table(&build_structure_generator(Scale::Full)).unwrap();
        let line = t.lines().find(|l| l.starts_with("| Input Size")).unwrap();
        let cells: Vec<&str> = line.trim_matches('|').split('|').map(str::trim).collect();
        assert_eq!(cells[1..], ["-", "9", "18", "18", "18", "18", "18", "36", "36", "72"]);
        assert!(t.contains("9x9x64"));
        assert!(t.contains("2(up)"));
    }
}
