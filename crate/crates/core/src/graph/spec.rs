use crate::condenser::{self, EMBED_KERNEL};
use crate::error::{Error, Result};
use crate::nn::tape::conv_output_shape;
use crate::nn::Activation;
use crate::tensor::{format_shape, Shape};
use serde::{Deserialize, Serialize};

/// 1×1 strided convolution applied to the skip path of a residual block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipProjection {
    pub out_ch: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
    },
    Depthwise {
        k: usize,
        stride: usize,
        pad: usize,
    },
    Pointwise {
        out_ch: usize,
    },
    AttnCondenser {
        factor: usize,
    },
    MaxPool {
        window: usize,
        stride: usize,
    },
    GlobalAvgPool,
    Dense {
        out: usize,
    },
    Activation {
        kind: Activation,
    },
    ResidualBegin,
    ResidualEnd {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        projection: Option<SkipProjection>,
    },
}

/// Tags accepted in graph files.
pub const LAYER_TAGS: &[&str] = &[
    "conv",
    "depthwise",
    "pointwise",
    "attn_condenser",
    "max_pool",
    "global_avg_pool",
    "dense",
    "activation",
    "residual_begin",
    "residual_end",
];

impl LayerSpec {
    pub fn tag(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Depthwise { .. } => "depthwise",
            LayerSpec::Pointwise { .. } => "pointwise",
            LayerSpec::AttnCondenser { .. } => "attn_condenser",
            LayerSpec::MaxPool { .. } => "max_pool",
            LayerSpec::GlobalAvgPool => "global_avg_pool",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Activation { .. } => "activation",
            LayerSpec::ResidualBegin => "residual_begin",
            LayerSpec::ResidualEnd { .. } => "residual_end",
        }
    }

    pub fn residual_end() -> Self {
        LayerSpec::ResidualEnd { projection: None }
    }
}

/// Inferred geometry of one layer. `skip` is the shape entering the matching
/// `ResidualBegin`, present only on `ResidualEnd`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShapes {
    pub input: Shape,
    pub output: Shape,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip: Option<Shape>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamInit {
    /// Zero-mean normal with variance 2 / fan_in.
    He(usize),
    Zeros,
    Ones,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamSpec {
    pub shape: Shape,
    pub init: ParamInit,
}

fn he(shape: Shape, fan_in: usize) -> ParamSpec {
    ParamSpec { shape, init: ParamInit::He(fan_in) }
}

fn bias(len: usize) -> ParamSpec {
    ParamSpec { shape: [1, len, 1, 1], init: ParamInit::Zeros }
}

/// Parameter tensors of a layer, in arena order.
pub fn layer_params(spec: &LayerSpec, shapes: &LayerShapes) -> Vec<ParamSpec> {
    let cin = shapes.input[1];
    match *spec {
        LayerSpec::Conv { out_ch, k, .. } => vec![he([out_ch, cin, k, k], cin * k * k), bias(out_ch)],
        LayerSpec::Depthwise { k, .. } => vec![he([cin, 1, k, k], k * k), bias(cin)],
        LayerSpec::Pointwise { out_ch } => vec![he([out_ch, cin, 1, 1], cin), bias(out_ch)],
        LayerSpec::AttnCondenser { .. } => {
            let k = EMBED_KERNEL;
            vec![
                he([cin, 1, k, k], k * k),
                he([cin, cin, 1, 1], cin),
                bias(cin),
                ParamSpec { shape: [1, cin, 1, 1], init: ParamInit::Ones },
            ]
        }
        LayerSpec::Dense { out } => {
            let fan_in = shapes.input[1] * shapes.input[2] * shapes.input[3];
            vec![he([out, fan_in, 1, 1], fan_in), bias(out)]
        }
        LayerSpec::ResidualEnd { projection: Some(p) } => {
            let skip_c = shapes.skip.map(|s| s[1]).unwrap_or(cin);
            vec![he([p.out_ch, skip_c, 1, 1], skip_c), bias(p.out_ch)]
        }
        _ => Vec::new(),
    }
}

pub fn param_count(params: &[ParamSpec]) -> usize {
    params.iter().map(|p| p.shape.iter().product::<usize>()).sum()
}

fn build_err(index: usize, message: impl Into<String>) -> Error {
    Error::Build { index, message: message.into() }
}

fn positive(index: usize, what: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(build_err(index, format!("{what} must be positive")));
    }
    Ok(())
}

/// Infers every layer's input/output shape, validating residual nesting.
/// Errors name the offending layer index.
pub fn infer_shapes(specs: &[LayerSpec], input: Shape) -> Result<Vec<LayerShapes>> {
    if specs.is_empty() {
        return Err(Error::Config("layer list is empty".into()));
    }
    if input.contains(&0) {
        return Err(Error::Config(format!("input shape {} has a zero extent", format_shape(&input))));
    }
    let mut out = Vec::with_capacity(specs.len());
    let mut cur = input;
    let mut stack: Vec<(usize, Shape)> = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        let mut skip = None;
        let located = |e: Error| match e {
            Error::Config(m) | Error::Dimension(m) => build_err(i, m),
            other => other,
        };
        let next = match *spec {
            LayerSpec::Conv { out_ch, k, stride, pad } => {
                positive(i, "out_ch", out_ch)?;
                conv_output_shape(cur, out_ch, k, stride, pad).map_err(located)?
            }
            LayerSpec::Depthwise { k, stride, pad } => conv_output_shape(cur, cur[1], k, stride, pad).map_err(located)?,
            LayerSpec::Pointwise { out_ch } => {
                positive(i, "out_ch", out_ch)?;
                [cur[0], out_ch, cur[2], cur[3]]
            }
            LayerSpec::AttnCondenser { factor } => {
                condenser::check_factor(factor).map_err(located)?;
                if !cur[2].is_multiple_of(factor) || !cur[3].is_multiple_of(factor) {
                    return Err(build_err(
                        i,
                        format!("condense factor {factor} does not divide {}x{}", cur[2], cur[3]),
                    ));
                }
                cur
            }
            LayerSpec::MaxPool { window, stride } => {
                if window == 0 || window != stride {
                    return Err(build_err(i, "max pooling requires window == stride > 0"));
                }
                if !cur[2].is_multiple_of(window) || !cur[3].is_multiple_of(window) {
                    return Err(build_err(
                        i,
                        format!("pool window {window} does not tile {}x{}", cur[2], cur[3]),
                    ));
                }
                [cur[0], cur[1], cur[2] / window, cur[3] / window]
            }
            LayerSpec::GlobalAvgPool => [cur[0], cur[1], 1, 1],
            LayerSpec::Dense { out } => {
                positive(i, "out", out)?;
                [cur[0], out, 1, 1]
            }
            LayerSpec::Activation { kind } => {
                if kind == Activation::SoftmaxRows && (cur[2] != 1 || cur[3] != 1) {
                    return Err(build_err(i, "softmax needs (N,K,1,1) input"));
                }
                cur
            }
            LayerSpec::ResidualBegin => {
                stack.push((i, cur));
                cur
            }
            LayerSpec::ResidualEnd { projection } => {
                let (_, begin) = stack
                    .pop()
                    .ok_or_else(|| build_err(i, "residual end without matching begin"))?;
                skip = Some(begin);
                let projected = match projection {
                    Some(p) => {
                        positive(i, "projection out_ch", p.out_ch)?;
                        conv_output_shape(begin, p.out_ch, 1, p.stride, 0).map_err(located)?
                    }
                    None => begin,
                };
                if projected != cur {
                    return Err(build_err(
                        i,
                        format!(
                            "residual skip shape {} does not match block output {}",
                            format_shape(&projected),
                            format_shape(&cur)
                        ),
                    ));
                }
                cur
            }
        };
        out.push(LayerShapes { input: cur, output: next, skip });
        cur = next;
    }
    if let Some(&(i, _)) = stack.last() {
        return Err(build_err(i, "residual begin is never closed"));
    }
    Ok(out)
}
