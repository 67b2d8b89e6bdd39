//! Reference architectures: the residual attention-condenser prototype and a
//! ResNet-50 descriptor used for complexity and latency comparison.

use super::spec::{LayerSpec, SkipProjection};
use crate::error::{Error, Result};
use crate::nn::Activation;
use crate::tensor::Shape;
use serde::{Deserialize, Serialize};

pub const STAGES: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PrototypeConfig {
    pub stage_channels: [usize; STAGES],
    pub blocks_per_stage: [usize; STAGES],
    /// Per stage, whether each block opens with an attention condenser.
    /// Missing entries count as enabled.
    #[serde(default = "all_condensers")]
    pub condensers: [Vec<bool>; STAGES],
    pub input_shape: Shape,
}

fn all_condensers() -> [Vec<bool>; STAGES] {
    [vec![true; 3], vec![true; 3], vec![true; 3]]
}

impl Default for PrototypeConfig {
    fn default() -> Self {
        PrototypeConfig {
            stage_channels: [16, 24, 32],
            blocks_per_stage: [2, 2, 2],
            condensers: all_condensers(),
            input_shape: [1, 1, 128, 128],
        }
    }
}

impl PrototypeConfig {
    pub fn condenser_enabled(&self, stage: usize, block: usize) -> bool {
        self.condensers[stage].get(block).copied().unwrap_or(true)
    }

    pub fn set_condenser(&mut self, stage: usize, block: usize, on: bool) {
        let v = &mut self.condensers[stage];
        if v.len() <= block {
            v.resize(block + 1, true);
        }
        v[block] = on;
    }

    fn validate(&self) -> Result<()> {
        if let Some(&c) = self.stage_channels.iter().find(|&&c| c == 0 || c % 2 != 0) {
            return Err(Error::Config(format!("stage channels must be even and positive, got {c}")));
        }
        if self.blocks_per_stage.contains(&0) {
            return Err(Error::Config("every stage needs at least one block".into()));
        }
        let div = 1usize << (STAGES + 1);
        let [_, _, h, w] = self.input_shape;
        if h == 0 || w == 0 || h % div != 0 || w % div != 0 {
            return Err(Error::Config(format!(
                "input {h}x{w} must be divisible by {div} for {STAGES} stages"
            )));
        }
        Ok(())
    }
}

/// Stem conv, three stages of condenser blocks (residual where the channel
/// count is unchanged) separated by 2×2 max pooling, then a two-logit head.
pub fn seed_prototype(config: &PrototypeConfig) -> Result<Vec<LayerSpec>> {
    config.validate()?;
    let relu = LayerSpec::Activation { kind: Activation::Relu };
    let c0 = config.stage_channels[0];
    let mut layers = vec![LayerSpec::Conv { out_ch: c0, k: 3, stride: 2, pad: 1 }, relu.clone()];
    let mut cin = c0;
    for stage in 0..STAGES {
        let c = config.stage_channels[stage];
        for block in 0..config.blocks_per_stage[stage] {
            let residual = cin == c;
            if residual {
                layers.push(LayerSpec::ResidualBegin);
            }
            if config.condenser_enabled(stage, block) {
                layers.push(LayerSpec::AttnCondenser { factor: 2 });
            }
            layers.push(LayerSpec::Depthwise { k: 3, stride: 1, pad: 1 });
            layers.push(LayerSpec::Pointwise { out_ch: c });
            layers.push(relu.clone());
            if residual {
                layers.push(LayerSpec::residual_end());
            }
            cin = c;
        }
        if stage + 1 < STAGES {
            layers.push(LayerSpec::MaxPool { window: 2, stride: 2 });
        }
    }
    layers.push(LayerSpec::GlobalAvgPool);
    layers.push(LayerSpec::Dense { out: 2 });
    Ok(layers)
}

pub const RESNET50_INPUT: Shape = [1, 3, 224, 224];

/// 50-layer bottleneck residual network (stride on the 3×3 convolution,
/// 1×1 projections on downsampling skips). Convolutions carry biases in place
/// of normalization layers.
pub fn resnet50_descriptor(num_classes: usize) -> Vec<LayerSpec> {
    let relu = LayerSpec::Activation { kind: Activation::Relu };
    let mut layers = vec![
        LayerSpec::Conv { out_ch: 64, k: 7, stride: 2, pad: 3 },
        relu.clone(),
        LayerSpec::MaxPool { window: 2, stride: 2 },
    ];
    let mut cin = 64;
    for (stage, (&width, &blocks)) in [64usize, 128, 256, 512].iter().zip(&[3usize, 4, 6, 3]).enumerate() {
        let out = width * 4;
        for block in 0..blocks {
            let stride = if block == 0 && stage > 0 { 2 } else { 1 };
            let projection = (block == 0).then_some(SkipProjection { out_ch: out, stride });
            debug_assert!(projection.is_some() || cin == out);
            layers.extend([
                LayerSpec::ResidualBegin,
                LayerSpec::Conv { out_ch: width, k: 1, stride: 1, pad: 0 },
                relu.clone(),
                LayerSpec::Conv { out_ch: width, k: 3, stride, pad: 1 },
                relu.clone(),
                LayerSpec::Conv { out_ch: out, k: 1, stride: 1, pad: 0 },
                LayerSpec::ResidualEnd { projection },
                relu.clone(),
            ]);
            cin = out;
        }
    }
    layers.push(LayerSpec::GlobalAvgPool);
    layers.push(LayerSpec::Dense { out: num_classes });
    layers
}
