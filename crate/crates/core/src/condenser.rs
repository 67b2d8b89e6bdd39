//! Self-attention condenser block.
//!
//! The block condenses its input with `f×f` max pooling, embeds the condensed
//! activations with a 3×3 depthwise convolution followed by a pointwise
//! convolution, expands the embedding back with nearest-neighbour upsampling and
//! gates the input:
//!
//! ```text
//! Q  = maxpool_f(V)
//! K  = pointwise(depthwise(Q))
//! A  = upsample_f(K)
//! V' = V ⊙ sigmoid(A) ⊙ s        (s broadcast per channel)
//! ```

use crate::error::{Error, Result};
use crate::nn::{Tape, Var};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const EMBED_KERNEL: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionCondenserParams {
    pub channels: usize,
    pub condense_factor: usize,
    /// (C, 1, 3, 3)
    pub dw_weight: Tensor,
    /// (C, C, 1, 1)
    pub pw_weight: Tensor,
    /// (1, C, 1, 1)
    pub pw_bias: Tensor,
    /// (1, C, 1, 1), initialised to ones.
    pub scale: Tensor,
}

/// Tape handles for the four parameter tensors of one block.
#[derive(Debug, Clone, Copy)]
pub struct CondenserVars {
    pub dw_weight: Var,
    pub pw_weight: Var,
    pub pw_bias: Var,
    pub scale: Var,
}

/// Parameters per block: depthwise 9C, pointwise C² + C bias, scale C.
pub fn condenser_param_count(channels: usize) -> usize {
    EMBED_KERNEL * EMBED_KERNEL * channels + channels * channels + 2 * channels
}

pub fn check_factor(factor: usize) -> Result<()> {
    if factor < 2 {
        return Err(Error::Config(format!(
            "condense factor must be >= 2, got {factor}"
        )));
    }
    Ok(())
}

/// Fresh parameters: weights zero-mean with variance 2/fan_in, zero bias, unit scale.
pub fn ac_init(channels: usize, condense_factor: usize, rng_seed: u64) -> Result<AttentionCondenserParams> {
    if channels == 0 {
        return Err(Error::Config("attention condenser needs at least one channel".into()));
    }
    check_factor(condense_factor)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let k = EMBED_KERNEL;
    Ok(AttentionCondenserParams {
        channels,
        condense_factor,
        dw_weight: Tensor::he_normal([channels, 1, k, k], k * k, &mut rng),
        pw_weight: Tensor::he_normal([channels, channels, 1, 1], channels, &mut rng),
        pw_bias: Tensor::zeros([1, channels, 1, 1]),
        scale: Tensor::full([1, channels, 1, 1], 1.0),
    })
}

/// Records the block on `tape` and returns the gated output.
pub fn ac_forward_on_tape(tape: &mut Tape, input: Var, params: CondenserVars, factor: usize) -> Result<Var> {
    check_factor(factor)?;
    let [_, _, h, w] = tape.value(input).shape();
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::Config(format!(
            "condense factor {factor} does not divide {h}x{w}"
        )));
    }
    let condensed = tape.max_pool2d(input, factor, factor)?;
    let spatial = tape.depthwise_conv2d(condensed, params.dw_weight, None, 1, EMBED_KERNEL / 2)?;
    let embedded = tape.pointwise_conv2d(spatial, params.pw_weight, Some(params.pw_bias))?;
    let expanded = tape.upsample2d_nearest(embedded, factor)?;
    let gate = tape.sigmoid(expanded)?;
    let attended = tape.mul(input, gate)?;
    tape.channel_scale(attended, params.scale)
}

impl AttentionCondenserParams {
    pub fn param_count(&self) -> usize {
        condenser_param_count(self.channels)
    }

    pub fn register(&self, tape: &mut Tape) -> CondenserVars {
        CondenserVars {
            dw_weight: tape.leaf(self.dw_weight.clone()),
            pw_weight: tape.leaf(self.pw_weight.clone()),
            pw_bias: tape.leaf(self.pw_bias.clone()),
            scale: tape.leaf(self.scale.clone()),
        }
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        if input.channels() != self.channels {
            return Err(Error::Dimension(format!(
                "attention condenser has {} channels, input has {}",
                self.channels,
                input.channels()
            )));
        }
        let mut tape = Tape::new();
        let v = tape.leaf(input.clone());
        let vars = self.register(&mut tape);
        let out = ac_forward_on_tape(&mut tape, v, vars, self.condense_factor)?;
        Ok(tape.value(out).clone())
    }
}
