//! Declarative layer lists, shape-validated graphs and their weight arena.

mod format;
mod spec;
mod weights;
pub mod zoo;

pub use format::{deserialize_graph, deserialize_specs, serialize_graph, GraphFile, GRAPH_FORMAT_VERSION};
pub use spec::{infer_shapes, layer_params, param_count, LayerShapes, LayerSpec, ParamInit, ParamSpec, SkipProjection, LAYER_TAGS};
pub use weights::{load_weights, save_weights, WEIGHTS_MAGIC};
pub use zoo::{resnet50_descriptor, seed_prototype, PrototypeConfig};

use crate::condenser::{ac_forward_on_tape, CondenserVars};
use crate::error::{Error, Result};
use crate::nn::{cross_entropy, Tape, Var};
use crate::tensor::{format_shape, numel, Shape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::ops::Range;

pub const NUM_CLASSES: usize = 2;
pub const NEGATIVE: usize = 0;
pub const POSITIVE: usize = 1;

/// Flat parameter arena with one slot list per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightStore {
    arena: Vec<f64>,
    /// Per layer: (offset, shape) of each parameter tensor.
    slots: Vec<Vec<(usize, Shape)>>,
}

impl WeightStore {
    pub fn len(&self) -> usize {
        self.arena.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arena.is_empty()
    }

    pub fn arena(&self) -> &[f64] {
        &self.arena
    }

    pub fn arena_mut(&mut self) -> &mut [f64] {
        &mut self.arena
    }

    /// Arena range owned by one layer.
    pub fn layer_range(&self, layer: usize) -> Range<usize> {
        let slots = &self.slots[layer];
        match (slots.first(), slots.last()) {
            (Some(&(start, _)), Some(&(last, shape))) => start..last + numel(&shape),
            _ => {
                let at = self.slots[..layer]
                    .iter()
                    .rev()
                    .find_map(|s| s.last().map(|&(o, sh)| o + numel(&sh)))
                    .unwrap_or(0);
                at..at
            }
        }
    }

    pub fn layer_tensors(&self, layer: usize) -> Vec<Tensor> {
        self.slots[layer]
            .iter()
            .map(|&(off, shape)| Tensor::from_parts(shape, self.arena[off..off + numel(&shape)].to_vec()))
            .collect()
    }

    pub(crate) fn slots(&self, layer: usize) -> &[(usize, Shape)] {
        &self.slots[layer]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    input_shape: Shape,
    layers: Vec<LayerSpec>,
    shapes: Vec<LayerShapes>,
    weights: WeightStore,
}

/// Infers shapes, checks the two-class head and initialises weights
/// deterministically from `rng_seed`. Fails without producing a partial graph.
pub fn build_graph(specs: &[LayerSpec], input_shape: Shape, rng_seed: u64) -> Result<ModelGraph> {
    let shapes = infer_shapes(specs, input_shape)?;
    let last = shapes.len() - 1;
    let out = shapes[last].output;
    if out[1] != NUM_CLASSES || out[2] != 1 || out[3] != 1 {
        return Err(Error::Build {
            index: last,
            message: format!(
                "graph must end in (N,{NUM_CLASSES}) logits, got {}",
                format_shape(&out)
            ),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut arena = Vec::new();
    let mut slots = Vec::with_capacity(specs.len());
    for (spec, sh) in specs.iter().zip(&shapes) {
        let mut layer_slots = Vec::new();
        for p in layer_params(spec, sh) {
            layer_slots.push((arena.len(), p.shape));
            let n = numel(&p.shape);
            match p.init {
                ParamInit::He(fan_in) => {
                    let normal = Normal::new(0.0, (2.0 / fan_in.max(1) as f64).sqrt()).expect("finite std");
                    arena.extend((0..n).map(|_| normal.sample(&mut rng)));
                }
                ParamInit::Zeros => arena.extend(std::iter::repeat_n(0.0, n)),
                ParamInit::Ones => arena.extend(std::iter::repeat_n(1.0, n)),
            }
        }
        slots.push(layer_slots);
    }
    Ok(ModelGraph {
        input_shape,
        layers: specs.to_vec(),
        shapes,
        weights: WeightStore { arena, slots },
    })
}

/// Output of a forward pass recorded on a tape.
pub struct TapeForward {
    pub logits: Var,
    /// Parameter handles per layer, aligned with the weight arena slots.
    pub params: Vec<Vec<Var>>,
}

impl ModelGraph {
    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn shapes(&self) -> &[LayerShapes] {
        &self.shapes
    }

    pub fn weights(&self) -> &WeightStore {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut WeightStore {
        &mut self.weights
    }

    pub fn param_count(&self) -> usize {
        self.weights.len()
    }

    /// Sets every parameter (including condenser scales) to zero.
    pub fn zero_weights(&mut self) {
        self.weights.arena.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn check_batch(&self, batch: &Tensor) -> Result<()> {
        let s = batch.shape();
        if s[0] == 0 || s[1..] != self.input_shape[1..] {
            return Err(Error::Dimension(format!(
                "batch shape {} does not match graph input {}",
                format_shape(&s),
                format_shape(&self.input_shape)
            )));
        }
        Ok(())
    }

    pub fn forward_on_tape(&self, tape: &mut Tape, input: Var) -> Result<TapeForward> {
        self.check_batch(tape.value(input))?;
        let mut cur = input;
        let mut skips: Vec<Var> = Vec::new();
        let mut params = Vec::with_capacity(self.layers.len());
        for (i, spec) in self.layers.iter().enumerate() {
            let p: Vec<Var> = self.weights.layer_tensors(i).into_iter().map(|t| tape.leaf(t)).collect();
            cur = match *spec {
                LayerSpec::Conv { stride, pad, .. } => tape.conv2d(cur, p[0], Some(p[1]), stride, pad)?,
                LayerSpec::Depthwise { stride, pad, .. } => tape.depthwise_conv2d(cur, p[0], Some(p[1]), stride, pad)?,
                LayerSpec::Pointwise { .. } => tape.pointwise_conv2d(cur, p[0], Some(p[1]))?,
                LayerSpec::AttnCondenser { factor } => {
                    let vars = CondenserVars {
                        dw_weight: p[0],
                        pw_weight: p[1],
                        pw_bias: p[2],
                        scale: p[3],
                    };
                    ac_forward_on_tape(tape, cur, vars, factor)?
                }
                LayerSpec::MaxPool { window, stride } => tape.max_pool2d(cur, window, stride)?,
                LayerSpec::GlobalAvgPool => tape.global_avg_pool2d(cur)?,
                LayerSpec::Dense { .. } => tape.dense(cur, p[0], p[1])?,
                LayerSpec::Activation { kind } => tape.activation(kind, cur)?,
                LayerSpec::ResidualBegin => {
                    skips.push(cur);
                    cur
                }
                LayerSpec::ResidualEnd { projection } => {
                    let skip = skips.pop().ok_or_else(|| Error::State("unbalanced residual".into()))?;
                    let skip = match projection {
                        Some(pr) => tape.conv2d(skip, p[0], Some(p[1]), pr.stride, 0)?,
                        None => skip,
                    };
                    tape.add(cur, skip)?
                }
            };
            params.push(p);
        }
        Ok(TapeForward { logits: cur, params })
    }

    /// Logits (N, 2, 1, 1) for a batch.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.leaf(batch.clone());
        let f = self.forward_on_tape(&mut tape, x)?;
        Ok(tape.value(f.logits).clone())
    }

    /// Mean cross-entropy on a labelled batch and its gradient over the flat arena.
    pub fn loss_and_grad(&self, batch: &Tensor, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let x = tape.leaf(batch.clone());
        let f = self.forward_on_tape(&mut tape, x)?;
        let (loss, seed) = cross_entropy(tape.value(f.logits), labels)?;
        tape.backward(f.logits, seed.data())?;
        let mut grad = vec![0.0; self.weights.len()];
        for (layer, vars) in f.params.iter().enumerate() {
            for (&v, &(off, shape)) in vars.iter().zip(self.weights.slots(layer)) {
                if let Some(g) = tape.grad(v) {
                    grad[off..off + numel(&shape)].copy_from_slice(g);
                }
            }
        }
        Ok((loss, grad))
    }
}
