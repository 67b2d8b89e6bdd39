//! JSON graph files: `{"version", "input_shape", "layers": [{"type", ...}]}`.

use super::spec::{LayerSpec, LAYER_TAGS};
use super::{build_graph, ModelGraph};
use crate::error::{Error, Result};
use crate::tensor::Shape;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const GRAPH_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub version: u32,
    pub input_shape: Shape,
    pub layers: Vec<LayerSpec>,
}

impl GraphFile {
    pub fn new(input_shape: Shape, layers: Vec<LayerSpec>) -> Self {
        GraphFile {
            version: GRAPH_FORMAT_VERSION,
            input_shape,
            layers,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph file serializes")
    }

    pub fn build(&self, rng_seed: u64) -> Result<ModelGraph> {
        build_graph(&self.layers, self.input_shape, rng_seed)
    }
}

pub fn serialize_graph(graph: &ModelGraph) -> String {
    GraphFile::new(graph.input_shape(), graph.layers().to_vec()).to_json()
}

fn parse_err(msg: impl std::fmt::Display) -> Error {
    Error::Parse(msg.to_string())
}

/// Parses and validates the file structure without building weights.
pub fn deserialize_specs(text: &str) -> Result<GraphFile> {
    let root: Value = serde_json::from_str(text)
        .map_err(|e| parse_err(format!("invalid JSON at line {}, column {}: {e}", e.line(), e.column())))?;
    let obj = root
        .as_object()
        .ok_or_else(|| parse_err("graph file must be a JSON object"))?;
    let version = obj
        .get("version")
        .ok_or_else(|| parse_err("missing field `version`"))?
        .as_u64()
        .ok_or_else(|| parse_err("field `version` must be an unsigned integer"))?;
    if version != GRAPH_FORMAT_VERSION as u64 {
        return Err(parse_err(format!(
            "unsupported graph format version {version} (this build reads version {GRAPH_FORMAT_VERSION})"
        )));
    }
    let input_shape: Shape = serde_json::from_value(
        obj.get("input_shape")
            .cloned()
            .ok_or_else(|| parse_err("missing field `input_shape`"))?,
    )
    .map_err(|e| parse_err(format!("field `input_shape`: {e}")))?;
    let layers_v = obj
        .get("layers")
        .ok_or_else(|| parse_err("missing field `layers`"))?
        .as_array()
        .ok_or_else(|| parse_err("field `layers` must be an array"))?;
    let mut layers = Vec::with_capacity(layers_v.len());
    for (i, lv) in layers_v.iter().enumerate() {
        let tag = lv
            .get("type")
            .and_then(Value::as_str)
            .ok_or_else(|| parse_err(format!("layers[{i}]: missing string field `type`")))?;
        if !LAYER_TAGS.contains(&tag) {
            return Err(parse_err(format!(
                "layers[{i}]: unknown layer type `{tag}` for graph format version {GRAPH_FORMAT_VERSION}"
            )));
        }
        let spec: LayerSpec =
            serde_json::from_value(lv.clone()).map_err(|e| parse_err(format!("layers[{i}] ({tag}): {e}")))?;
        layers.push(spec);
    }
    Ok(GraphFile {
        version: version as u32,
        input_shape,
        layers,
    })
}

pub fn deserialize_graph(text: &str, rng_seed: u64) -> Result<ModelGraph> {
    deserialize_specs(text)?.build(rng_seed)
}
