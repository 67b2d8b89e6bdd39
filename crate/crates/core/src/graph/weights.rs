//! Binary weight files.
//!
//! Layout: 16-byte magic, one JSON header line `{"digest", "param_count"}`
//! terminated by `\n`, then `param_count` little-endian f64 values.

use super::format::GraphFile;
use super::ModelGraph;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::Path;

pub const WEIGHTS_MAGIC: &[u8; 16] = b"ACNET\0WEIGHTS\0\x01\n";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    digest: String,
    param_count: usize,
}

/// SHA-256 over the compact JSON of the graph file (input shape + layers).
pub fn spec_digest(graph: &ModelGraph) -> String {
    let file = GraphFile::new(graph.input_shape(), graph.layers().to_vec());
    let compact = serde_json::to_vec(&file).expect("graph file serializes");
    hex::encode(Sha256::digest(&compact))
}

pub fn encode_weights(graph: &ModelGraph) -> Vec<u8> {
    let header = Header {
        digest: spec_digest(graph),
        param_count: graph.param_count(),
    };
    let mut buf = Vec::with_capacity(16 + 128 + 8 * header.param_count);
    buf.extend_from_slice(WEIGHTS_MAGIC);
    buf.extend_from_slice(&serde_json::to_vec(&header).expect("header serializes"));
    buf.push(b'\n');
    for v in graph.weights().arena() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_weights_into(graph: &mut ModelGraph, bytes: &[u8]) -> Result<()> {
    if bytes.len() < WEIGHTS_MAGIC.len() || &bytes[..16] != WEIGHTS_MAGIC {
        return Err(Error::Integrity("missing weight-file magic".into()));
    }
    let rest = &bytes[16..];
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Integrity("unterminated weight-file header".into()))?;
    let header: Header = serde_json::from_slice(&rest[..nl])
        .map_err(|e| Error::Integrity(format!("bad weight-file header: {e}")))?;
    let expected_digest = spec_digest(graph);
    if header.digest != expected_digest {
        return Err(Error::Incompatible(format!(
            "weights were saved for graph {} but target graph is {}",
            header.digest, expected_digest
        )));
    }
    if header.param_count != graph.param_count() {
        return Err(Error::Incompatible(format!(
            "file holds {} parameters, graph has {}",
            header.param_count,
            graph.param_count()
        )));
    }
    let payload = &rest[nl + 1..];
    let expected_len = 16 + nl + 1 + 8 * header.param_count;
    if bytes.len() != expected_len {
        return Err(Error::Integrity(format!(
            "weight file is {} bytes, header implies {expected_len}",
            bytes.len()
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Integrity("weight file contains non-finite values".into()));
    }
    graph.weights_mut().arena_mut().copy_from_slice(&values);
    Ok(())
}

pub fn save_weights(graph: &ModelGraph, path: &Path) -> Result<()> {
    fs::write(path, encode_weights(graph)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(graph: &mut ModelGraph, path: &Path) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights_into(graph, &bytes)
}
