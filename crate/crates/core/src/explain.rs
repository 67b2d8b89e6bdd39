//! Occlusion-based critical-factor maps and their localization scores.

use crate::error::{Error, Result};
use crate::graph::{ModelGraph, NUM_CLASSES, POSITIVE};
use crate::nn::softmax;
use crate::tensor::{format_shape, Tensor};
use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcclusionConfig {
    pub patch: usize,
    pub stride: usize,
    /// Value written into occluded pixels; 0 is the train mean after standardization.
    pub baseline: f64,
    pub target_class: usize,
    /// Occluded copies evaluated per forward pass.
    pub batch: usize,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        OcclusionConfig {
            patch: 16,
            stride: 8,
            baseline: 0.0,
            target_class: POSITIVE,
            batch: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalFactorMap {
    pub height: usize,
    pub width: usize,
    /// Row-major importance in [0, 1].
    pub values: Vec<f64>,
    pub patch: usize,
    pub stride: usize,
    pub baseline: f64,
    pub target_class: usize,
    pub original_prob: f64,
    pub probes: usize,
}

/// Patch origins along one axis: every `stride`, plus the far edge when the
/// regular grid would leave it uncovered.
pub fn patch_origins(size: usize, patch: usize, stride: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..=size - patch).step_by(stride).collect();
    if stride <= patch && *v.last().expect("size >= patch") + patch < size {
        v.push(size - patch);
    }
    v
}

fn probability(graph: &ModelGraph, batch: &Tensor, class: usize) -> Result<Vec<f64>> {
    let logits = graph.forward(batch)?;
    Ok(logits.data().chunks(NUM_CLASSES).map(|r| softmax(r)[class]).collect())
}

pub fn occlusion_map(graph: &ModelGraph, image: &Tensor, cfg: &OcclusionConfig) -> Result<CriticalFactorMap> {
    let [n, c, h, w] = image.shape();
    if n != 1 {
        return Err(Error::Dimension(format!("expected a single image, got {}", format_shape(&image.shape()))));
    }
    if cfg.patch == 0 || cfg.patch > h || cfg.patch > w {
        return Err(Error::Config(format!("patch {} does not fit a {h}x{w} image", cfg.patch)));
    }
    if cfg.stride == 0 {
        return Err(Error::Config("stride must be >= 1".into()));
    }
    if cfg.target_class >= NUM_CLASSES {
        return Err(Error::Config(format!("target class {} out of range", cfg.target_class)));
    }
    graph.check_batch(image)?;
    let p0 = probability(graph, image, cfg.target_class)?[0];

    let positions: Vec<(usize, usize)> = patch_origins(h, cfg.patch, cfg.stride)
        .into_iter()
        .flat_map(|y| patch_origins(w, cfg.patch, cfg.stride).into_iter().map(move |x| (y, x)))
        .collect();
    let plane = h * w;
    let mut sums = vec![0.0; plane];
    let mut cover = vec![0u32; plane];
    for chunk in positions.chunks(cfg.batch.max(1)) {
        let mut data = Vec::with_capacity(chunk.len() * c * plane);
        for &(py, px) in chunk {
            let start = data.len();
            data.extend_from_slice(image.data());
            for ch in 0..c {
                for y in py..py + cfg.patch {
                    let row = start + ch * plane + y * w;
                    data[row + px..row + px + cfg.patch].fill(cfg.baseline);
                }
            }
        }
        let batch = Tensor::from_vec([chunk.len(), c, h, w], data)?;
        let probs = probability(graph, &batch, cfg.target_class)?;
        for (&(py, px), p) in chunk.iter().zip(probs) {
            let drop = (p0 - p).max(0.0);
            for y in py..py + cfg.patch {
                for x in px..px + cfg.patch {
                    sums[y * w + x] += drop;
                    cover[y * w + x] += 1;
                }
            }
        }
    }
    let mut values: Vec<f64> = sums
        .iter()
        .zip(&cover)
        .map(|(&s, &k)| if k > 0 { s / k as f64 } else { 0.0 })
        .collect();
    let max = values.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        values.iter_mut().for_each(|v| *v /= max);
    }
    Ok(CriticalFactorMap {
        height: h,
        width: w,
        values,
        patch: cfg.patch,
        stride: cfg.stride,
        baseline: cfg.baseline,
        target_class: cfg.target_class,
        original_prob: p0,
        probes: positions.len(),
    })
}

pub const DEFAULT_QUANTILE: f64 = 0.85;

/// Pixels at or above the `quantile` of the nonzero importances.
pub fn critical_regions(map: &CriticalFactorMap, quantile: f64) -> Result<Vec<bool>> {
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(Error::Config(format!("quantile {quantile} must lie in (0, 1)")));
    }
    let mut nonzero: Vec<f64> = map.values.iter().copied().filter(|&v| v > 0.0).collect();
    if nonzero.is_empty() {
        return Ok(vec![false; map.values.len()]);
    }
    nonzero.sort_by(f64::total_cmp);
    let rank = ((quantile * nonzero.len() as f64).ceil() as usize).clamp(1, nonzero.len());
    let cut = nonzero[rank - 1];
    Ok(map.values.iter().map(|&v| v > 0.0 && v >= cut).collect())
}

/// Square (Chebyshev) dilation of a row-major mask.
pub fn dilate(mask: &[bool], height: usize, width: usize, radius: usize) -> Vec<bool> {
    let mut rows = vec![false; mask.len()];
    for y in 0..height {
        for x in 0..width {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius).min(width - 1);
            rows[y * width + x] = mask[y * width + lo..=y * width + hi].iter().any(|&b| b);
        }
    }
    let mut out = vec![false; mask.len()];
    for y in 0..height {
        let lo = y.saturating_sub(radius);
        let hi = (y + radius).min(height - 1);
        for x in 0..width {
            out[y * width + x] = (lo..=hi).any(|yy| rows[yy * width + x]);
        }
    }
    out
}

/// Fraction of importance mass inside the truth mask dilated by patch/2.
pub fn localization_score(map: &CriticalFactorMap, truth: &[bool]) -> Result<f64> {
    if truth.len() != map.values.len() {
        return Err(Error::Dimension(format!(
            "mask has {} pixels, map has {}",
            truth.len(),
            map.values.len()
        )));
    }
    let total: f64 = map.values.iter().sum();
    if total == 0.0 {
        return Ok(0.0);
    }
    let grown = dilate(truth, map.height, map.width, map.patch / 2);
    let inside: f64 = map.values.iter().zip(&grown).filter(|(_, &g)| g).map(|(v, _)| v).sum();
    Ok(inside / total)
}

pub const DEFAULT_MAX_BLEND: u8 = 255;

/// RGB pixels: gray base, red channel pulled toward `max_blend` by importance.
pub fn overlay_pixels(gray: &[u8], map: &CriticalFactorMap, max_blend: u8) -> Result<Vec<u8>> {
    if gray.len() != map.values.len() {
        return Err(Error::Dimension(format!("{} gray pixels for a {}-pixel map", gray.len(), map.values.len())));
    }
    let mut rgb = Vec::with_capacity(3 * gray.len());
    for (&g, &m) in gray.iter().zip(&map.values) {
        let red = ((1.0 - m) * g as f64 + m * max_blend as f64).round().clamp(0.0, 255.0) as u8;
        rgb.extend([red, g, g]);
    }
    Ok(rgb)
}

pub fn overlay_image(gray: &[u8], map: &CriticalFactorMap, max_blend: u8, out_path: &Path) -> Result<()> {
    let rgb = overlay_pixels(gray, map, max_blend)?;
    let mut buf = Vec::new();
    PngEncoder::new(&mut buf)
        .write_image(&rgb, map.width as u32, map.height as u32, ExtendedColorType::Rgb8)
        .map_err(|e| Error::Data(format!("encoding overlay: {e}")))?;
    std::fs::write(out_path, buf).map_err(|e| Error::io(out_path, e))
}

impl CriticalFactorMap {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("map serializes")
    }

    /// Importance scaled to 0..=255.
    pub fn to_gray(&self) -> Vec<u8> {
        self.values.iter().map(|v| (v * 255.0).round() as u8).collect()
    }

    pub fn argmax(&self) -> usize {
        self.values
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0
    }

    pub fn mass_in(&self, region: &[bool]) -> f64 {
        let total: f64 = self.values.iter().sum();
        if total == 0.0 {
            return 0.0;
        }
        self.values.iter().zip(region).filter(|(_, &r)| r).map(|(v, _)| v).sum::<f64>() / total
    }
}

/// Top-left `side`×`side` block of an `h`×`w` plane.
pub fn top_left(h: usize, w: usize, side: usize) -> Vec<bool> {
    (0..h * w).map(|i| i / w < side && i % w < side).collect()
}

/// Graph on (1,1,size,size) whose positive logit is the mean of the
/// top-left quadrant and whose negative logit is 0.
pub fn quadrant_model(size: usize) -> Result<ModelGraph> {
    use crate::graph::{build_graph, LayerSpec};
    let mut g = build_graph(&[LayerSpec::Dense { out: NUM_CLASSES }], [1, 1, size, size], 0)?;
    let plane = size * size;
    let quad = top_left(size, size, size / 2);
    let n = (size / 2) * (size / 2);
    let arena = g.weights_mut().arena_mut();
    arena.fill(0.0);
    for (i, &q) in quad.iter().enumerate() {
        if q {
            arena[POSITIVE * plane + i] = 1.0 / n as f64;
        }
    }
    Ok(g)
}
