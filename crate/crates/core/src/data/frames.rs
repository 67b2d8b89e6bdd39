use super::manifest::{DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::io;
use std::path::{Path, PathBuf};

/// Train-split pixel statistics in [0,1] units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
    pub train_seed: u64,
}

impl NormStats {
    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("stats serialize");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }
}

/// Sidecar location for a manifest's normalization statistics.
pub fn norm_stats_path(manifest_path: &Path) -> PathBuf {
    manifest_path.with_extension("norm.json")
}

/// 8-bit grayscale image as (height, width, pixels / 255).
pub fn read_gray(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let bad = |m: String| Error::io(path, io::Error::new(io::ErrorKind::InvalidData, m));
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| bad(e.to_string()))?;
    let gray = match img {
        image::DynamicImage::ImageLuma8(g) => g,
        other => return Err(bad(format!("expected 8-bit grayscale, found {:?}", other.color()))),
    };
    let (w, h) = gray.dimensions();
    Ok((h as usize, w as usize, gray.into_raw().into_iter().map(|p| p as f64 / 255.0).collect()))
}

/// Mean and population standard deviation over every train-split pixel.
pub fn compute_norm_stats(manifest: &DatasetManifest, train_seed: u64) -> Result<NormStats> {
    let (mut sum, mut sum_sq, mut n) = (0.0f64, 0.0f64, 0usize);
    for v in manifest.split_videos(Split::Train) {
        for f in &v.frames {
            let (_, _, px) = read_gray(&manifest.resolve(f))?;
            n += px.len();
            for p in px {
                sum += p;
                sum_sq += p * p;
            }
        }
    }
    if n == 0 {
        return Err(Error::Data("train split has no frames".into()));
    }
    let mean = sum / n as f64;
    let var = (sum_sq / n as f64 - mean * mean).max(0.0);
    if var == 0.0 {
        return Err(Error::Data("train pixels have zero variance".into()));
    }
    Ok(NormStats { mean, std: var.sqrt(), train_seed })
}

/// Standardized images of one split with their provenance, ordered by
/// (video id, frame index).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub video_ids: Vec<String>,
    pub frames: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> [usize; 4] {
        let s = self.images.shape();
        [1, s[1], s[2], s[3]]
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            images: self.images.select_items(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            video_ids: idx.iter().map(|&i| self.video_ids[i].clone()).collect(),
            frames: idx.iter().map(|&i| self.frames[i].clone()).collect(),
        }
    }
}

pub fn load_frames(manifest: &DatasetManifest, split: Split, stats: &NormStats) -> Result<Dataset> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut video_ids = Vec::new();
    let mut frames = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    for v in manifest.split_videos(split) {
        for f in &v.frames {
            let path = manifest.resolve(f);
            let (h, w, px) = read_gray(&path)?;
            match dims {
                None => dims = Some((h, w)),
                Some(d) if d != (h, w) => {
                    return Err(Error::Data(format!(
                        "{} is {h}x{w}, earlier frames are {}x{}",
                        path.display(),
                        d.0,
                        d.1
                    )))
                }
                _ => {}
            }
            data.extend(px.into_iter().map(|p| stats.apply(p)));
            labels.push(v.label.index());
            video_ids.push(v.video_id.clone());
            frames.push(f.clone());
        }
    }
    let (h, w) = dims.ok_or_else(|| Error::Data(format!("{split} split has no frames")))?;
    Ok(Dataset {
        images: Tensor::from_vec([labels.len(), 1, h, w], data)?,
        labels,
        video_ids,
        frames,
    })
}
