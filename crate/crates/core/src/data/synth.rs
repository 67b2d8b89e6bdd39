//! Synthetic lung-ultrasound-like frames with evidence masks.
//!
//! Every frame has multiplicative speckle over a depth-attenuated tissue
//! background and a bright pleural band. Negative videos show faint horizontal
//! repeats of the band (A-lines). Positive videos break the band with dark gaps,
//! add bright vertical streaks below it (B-lines) and sometimes a diffuse bright
//! patch; the mask marks exactly those pixels.

use super::manifest::{DatasetManifest, Probe, SourceClass, VideoRecord};
use crate::error::{Error, Result};
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub image_size: usize,
    pub videos_per_class: usize,
    pub frames_per_video: usize,
    /// Pleural band depth range as fractions of the image height.
    pub pleural_depth: [f64; 2],
    /// Residual band brightness inside a gap, relative to the intact band.
    pub gap_intensity: f64,
    pub bline_intensity: f64,
    pub white_lung_prob: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(seed: u64) -> Self {
        SynthConfig {
            image_size: 128,
            videos_per_class: 60,
            frames_per_video: 20,
            pleural_depth: [0.22, 0.38],
            gap_intensity: 0.15,
            bline_intensity: 0.45,
            white_lung_prob: 0.3,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size < 32 {
            return Err(Error::Config(format!("image_size must be >= 32, got {}", self.image_size)));
        }
        if self.videos_per_class == 0 || self.frames_per_video == 0 {
            return Err(Error::Config("videos_per_class and frames_per_video must be positive".into()));
        }
        let [lo, hi] = self.pleural_depth;
        if !(0.05..=0.6).contains(&lo) || !(lo..=0.6).contains(&hi) {
            return Err(Error::Config(format!("pleural_depth {:?} must lie within [0.05, 0.6]", self.pleural_depth)));
        }
        if !(0.0..=1.0).contains(&self.gap_intensity)
            || !(self.bline_intensity > 0.0 && self.bline_intensity <= 1.0)
            || !(0.0..=1.0).contains(&self.white_lung_prob)
        {
            return Err(Error::Config("synthetic intensities must lie in [0,1]".into()));
        }
        Ok(())
    }

    pub fn total_frames(&self) -> usize {
        2 * self.videos_per_class * self.frames_per_video
    }
}

#[derive(Debug, Clone)]
struct Gap {
    x: f64,
    half_width: f64,
}

#[derive(Debug, Clone)]
struct Streak {
    x: f64,
    half_width: f64,
    strength: f64,
}

#[derive(Debug, Clone)]
struct Patch {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
}

/// Per-video scene shared by all of its frames.
#[derive(Debug, Clone)]
struct Scene {
    positive: bool,
    gain: f64,
    depth: f64,
    curvature: f64,
    thickness: f64,
    a_lines: f64,
    gaps: Vec<Gap>,
    streaks: Vec<Streak>,
    patch: Option<Patch>,
    base_noise: Vec<f64>,
}

fn gaussian_field(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Separable 3×3 box blur with clamped borders.
fn box_blur(src: &[f64], size: usize) -> Vec<f64> {
    let clamp = |i: isize| i.clamp(0, size as isize - 1) as usize;
    let mut tmp = vec![0.0; src.len()];
    for y in 0..size {
        for x in 0..size {
            let s: f64 = (-1..=1).map(|d| src[y * size + clamp(x as isize + d)]).sum();
            tmp[y * size + x] = s / 3.0;
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..size {
        for x in 0..size {
            let s: f64 = (-1..=1).map(|d| tmp[clamp(y as isize + d) * size + x]).sum();
            out[y * size + x] = s / 3.0;
        }
    }
    out
}

impl Scene {
    fn sample(cfg: &SynthConfig, positive: bool, rng: &mut ChaCha8Rng) -> Scene {
        let size = cfg.image_size as f64;
        let [lo, hi] = cfg.pleural_depth;
        let depth = rng.random_range(lo * size..=hi * size);
        let margin = size / 16.0;
        let mut gaps = Vec::new();
        let mut streaks = Vec::new();
        let mut patch = None;
        let mut a_lines = 1.0;
        if positive {
            for _ in 0..rng.random_range(2..=5) {
                gaps.push(Gap {
                    x: rng.random_range(margin..size - margin),
                    half_width: rng.random_range(2.0..=5.0),
                });
            }
            for _ in 0..rng.random_range(1..=3) {
                streaks.push(Streak {
                    x: rng.random_range(margin..size - margin),
                    half_width: rng.random_range(1.5..=3.0),
                    strength: rng.random_range(0.75..=1.0),
                });
            }
            if rng.random_bool(cfg.white_lung_prob) {
                let cy_lo = depth + size * 0.15;
                let cy_hi = (size * 0.85).max(cy_lo + 1.0);
                patch = Some(Patch {
                    cx: rng.random_range(size * 0.2..size * 0.8),
                    cy: rng.random_range(cy_lo..cy_hi),
                    rx: rng.random_range(size * 0.08..size * 0.16),
                    ry: rng.random_range(size * 0.06..size * 0.12),
                });
            }
            a_lines = if rng.random_bool(0.4) { 0.5 } else { 0.0 };
        }
        Scene {
            positive,
            gain: rng.random_range(0.7..=1.3),
            depth,
            curvature: rng.random_range(0.0..=size / 20.0),
            thickness: rng.random_range(3.0..=5.0),
            a_lines,
            gaps,
            streaks,
            patch,
            base_noise: gaussian_field(rng, cfg.image_size * cfg.image_size),
        }
    }

    /// Renders one frame: 8-bit pixels and 0/255 evidence mask.
    fn render(&self, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> (Vec<u8>, Vec<u8>) {
        let n = cfg.image_size;
        let size = n as f64;
        let dy = rng.random_range(-1.0..=1.0);
        let dx = rng.random_range(-1.0..=1.0);
        let fresh = gaussian_field(rng, n * n);
        let mixed: Vec<f64> = self
            .base_noise
            .iter()
            .zip(&fresh)
            .map(|(b, f)| 0.9 * b + 0.436 * f)
            .collect();
        let noise = box_blur(&mixed, n);

        let mut pixels = Vec::with_capacity(n * n);
        let mut mask = Vec::with_capacity(n * n);
        for y in 0..n {
            let yf = y as f64;
            for x in 0..n {
                let xf = x as f64;
                let u = (xf - size / 2.0) / (size / 2.0);
                let top = self.depth + dy + self.curvature * u * u;
                let bottom = top + self.thickness;
                let speckle = (0.45 * noise[y * n + x]).exp();

                let tissue = if yf < top {
                    0.28 + 0.08 * yf / top
                } else {
                    0.05 + 0.17 * (-(yf - top) / (0.5 * size)).exp()
                };

                let mut structure = 0.0;
                let mut evidence = false;

                let mid = 0.5 * (top + bottom);
                let band = (-((yf - mid) / (0.5 * self.thickness)).powi(2)).exp();
                let mut band_level = 0.85;
                for g in &self.gaps {
                    if (xf - (g.x + dx)).abs() <= g.half_width {
                        band_level *= cfg.gap_intensity;
                        if yf >= top - 2.0 && yf <= bottom + 2.0 {
                            evidence = true;
                        }
                    }
                }
                structure += band_level * band;

                if self.a_lines > 0.0 {
                    for k in 2..=3 {
                        let line = top * k as f64;
                        let d = (yf - line) / 1.2;
                        structure += self.a_lines * 0.22 * 0.7f64.powi(k - 2) * (-d * d).exp();
                    }
                }

                if yf > bottom {
                    for s in &self.streaks {
                        let d = (xf - (s.x + dx)).abs();
                        if d <= s.half_width + 1.0 {
                            let fall = 0.6 + 0.4 * (-(yf - bottom) / size).exp();
                            let profile = if d <= s.half_width { 1.0 } else { 0.5 };
                            structure += cfg.bline_intensity * s.strength * fall * profile;
                            if d <= s.half_width {
                                evidence = true;
                            }
                        }
                    }
                    if let Some(p) = &self.patch {
                        let r = ((xf - p.cx - dx) / p.rx).powi(2) + ((yf - p.cy - dy) / p.ry).powi(2);
                        if r <= 1.0 {
                            structure += 0.3 * (1.0 - r).sqrt();
                            evidence = true;
                        }
                    }
                }

                let v = self.gain * (tissue * speckle + structure * (0.7 + 0.3 * speckle));
                pixels.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
                mask.push(if evidence && self.positive { 255 } else { 0 });
            }
        }
        (pixels, mask)
    }
}

/// One generated frame kept in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthFrame {
    pub video_id: String,
    pub source_class: SourceClass,
    pub pixels: Vec<u8>,
    pub mask: Vec<u8>,
}

fn negative_class(i: usize) -> SourceClass {
    [SourceClass::Normal, SourceClass::Pneumonia, SourceClass::Other][i % 3]
}

/// Videos in generation order: positive and negative interleaved.
fn video_plan(cfg: &SynthConfig) -> Vec<(String, SourceClass)> {
    let mut plan = Vec::with_capacity(2 * cfg.videos_per_class);
    for i in 0..cfg.videos_per_class {
        plan.push((format!("covid_{i:03}"), SourceClass::Covid));
        let c = negative_class(i);
        plan.push((format!("{c}_{i:03}"), c));
    }
    plan
}

/// Calls `sink` for every frame in deterministic order.
pub fn synth_frames(cfg: &SynthConfig, mut sink: impl FnMut(usize, SynthFrame) -> Result<()>) -> Result<()> {
    cfg.validate()?;
    for (v, (video_id, class)) in video_plan(cfg).into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(v as u64);
        let scene = Scene::sample(cfg, class == SourceClass::Covid, &mut rng);
        for k in 0..cfg.frames_per_video {
            let (pixels, mask) = scene.render(cfg, &mut rng);
            sink(
                k,
                SynthFrame {
                    video_id: video_id.clone(),
                    source_class: class,
                    pixels,
                    mask,
                },
            )?;
        }
    }
    Ok(())
}

/// Mask file for a frame path written by [`synth_generate`].
pub fn mask_for(frame: &str) -> String {
    match frame.strip_prefix("frames/") {
        Some(rest) => format!("masks/{rest}"),
        None => frame.replace("frames", "masks"),
    }
}

/// Binary (P5) PGM bytes for a square image.
pub fn encode_pgm(pixels: &[u8], size: usize) -> Vec<u8> {
    encode_pgm_rect(pixels, size, size)
}

pub fn encode_pgm_rect(pixels: &[u8], width: usize, height: usize) -> Vec<u8> {
    let mut buf = Vec::new();
    PnmEncoder::new(&mut buf)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(pixels, width as u32, height as u32, ExtendedColorType::L8)
        .expect("in-memory PGM encoding");
    buf
}

pub const MANIFEST_NAME: &str = "manifest.csv";

/// Writes `frames/`, `masks/` and `manifest.csv` under `out_dir`.
pub fn synth_generate(cfg: &SynthConfig, out_dir: &Path) -> Result<(DatasetManifest, PathBuf)> {
    let frames_dir = out_dir.join("frames");
    let masks_dir = out_dir.join("masks");
    for d in [&frames_dir, &masks_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut videos: Vec<VideoRecord> = Vec::new();
    synth_frames(cfg, |k, f| {
        let name = format!("{}_{k:02}.pgm", f.video_id);
        let rel = format!("frames/{name}");
        let fp = frames_dir.join(&name);
        fs::write(&fp, encode_pgm(&f.pixels, cfg.image_size)).map_err(|e| Error::io(&fp, e))?;
        let mp = masks_dir.join(&name);
        fs::write(&mp, encode_pgm(&f.mask, cfg.image_size)).map_err(|e| Error::io(&mp, e))?;
        match videos.last_mut() {
            Some(v) if v.video_id == f.video_id => v.frames.push(rel),
            _ => videos.push(VideoRecord::new(f.video_id, f.source_class, Probe::Convex, vec![rel])),
        }
        Ok(())
    })?;
    let manifest = DatasetManifest::new(videos, out_dir);
    let path = out_dir.join(MANIFEST_NAME);
    super::manifest::write_manifest(&manifest, &path)?;
    Ok((manifest, path))
}
