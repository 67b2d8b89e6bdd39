//! Manifests, grouped splits, frame loading and the synthetic generator.

mod frames;
mod manifest;
mod split;
mod summary;
pub mod synth;

pub use frames::{compute_norm_stats, load_frames, norm_stats_path, read_gray, Dataset, NormStats};
pub use manifest::{load_manifest, write_manifest, DatasetManifest, Label, Probe, SourceClass, Split, VideoRecord};
pub use split::{allocate, grouped_split, SPLITS};
pub use summary::{summarize, LabelCounts, ManifestSummary};
pub use synth::{synth_frames, synth_generate, SynthConfig};
