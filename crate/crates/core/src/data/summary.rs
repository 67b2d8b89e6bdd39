use super::manifest::{DatasetManifest, Label, SourceClass, Split};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub positive: usize,
    pub negative: usize,
}

impl LabelCounts {
    pub fn total(&self) -> usize {
        self.positive + self.negative
    }

    fn add(&mut self, label: Label, n: usize) {
        match label {
            Label::Positive => self.positive += n,
            Label::Negative => self.negative += n,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestSummary {
    /// Frame counts per split; `unassigned` holds frames without a split.
    pub frames: BTreeMap<String, LabelCounts>,
    pub videos: BTreeMap<String, LabelCounts>,
    /// Video counts per source class.
    pub videos_per_class: BTreeMap<String, usize>,
    pub total_frames: usize,
    pub total_videos: usize,
}

const UNASSIGNED: &str = "unassigned";

pub fn summarize(manifest: &DatasetManifest) -> ManifestSummary {
    let mut s = ManifestSummary::default();
    for split in Split::ALL {
        s.frames.insert(split.to_string(), LabelCounts::default());
        s.videos.insert(split.to_string(), LabelCounts::default());
    }
    for c in SourceClass::ALL {
        s.videos_per_class.insert(c.to_string(), 0);
    }
    for v in &manifest.videos {
        let key = v.split.map_or(UNASSIGNED.to_string(), |x| x.to_string());
        s.frames.entry(key.clone()).or_default().add(v.label, v.frames.len());
        s.videos.entry(key).or_default().add(v.label, 1);
        *s.videos_per_class.entry(v.source_class.to_string()).or_default() += 1;
        s.total_frames += v.frames.len();
        s.total_videos += 1;
    }
    s
}

impl ManifestSummary {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<11} {:>8} {:>8} {:>8} {:>8}", "split", "frames", "positive", "negative", "videos");
        let mut keys: Vec<&String> = Split::ALL
            .iter()
            .map(|s| s.as_str())
            .filter_map(|k| self.frames.get_key_value(k).map(|(k, _)| k))
            .collect();
        if let Some((k, _)) = self.frames.get_key_value(UNASSIGNED) {
            keys.push(k);
        }
        for k in keys {
            let f = self.frames[k];
            let v = self.videos.get(k).copied().unwrap_or_default();
            let _ = writeln!(out, "{k:<11} {:>8} {:>8} {:>8} {:>8}", f.total(), f.positive, f.negative, v.total());
        }
        let _ = writeln!(out, "{:<11} {:>8} {:>8} {:>8} {:>8}", "total", self.total_frames, "", "", self.total_videos);
        out.push('\n');
        let _ = writeln!(out, "{:<11} {:>8}", "class", "videos");
        for c in SourceClass::ALL {
            let _ = writeln!(out, "{:<11} {:>8}", c.as_str(), self.videos_per_class[c.as_str()]);
        }
        out
    }
}
