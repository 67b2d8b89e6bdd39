use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

macro_rules! text_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "lowercase")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($text => Ok($name::$variant),)+
                    other => Err(format!(
                        "bad {} value `{other}` (expected one of: {})",
                        stringify!($name),
                        [$($text),+].join(", ")
                    )),
                }
            }
        }
    };
}

text_enum!(Label { Negative => "negative", Positive => "positive" });
text_enum!(Probe { Convex => "convex", Linear => "linear" });
text_enum!(SourceClass { Covid => "covid", Normal => "normal", Pneumonia => "pneumonia", Other => "other" });
text_enum!(Split { Train => "train", Val => "val", Test => "test" });

impl Label {
    /// Class index used by the two-logit head.
    pub fn index(self) -> usize {
        match self {
            Label::Negative => crate::graph::NEGATIVE,
            Label::Positive => crate::graph::POSITIVE,
        }
    }
}

impl SourceClass {
    pub fn label(self) -> Label {
        if self == SourceClass::Covid {
            Label::Positive
        } else {
            Label::Negative
        }
    }
}

impl Split {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub video_id: String,
    pub patient_id: Option<String>,
    /// Frame paths as written in the manifest (relative to its directory).
    pub frames: Vec<String>,
    pub label: Label,
    pub probe: Probe,
    pub source_class: SourceClass,
    pub split: Option<Split>,
}

impl VideoRecord {
    pub fn new(video_id: impl Into<String>, source_class: SourceClass, probe: Probe, frames: Vec<String>) -> Self {
        VideoRecord {
            video_id: video_id.into(),
            patient_id: None,
            frames,
            label: source_class.label(),
            probe,
            source_class,
            split: None,
        }
    }

    /// Grouping key for splitting: the patient when known, else the video.
    pub fn group_key(&self) -> String {
        match &self.patient_id {
            Some(p) => format!("patient:{p}"),
            None => format!("video:{}", self.video_id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub videos: Vec<VideoRecord>,
    /// Directory that relative frame paths resolve against.
    pub root: PathBuf,
}

const REQUIRED: [&str; 4] = ["video_id", "frame_path", "source_class", "probe"];

impl DatasetManifest {
    pub fn new(videos: Vec<VideoRecord>, root: impl Into<PathBuf>) -> Self {
        DatasetManifest { videos, root: root.into() }
    }

    pub fn resolve(&self, frame: &str) -> PathBuf {
        let p = Path::new(frame);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn frame_count(&self) -> usize {
        self.videos.iter().map(|v| v.frames.len()).sum()
    }

    pub fn is_split(&self) -> bool {
        !self.videos.is_empty() && self.videos.iter().all(|v| v.split.is_some())
    }

    /// Videos of one split ordered by video id.
    pub fn split_videos(&self, split: Split) -> Vec<&VideoRecord> {
        let mut v: Vec<&VideoRecord> = self.videos.iter().filter(|v| v.split == Some(split)).collect();
        v.sort_by(|a, b| a.video_id.cmp(&b.video_id));
        v
    }

    /// Drops every linear-probe video.
    pub fn filter_convex(&self) -> DatasetManifest {
        DatasetManifest {
            videos: self.videos.iter().filter(|v| v.probe == Probe::Convex).cloned().collect(),
            root: self.root.clone(),
        }
    }

    pub fn parse_csv(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| Error::Parse(format!("manifest header: {e}")))?
            .clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let mut idx = [0usize; 4];
        for (slot, name) in idx.iter_mut().zip(REQUIRED) {
            *slot = col(name).ok_or_else(|| Error::Parse(format!("manifest is missing column `{name}`")))?;
        }
        let [vid_c, frame_c, class_c, probe_c] = idx;
        let patient_c = col("patient_id");
        let split_c = col("split");

        let mut videos: Vec<VideoRecord> = Vec::new();
        let mut by_id: HashMap<String, usize> = HashMap::new();
        let mut seen_frames: HashSet<String> = HashSet::new();
        for (i, rec) in reader.records().enumerate() {
            let row = i + 2;
            let rec = rec.map_err(|e| Error::Parse(format!("row {row}: {e}")))?;
            let field = |c: usize| rec.get(c).unwrap_or("");
            let bad = |m: String| Error::Parse(format!("row {row}: {m}"));
            let video_id = field(vid_c).to_string();
            if video_id.is_empty() {
                return Err(bad("empty video_id".into()));
            }
            let frame = field(frame_c).to_string();
            if frame.is_empty() {
                return Err(bad("empty frame_path".into()));
            }
            let source_class: SourceClass = field(class_c).parse().map_err(bad)?;
            let probe: Probe = field(probe_c).parse().map_err(bad)?;
            let patient_id = patient_c.map(field).filter(|s| !s.is_empty()).map(str::to_string);
            let split = match split_c.map(field).filter(|s| !s.is_empty()) {
                Some(s) => Some(s.parse::<Split>().map_err(bad)?),
                None => None,
            };
            if !seen_frames.insert(frame.clone()) {
                return Err(Error::Integrity(format!("row {row}: duplicate frame path `{frame}`")));
            }
            match by_id.get(&video_id) {
                Some(&at) => {
                    let v = &mut videos[at];
                    if v.source_class != source_class || v.probe != probe || v.patient_id != patient_id || v.split != split {
                        return Err(bad(format!("video `{video_id}` has conflicting attributes across rows")));
                    }
                    v.frames.push(frame);
                }
                None => {
                    by_id.insert(video_id.clone(), videos.len());
                    let mut v = VideoRecord::new(video_id, source_class, probe, vec![frame]);
                    v.patient_id = patient_id;
                    v.split = split;
                    videos.push(v);
                }
            }
        }
        Ok(DatasetManifest { videos, root: root.into() })
    }

    pub fn to_csv(&self) -> Result<String> {
        let with_patient = self.videos.iter().any(|v| v.patient_id.is_some());
        let with_split = self.videos.iter().any(|v| v.split.is_some());
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["video_id"];
        if with_patient {
            header.push("patient_id");
        }
        header.extend(["frame_path", "source_class", "probe"]);
        if with_split {
            header.push("split");
        }
        let csv_err = |e: csv::Error| Error::Data(format!("writing manifest: {e}"));
        w.write_record(&header).map_err(csv_err)?;
        for v in &self.videos {
            for f in &v.frames {
                let mut row = vec![v.video_id.as_str()];
                if with_patient {
                    row.push(v.patient_id.as_deref().unwrap_or(""));
                }
                row.extend([f.as_str(), v.source_class.as_str(), v.probe.as_str()]);
                if with_split {
                    row.push(v.split.map_or("", Split::as_str));
                }
                w.write_record(&row).map_err(csv_err)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(format!("writing manifest: {e}")))?;
        Ok(String::from_utf8(bytes).expect("manifest text is UTF-8"))
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    DatasetManifest::parse_csv(&text, root)
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    std::fs::write(path, manifest.to_csv()?).map_err(|e| Error::io(path, e))
}
