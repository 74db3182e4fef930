//! Dataset loading and result writing.
//!
//! Layout, relative to the dataset root:
//!
//! ```text
//! <seq>/seqinfo.ini         seqLength, imWidth, imHeight, imDir, imExt
//! <seq>/gt/gt.txt           MOTChallenge CSV, 1-based frames
//! <seq>/expressions.json    optional: [{"id", "text", "targets"}]
//! <seq>/captions.json       optional: {"video_caption", "instances": {"<id>": text}}
//! views.json                optional: {"<group>": ["<seq>", ...]}
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::bbox::{normalize_bbox, GeometryError, ImageSize};
use crate::metrics::MetricReport;
use crate::track::{image_refs, CaptionGroundTruth, ReferringExpression, Sequence, SequenceMeta, TrackSet};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{path}:{line}: {reason}")]
    Malformed { path: PathBuf, line: usize, reason: String },
    #[error("{path}: frame {frame} id {id} appears on lines {first} and {second}")]
    Duplicate { path: PathBuf, frame: u32, id: u32, first: usize, second: usize },
    #[error("{path}: {reason}")]
    Invalid { path: PathBuf, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io { path: path.to_path_buf(), source }
}

fn read(path: &Path) -> Result<String, IngestError> {
    if !path.exists() {
        return Err(IngestError::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(io_err(path))
}

fn write(path: &Path, contents: &str) -> Result<(), IngestError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

/// Which annotation classes to keep.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum ClassFilter {
    /// MOTChallenge class 1. Rows without a class column are kept.
    #[default]
    Pedestrian,
    All,
    Only(Vec<i64>),
}

impl ClassFilter {
    fn keeps(&self, class: Option<i64>) -> bool {
        match (self, class) {
            (_, None) | (ClassFilter::All, _) => true,
            (ClassFilter::Pedestrian, Some(c)) => c == 1,
            (ClassFilter::Only(list), Some(c)) => list.contains(&c),
        }
    }
}

/// Reads a MOTChallenge annotation file.
///
/// Rows have 6 to 10 columns: `frame,id,left,top,width,height[,conf,class,visibility,...]`.
/// Rows with `conf == 0` and filtered classes are skipped, as are boxes
/// entirely outside the image (with a warning). `frame_count` defaults to
/// the largest frame seen.
pub fn load_mot_gt(
    path: &Path,
    sequence_id: &str,
    image_size: ImageSize,
    frame_count: Option<u32>,
    filter: &ClassFilter,
) -> Result<TrackSet, IngestError> {
    let text = read(path)?;
    let bad = |line: usize, reason: String| IngestError::Malformed { path: path.to_path_buf(), line, reason };
    let mut rows = Vec::new();
    let mut first_line: HashMap<(u32, u32), usize> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let cols: Vec<&str> = raw.split(',').map(str::trim).collect();
        if !(6..=10).contains(&cols.len()) {
            return Err(bad(line, format!("expected 6 to 10 columns, found {}", cols.len())));
        }
        let nums: Vec<f64> = cols
            .iter()
            .map(|c| c.parse::<f64>().map_err(|_| bad(line, format!("'{c}' is not a number"))))
            .collect::<Result<_, _>>()?;
        let int = |v: f64, what: &str| {
            if v.fract() == 0.0 && v >= 1.0 && v <= u32::MAX as f64 {
                Ok(v as u32)
            } else {
                Err(bad(line, format!("{what} must be a positive integer, got {v}")))
            }
        };
        let frame = int(nums[0], "frame")?;
        let id = int(nums[1], "id")?;
        if nums.get(6).is_some_and(|c| *c == 0.0) {
            continue;
        }
        if !filter.keeps(nums.get(7).map(|c| *c as i64)) {
            continue;
        }
        if let Some(first) = first_line.insert((frame, id), line) {
            return Err(IngestError::Duplicate { path: path.to_path_buf(), frame, id, first, second: line });
        }
        let bbox = match normalize_bbox((nums[2], nums[3], nums[4], nums[5]), image_size) {
            Ok(b) => b,
            Err(GeometryError::OutOfFrame) => {
                log::warn!("{}:{line}: box outside the image, skipped", path.display());
                continue;
            }
            Err(e) => return Err(bad(line, e.to_string())),
        };
        rows.push((line, frame - 1, id, bbox));
    }
    let frames = frame_count.unwrap_or_else(|| rows.iter().map(|r| r.1 + 1).max().unwrap_or(0));
    let mut ts = TrackSet::new(sequence_id, frames, image_size);
    for (line, frame, id, bbox) in rows {
        ts.insert(id, frame, bbox).map_err(|e| bad(line, e.to_string()))?;
    }
    Ok(ts)
}

fn mot_rows(ts: &TrackSet, tail: &str) -> String {
    let mut out = String::new();
    for d in ts.detections() {
        let (l, t, w, h) = d.bbox.to_pixels(ts.image_size());
        let id = d.track_id.expect("track sets carry ids");
        out.push_str(&format!("{},{},{:.2},{:.2},{:.2},{:.2},{tail}\n", d.frame_index + 1, id, l, t, w, h));
    }
    out
}

/// Writes predictions as MOTChallenge results (`conf = 1`, unused columns `-1`).
/// Rows are ordered by frame then id; an empty set gives an empty file.
pub fn write_results(ts: &TrackSet, path: &Path) -> Result<(), IngestError> {
    write(path, &mot_rows(ts, "1,-1,-1,-1"))
}

/// Writes ground truth with class 1 and full visibility.
pub fn write_mot_gt(ts: &TrackSet, path: &Path) -> Result<(), IngestError> {
    write(path, &mot_rows(ts, "1,1,1.0"))
}

pub fn write_report(report: &MetricReport, path: &Path) -> Result<(), IngestError> {
    write(path, &report.to_json())
}

pub fn write_report_csv(report: &MetricReport, path: &Path) -> Result<(), IngestError> {
    write(path, &report.to_csv())
}

/// Contents of `seqinfo.ini`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqInfo {
    pub name: String,
    pub im_dir: String,
    pub im_ext: String,
    pub frame_rate: Option<f64>,
    pub seq_length: u32,
    pub image_size: ImageSize,
}

pub fn load_seqinfo(path: &Path) -> Result<SeqInfo, IngestError> {
    let text = read(path)?;
    let mut kv: HashMap<String, String> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with(['[', ';', '#']) {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| IngestError::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            reason: "expected key=value".into(),
        })?;
        kv.insert(k.trim().to_ascii_lowercase(), v.trim().to_string());
    }
    let invalid = |reason: String| IngestError::Invalid { path: path.to_path_buf(), reason };
    let num = |key: &str| -> Result<u32, IngestError> {
        kv.get(&key.to_ascii_lowercase())
            .ok_or_else(|| invalid(format!("missing {key}")))?
            .parse()
            .map_err(|_| invalid(format!("{key} is not a positive integer")))
    };
    let image_size = ImageSize::new(num("imWidth")?, num("imHeight")?).map_err(|e| invalid(e.to_string()))?;
    let dir_name = path.parent().and_then(Path::file_name).and_then(|n| n.to_str()).unwrap_or_default();
    Ok(SeqInfo {
        name: kv.get("name").cloned().unwrap_or_else(|| dir_name.to_string()),
        im_dir: kv.get("imdir").cloned().unwrap_or_else(|| "img1".into()),
        im_ext: kv.get("imext").cloned().unwrap_or_else(|| ".jpg".into()),
        frame_rate: kv.get("framerate").and_then(|v| v.parse().ok()),
        seq_length: num("seqLength")?,
        image_size,
    })
}

pub fn write_seqinfo(info: &SeqInfo, path: &Path) -> Result<(), IngestError> {
    let mut s = format!("[Sequence]\nname={}\nimDir={}\n", info.name, info.im_dir);
    if let Some(r) = info.frame_rate {
        s.push_str(&format!("frameRate={r}\n"));
    }
    s.push_str(&format!(
        "seqLength={}\nimWidth={}\nimHeight={}\nimExt={}\n",
        info.seq_length, info.image_size.width, info.image_size.height, info.im_ext
    ));
    write(path, &s)
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, IngestError> {
    serde_json::from_str(&read(path)?).map_err(|e| IngestError::Invalid { path: path.to_path_buf(), reason: e.to_string() })
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<(), IngestError> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    write(path, &s)
}

/// Reads referring expressions, checking targets against `gt` when given.
pub fn load_expressions(path: &Path, gt: Option<&TrackSet>) -> Result<Vec<ReferringExpression>, IngestError> {
    let exprs: Vec<ReferringExpression> = load_json(path)?;
    if let Some(gt) = gt {
        for e in &exprs {
            if let Some(id) = e.targets.iter().find(|id| !gt.contains_track(**id)) {
                return Err(IngestError::Invalid {
                    path: path.to_path_buf(),
                    reason: format!("expression {} targets unknown track {id}", e.id),
                });
            }
        }
    }
    Ok(exprs)
}

pub fn load_captions(path: &Path) -> Result<CaptionGroundTruth, IngestError> {
    load_json(path)
}

/// File locations of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceFiles {
    pub name: String,
    pub dir: PathBuf,
    pub info: SeqInfo,
    pub gt: PathBuf,
    pub expressions: Option<PathBuf>,
    pub captions: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetLayout {
    pub root: PathBuf,
    /// Sorted by name.
    pub sequences: Vec<SequenceFiles>,
    /// View group name to member sequences, from `views.json`.
    pub view_groups: BTreeMap<String, Vec<String>>,
}

impl DatasetLayout {
    /// Finds every subdirectory of `root` holding a `seqinfo.ini`.
    pub fn discover(root: &Path) -> Result<Self, IngestError> {
        if !root.is_dir() {
            return Err(IngestError::MissingFile(root.to_path_buf()));
        }
        let mut sequences = Vec::new();
        for entry in fs::read_dir(root).map_err(io_err(root))? {
            let dir = entry.map_err(io_err(root))?.path();
            let info_path = dir.join("seqinfo.ini");
            if !info_path.is_file() {
                continue;
            }
            let gt = dir.join("gt").join("gt.txt");
            if !gt.is_file() {
                return Err(IngestError::MissingFile(gt));
            }
            let optional = |name: &str| Some(dir.join(name)).filter(|p| p.is_file());
            sequences.push(SequenceFiles {
                name: dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string(),
                info: load_seqinfo(&info_path)?,
                gt,
                expressions: optional("expressions.json"),
                captions: optional("captions.json"),
                dir,
            });
        }
        if sequences.is_empty() {
            return Err(IngestError::Invalid { path: root.to_path_buf(), reason: "no sequence directories with seqinfo.ini".into() });
        }
        sequences.sort_by(|a, b| a.name.cmp(&b.name));
        let views_path = root.join("views.json");
        let view_groups: BTreeMap<String, Vec<String>> =
            if views_path.is_file() { load_json(&views_path)? } else { BTreeMap::new() };
        for (group, members) in &view_groups {
            if let Some(m) = members.iter().find(|m| !sequences.iter().any(|s| &s.name == *m)) {
                return Err(IngestError::Invalid {
                    path: views_path.clone(),
                    reason: format!("group {group} names unknown sequence {m}"),
                });
            }
        }
        Ok(Self { root: root.to_path_buf(), sequences, view_groups })
    }

    pub fn find(&self, name: &str) -> Option<&SequenceFiles> {
        self.sequences.iter().find(|s| s.name == name)
    }

    pub fn load_sequence(&self, files: &SequenceFiles, filter: &ClassFilter) -> Result<Sequence, IngestError> {
        let info = &files.info;
        let gt = load_mot_gt(&files.gt, &files.name, info.image_size, Some(info.seq_length), filter)?;
        let mut meta = SequenceMeta::new(&files.name);
        if self.view_groups.values().any(|m| m.contains(&files.name)) {
            meta.view_id = Some(files.name.clone());
        }
        if let Some(p) = &files.expressions {
            meta.expressions = load_expressions(p, Some(&gt))?;
        }
        if let Some(p) = &files.captions {
            meta.captions = Some(load_captions(p)?);
        }
        meta.validate(&gt).map_err(|e| IngestError::Invalid { path: files.dir.clone(), reason: e.to_string() })?;
        let images = image_refs(&files.name, &info.im_dir, &info.im_ext, info.seq_length);
        Ok(Sequence { gt, meta, images })
    }

    pub fn load_all(&self, filter: &ClassFilter) -> Result<Vec<Sequence>, IngestError> {
        self.sequences.iter().map(|s| self.load_sequence(s, filter)).collect()
    }
}

/// Writes a sequence in the layout [`DatasetLayout::discover`] reads.
pub fn write_sequence(root: &Path, seq: &Sequence) -> Result<(), IngestError> {
    let dir = root.join(seq.id());
    let info = SeqInfo {
        name: seq.id().to_string(),
        im_dir: "img1".into(),
        im_ext: ".jpg".into(),
        frame_rate: Some(30.0),
        seq_length: seq.gt.frame_count(),
        image_size: seq.gt.image_size(),
    };
    write_seqinfo(&info, &dir.join("seqinfo.ini"))?;
    write_mot_gt(&seq.gt, &dir.join("gt").join("gt.txt"))?;
    if !seq.meta.expressions.is_empty() {
        write_json(&seq.meta.expressions, &dir.join("expressions.json"))?;
    }
    if let Some(c) = &seq.meta.captions {
        write_json(c, &dir.join("captions.json"))?;
    }
    Ok(())
}

pub fn write_view_groups(root: &Path, groups: &BTreeMap<String, Vec<String>>) -> Result<(), IngestError> {
    write_json(groups, &root.join("views.json"))
}
