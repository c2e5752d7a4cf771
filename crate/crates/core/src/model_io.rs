//! Detection / ground-truth data model and the line-oriented text formats in
//! which detector outputs, annotations, and fused results are exchanged.
//!
//! Both formats are whitespace-delimited, one record per line, with `#`
//! starting a comment line:
//!
//! ```text
//! frame_id x y w h score        # detections
//! frame_id x y w h ignore_flag  # ground truth, ignore_flag in {0, 1}
//! ```

use crate::geometry::BoundingBox;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid detection: {0}")]
    InvalidDetection(String),
    #[error("detector id mismatch: set belongs to '{expected}' but detection carries '{found}'")]
    DetectorIdMismatch { expected: String, found: String },
    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: Box<ModelIoError>,
    },
}

impl ModelIoError {
    fn parse(line: usize, message: impl Into<String>) -> Self {
        ModelIoError::Parse { line, message: message.into() }
    }

    fn at_path(self, path: &Path) -> Self {
        ModelIoError::File { path: path.to_path_buf(), source: Box::new(self) }
    }
}

/// Identifiers (frame and detector ids) are opaque strings, but they must
/// survive the whitespace-delimited text format: non-empty, no whitespace,
/// and not starting with the `#` comment marker.
fn validate_id(kind: &str, id: &str) -> Result<(), ModelIoError> {
    if id.is_empty() {
        return Err(ModelIoError::InvalidDetection(format!("{kind} must be non-empty")));
    }
    if id.chars().any(char::is_whitespace) {
        return Err(ModelIoError::InvalidDetection(format!(
            "{kind} '{id}' must not contain whitespace"
        )));
    }
    if id.starts_with('#') {
        return Err(ModelIoError::InvalidDetection(format!(
            "{kind} '{id}' must not start with '#'"
        )));
    }
    Ok(())
}

/// One detector window: where it is, how confident the detector was, and
/// which detector produced it. Scores live on an arbitrary per-detector
/// scale; they are only required to be finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    frame_id: String,
    bbox: BoundingBox,
    score: f64,
    detector_id: String,
}

impl Detection {
    pub fn new(
        frame_id: impl Into<String>,
        bbox: BoundingBox,
        score: f64,
        detector_id: impl Into<String>,
    ) -> Result<Self, ModelIoError> {
        let frame_id = frame_id.into();
        let detector_id = detector_id.into();
        validate_id("frame id", &frame_id)?;
        validate_id("detector id", &detector_id)?;
        if !score.is_finite() {
            return Err(ModelIoError::InvalidDetection(format!("score {score} is not finite")));
        }
        Ok(Detection { frame_id, bbox, score, detector_id })
    }

    /// Same window, new (finite) score — used when fusion rescores a window.
    pub fn with_score(&self, score: f64) -> Result<Self, ModelIoError> {
        if !score.is_finite() {
            return Err(ModelIoError::InvalidDetection(format!("score {score} is not finite")));
        }
        Ok(Detection { score, ..self.clone() })
    }

    pub fn frame_id(&self) -> &str {
        &self.frame_id
    }

    pub fn bbox(&self) -> &BoundingBox {
        &self.bbox
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn detector_id(&self) -> &str {
        &self.detector_id
    }
}

/// One annotated box. `ignore` marks regions that are neither required to be
/// found nor penalized when hit (benchmark-style don't-care regions).
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthBox {
    pub frame_id: String,
    pub bbox: BoundingBox,
    pub ignore: bool,
}

impl GroundTruthBox {
    pub fn new(frame_id: impl Into<String>, bbox: BoundingBox, ignore: bool) -> Self {
        GroundTruthBox { frame_id: frame_id.into(), bbox, ignore }
    }
}

/// All detections of one detector, grouped by frame. Frames iterate in
/// lexicographic order; within a frame the original insertion order is kept.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSet {
    detector_id: String,
    frames: BTreeMap<String, Vec<Detection>>,
    len: usize,
}

impl DetectionSet {
    pub fn new(detector_id: impl Into<String>) -> Result<Self, ModelIoError> {
        let detector_id = detector_id.into();
        validate_id("detector id", &detector_id)?;
        Ok(DetectionSet { detector_id, frames: BTreeMap::new(), len: 0 })
    }

    pub fn detector_id(&self) -> &str {
        &self.detector_id
    }

    pub fn push(&mut self, det: Detection) -> Result<(), ModelIoError> {
        if det.detector_id() != self.detector_id {
            return Err(ModelIoError::DetectorIdMismatch {
                expected: self.detector_id.clone(),
                found: det.detector_id().to_string(),
            });
        }
        self.frames.entry(det.frame_id.clone()).or_default().push(det);
        self.len += 1;
        Ok(())
    }

    /// Frame ids in lexicographic order.
    pub fn frame_ids(&self) -> impl Iterator<Item = &str> {
        self.frames.keys().map(String::as_str)
    }

    /// Detections of one frame in insertion order; empty if the frame is
    /// unknown.
    pub fn frame(&self, frame_id: &str) -> &[Detection] {
        self.frames.get(frame_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn frames(&self) -> impl Iterator<Item = (&str, &[Detection])> {
        self.frames.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// All detections in canonical order: frames lexicographic, insertion
    /// order within each frame.
    pub fn iter(&self) -> impl Iterator<Item = &Detection> {
        self.frames.values().flatten()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Formats `v` with `sig` significant digits, trailing zeros trimmed.
/// Values too large for `sig` digits before the decimal point keep their
/// integral digits intact.
fn fmt_sig(v: f64, sig: i32) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let mag = v.abs().log10().floor() as i32;
    let decimals = (sig - 1 - mag).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Detection scores are written with nine significant digits.
fn fmt_score(v: f64) -> String {
    fmt_sig(v, 9)
}

/// Coordinates are written with shortest-round-trip formatting, so they
/// parse back to exactly the same value.
fn fmt_coord(v: f64) -> String {
    format!("{v}")
}

fn parse_field(line: usize, name: &str, raw: &str) -> Result<f64, ModelIoError> {
    raw.parse::<f64>()
        .map_err(|_| ModelIoError::parse(line, format!("cannot parse {name} from '{raw}'")))
}

fn parse_box_fields(line: usize, fields: &[&str]) -> Result<BoundingBox, ModelIoError> {
    let x = parse_field(line, "x", fields[0])?;
    let y = parse_field(line, "y", fields[1])?;
    let w = parse_field(line, "w", fields[2])?;
    let h = parse_field(line, "h", fields[3])?;
    BoundingBox::new(x, y, w, h).map_err(|e| ModelIoError::parse(line, e.to_string()))
}

/// Parses `frame_id x y w h score` lines into a [`DetectionSet`] owned by
/// `detector_id`. Blank lines and lines starting with `#` are skipped; line
/// numbers in errors count every line of the stream.
pub fn read_detections<R: BufRead>(
    reader: R,
    detector_id: &str,
) -> Result<DetectionSet, ModelIoError> {
    let mut set = DetectionSet::new(detector_id)?;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(ModelIoError::parse(
                lineno,
                format!("expected 6 fields (frame_id x y w h score), got {}", fields.len()),
            ));
        }
        let bbox = parse_box_fields(lineno, &fields[1..5])?;
        let score = parse_field(lineno, "score", fields[5])?;
        let det = Detection::new(fields[0], bbox, score, detector_id)
            .map_err(|e| ModelIoError::parse(lineno, e.to_string()))?;
        set.push(det)?;
    }
    Ok(set)
}

/// Parses `frame_id x y w h ignore_flag` lines, `ignore_flag` literally `0`
/// or `1`. Boxes are returned in file order.
pub fn read_ground_truth<R: BufRead>(reader: R) -> Result<Vec<GroundTruthBox>, ModelIoError> {
    let mut boxes = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(ModelIoError::parse(
                lineno,
                format!("expected 6 fields (frame_id x y w h ignore_flag), got {}", fields.len()),
            ));
        }
        let bbox = parse_box_fields(lineno, &fields[1..5])?;
        let ignore = match fields[5] {
            "0" => false,
            "1" => true,
            other => {
                return Err(ModelIoError::parse(
                    lineno,
                    format!("ignore_flag must be 0 or 1, got '{other}'"),
                ))
            }
        };
        validate_id("frame id", fields[0]).map_err(|e| ModelIoError::parse(lineno, e.to_string()))?;
        boxes.push(GroundTruthBox::new(fields[0], bbox, ignore));
    }
    Ok(boxes)
}

/// Writes a detection set in canonical order (frames lexicographic, insertion
/// order within a frame). Scores carry nine significant digits, so reading
/// the output back reproduces the set up to that precision; coordinates
/// round-trip exactly.
pub fn write_detections<W: Write>(set: &DetectionSet, sink: &mut W) -> io::Result<()> {
    writeln!(sink, "# frame_id x y w h score")?;
    for (frame, dets) in set.frames() {
        for d in dets {
            let b = d.bbox();
            writeln!(
                sink,
                "{} {} {} {} {} {}",
                frame,
                fmt_coord(b.x()),
                fmt_coord(b.y()),
                fmt_coord(b.w()),
                fmt_coord(b.h()),
                fmt_score(d.score()),
            )?;
        }
    }
    Ok(())
}

/// Writes ground-truth boxes in slice order.
pub fn write_ground_truth<W: Write>(boxes: &[GroundTruthBox], sink: &mut W) -> io::Result<()> {
    writeln!(sink, "# frame_id x y w h ignore")?;
    for g in boxes {
        let b = &g.bbox;
        writeln!(
            sink,
            "{} {} {} {} {} {}",
            g.frame_id,
            fmt_coord(b.x()),
            fmt_coord(b.y()),
            fmt_coord(b.w()),
            fmt_coord(b.h()),
            u8::from(g.ignore),
        )?;
    }
    Ok(())
}

pub fn read_detections_file(
    path: impl AsRef<Path>,
    detector_id: &str,
) -> Result<DetectionSet, ModelIoError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| ModelIoError::from(e).at_path(path))?;
    read_detections(BufReader::new(file), detector_id).map_err(|e| e.at_path(path))
}

pub fn read_ground_truth_file(path: impl AsRef<Path>) -> Result<Vec<GroundTruthBox>, ModelIoError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| ModelIoError::from(e).at_path(path))?;
    read_ground_truth(BufReader::new(file)).map_err(|e| e.at_path(path))
}

pub fn write_detections_file(
    set: &DetectionSet,
    path: impl AsRef<Path>,
) -> Result<(), ModelIoError> {
    let path = path.as_ref();
    let wrap = |e: io::Error| ModelIoError::from(e).at_path(path);
    let mut out = BufWriter::new(File::create(path).map_err(wrap)?);
    write_detections(set, &mut out).map_err(wrap)?;
    out.flush().map_err(wrap)
}

pub fn write_ground_truth_file(
    boxes: &[GroundTruthBox],
    path: impl AsRef<Path>,
) -> Result<(), ModelIoError> {
    let path = path.as_ref();
    let wrap = |e: io::Error| ModelIoError::from(e).at_path(path);
    let mut out = BufWriter::new(File::create(path).map_err(wrap)?);
    write_ground_truth(boxes, &mut out).map_err(wrap)?;
    out.flush().map_err(wrap)
}
