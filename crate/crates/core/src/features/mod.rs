//! Content descriptors of detection windows: canonical patch cropping plus
//! HOG, co-occurrence, raw-gray, and externally computed feature vectors.

pub mod glcm;
pub mod hog;
pub mod image;

pub use self::glcm::{cooccurrence_matrix, glcm, GLCM_DIMS};
pub use self::hog::{hog, BINS, HOG_DIMS};
pub use self::image::{
    load_image, read_pgm, write_pgm, write_pgm_file, GrayImage, ImageDir, ImageError, ImageSource,
};

use crate::geometry::BoundingBox;
use std::collections::HashMap;
use std::fmt;
use std::io::{self, BufRead};
use std::str::FromStr;
use thiserror::Error;

/// Canonical patch width in pixels.
pub const PATCH_WIDTH: usize = 64;
/// Canonical patch height in pixels.
pub const PATCH_HEIGHT: usize = 128;
/// Length of the raw-gray descriptor: 16 x 32 block means.
pub const GRAY_DIMS: usize = (PATCH_WIDTH / 4) * (PATCH_HEIGHT / 4);

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("window (x={x}, y={y}, w={w}, h={h}) lies entirely outside the {img_w}x{img_h} image")]
    PatchOutOfBounds { x: f64, y: f64, w: f64, h: f64, img_w: usize, img_h: usize },
    #[error("invalid patch: {0}")]
    InvalidPatch(String),
    #[error("invalid feature vector: {0}")]
    InvalidVector(String),
    #[error("feature file format error at line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("no precomputed feature for frame '{frame_id}' window (x={x}, y={y}, w={w}, h={h})")]
    MissingFeature { frame_id: String, x: f64, y: f64, w: f64, h: f64 },
    #[error("descriptor '{0}' is computed from pixels and needs a frame image")]
    NeedsImage(DescriptorTag),
}

/// Grayscale patch of fixed 64x128 geometry (row-major, intensities in
/// `[0, 1]`) — the canonical domain of all computed descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPatch {
    pixels: Vec<f64>,
}

impl WindowPatch {
    pub fn new(pixels: Vec<f64>) -> Result<Self, FeatureError> {
        if pixels.len() != PATCH_WIDTH * PATCH_HEIGHT {
            return Err(FeatureError::InvalidPatch(format!(
                "expected {} pixels, got {}",
                PATCH_WIDTH * PATCH_HEIGHT,
                pixels.len()
            )));
        }
        if !pixels.iter().all(|p| p.is_finite() && (0.0..=1.0).contains(p)) {
            return Err(FeatureError::InvalidPatch(
                "intensities must be finite and in [0, 1]".into(),
            ));
        }
        Ok(WindowPatch { pixels })
    }

    /// Builds a patch from a generator, clamping values into `[0, 1]`.
    pub fn from_fn(mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut pixels = Vec::with_capacity(PATCH_WIDTH * PATCH_HEIGHT);
        for y in 0..PATCH_HEIGHT {
            for x in 0..PATCH_WIDTH {
                pixels.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        WindowPatch { pixels }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        assert!(x < PATCH_WIDTH && y < PATCH_HEIGHT, "pixel ({x}, {y}) out of bounds");
        self.pixels[y * PATCH_WIDTH + x]
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }
}

/// Which descriptor family a feature vector belongs to. Fixes the vector
/// length for the computed families; `external` carries any length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DescriptorTag {
    Hog,
    Glcm,
    Gray,
    HogGlcm,
    External,
}

impl DescriptorTag {
    /// Fixed vector length of the tag, or `None` for `external`.
    pub fn dims(self) -> Option<usize> {
        match self {
            DescriptorTag::Hog => Some(HOG_DIMS),
            DescriptorTag::Glcm => Some(GLCM_DIMS),
            DescriptorTag::Gray => Some(GRAY_DIMS),
            DescriptorTag::HogGlcm => Some(HOG_DIMS + GLCM_DIMS),
            DescriptorTag::External => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DescriptorTag::Hog => "hog",
            DescriptorTag::Glcm => "glcm",
            DescriptorTag::Gray => "gray",
            DescriptorTag::HogGlcm => "hog+glcm",
            DescriptorTag::External => "external",
        }
    }
}

impl fmt::Display for DescriptorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DescriptorTag {
    type Err = FeatureError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hog" => Ok(DescriptorTag::Hog),
            "glcm" => Ok(DescriptorTag::Glcm),
            "gray" => Ok(DescriptorTag::Gray),
            "hog+glcm" => Ok(DescriptorTag::HogGlcm),
            "external" => Ok(DescriptorTag::External),
            other => Err(FeatureError::InvalidVector(format!(
                "unknown descriptor tag '{other}' (expected hog, glcm, gray, hog+glcm, or external)"
            ))),
        }
    }
}

/// A flat, finite feature vector tagged with its descriptor family.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    values: Vec<f64>,
    tag: DescriptorTag,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, tag: DescriptorTag) -> Result<Self, FeatureError> {
        if let Some(dims) = tag.dims() {
            if values.len() != dims {
                return Err(FeatureError::InvalidVector(format!(
                    "descriptor '{tag}' has {dims} entries, got {}",
                    values.len()
                )));
            }
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(FeatureError::InvalidVector("entries must be finite".into()));
        }
        Ok(FeatureVector { values, tag })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// L2-normalized copy; the zero vector passes through unchanged.
    pub fn normalized(&self) -> FeatureVector {
        let norm = self.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            FeatureVector {
                values: self.values.iter().map(|v| v / norm).collect(),
                tag: self.tag,
            }
        } else {
            self.clone()
        }
    }

    pub fn tag(&self) -> DescriptorTag {
        self.tag
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Crops `bbox` from the image and bilinearly resamples it to 64x128.
/// Regions of the box outside the image replicate the nearest edge pixel;
/// a box entirely outside the image is an error.
pub fn extract_patch(image: &GrayImage, bbox: &BoundingBox) -> Result<WindowPatch, FeatureError> {
    let (img_w, img_h) = (image.width(), image.height());
    let outside = bbox.x() >= img_w as f64
        || bbox.y() >= img_h as f64
        || bbox.right() <= 0.0
        || bbox.bottom() <= 0.0;
    if outside {
        return Err(FeatureError::PatchOutOfBounds {
            x: bbox.x(),
            y: bbox.y(),
            w: bbox.w(),
            h: bbox.h(),
            img_w,
            img_h,
        });
    }
    let sx = bbox.w() / PATCH_WIDTH as f64;
    let sy = bbox.h() / PATCH_HEIGHT as f64;
    let mut pixels = Vec::with_capacity(PATCH_WIDTH * PATCH_HEIGHT);
    for j in 0..PATCH_HEIGHT {
        // Map output pixel centers into source coordinates.
        let y = bbox.y() + (j as f64 + 0.5) * sy - 0.5;
        for i in 0..PATCH_WIDTH {
            let x = bbox.x() + (i as f64 + 0.5) * sx - 0.5;
            pixels.push(image.sample_clamped(x, y).clamp(0.0, 1.0));
        }
    }
    Ok(WindowPatch { pixels })
}

/// Raw-gray descriptor: the patch downsampled to 16x32 by 4x4 block
/// averaging, flattened row-major.
pub fn gray(patch: &WindowPatch) -> FeatureVector {
    let out_w = PATCH_WIDTH / 4; // 16
    let out_h = PATCH_HEIGHT / 4; // 32
    let mut values = Vec::with_capacity(out_w * out_h);
    for by in 0..out_h {
        for bx in 0..out_w {
            let mut sum = 0.0;
            for dy in 0..4 {
                for dx in 0..4 {
                    sum += patch.get(bx * 4 + dx, by * 4 + dy);
                }
            }
            values.push(sum / 16.0);
        }
    }
    FeatureVector::new(values, DescriptorTag::Gray)
        .expect("block means of [0, 1] intensities are finite")
}

/// Concatenates two feature vectors: the values of `a` followed by those of
/// `b`. The result is tagged `hog+glcm` when the inputs are tagged `hog` and
/// `glcm` in that order, `external` otherwise.
pub fn concat(a: &FeatureVector, b: &FeatureVector) -> FeatureVector {
    let tag = match (a.tag(), b.tag()) {
        (DescriptorTag::Hog, DescriptorTag::Glcm) => DescriptorTag::HogGlcm,
        _ => DescriptorTag::External,
    };
    let values = a.values().iter().chain(b.values()).copied().collect();
    FeatureVector::new(values, tag).expect("concatenation of finite vectors is finite")
}

/// Windows are keyed by frame id and the exact bit pattern of their box.
type PrecomputedKey = (String, [u64; 4]);

fn precomputed_key(frame_id: &str, bbox: &BoundingBox) -> PrecomputedKey {
    (
        frame_id.to_string(),
        [bbox.x().to_bits(), bbox.y().to_bits(), bbox.w().to_bits(), bbox.h().to_bits()],
    )
}

/// Lookup table of externally computed feature vectors (e.g. deep features),
/// keyed by exact frame and window.
#[derive(Debug, Clone, Default)]
pub struct PrecomputedFeatures {
    dims: usize,
    map: HashMap<PrecomputedKey, Vec<f64>>,
}

impl PrecomputedFeatures {
    /// Vector length shared by all entries; `None` while empty.
    pub fn dims(&self) -> Option<usize> {
        if self.map.is_empty() {
            None
        } else {
            Some(self.dims)
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get(&self, frame_id: &str, bbox: &BoundingBox) -> Option<FeatureVector> {
        self.map.get(&precomputed_key(frame_id, bbox)).map(|values| {
            FeatureVector::new(values.clone(), DescriptorTag::External)
                .expect("stored vectors were validated on load")
        })
    }
}

/// Parses `frame_id x y w h v1 v2 ... vD` lines (constant `D >= 1`) into a
/// [`PrecomputedFeatures`] table. Blank lines and `#` comments are skipped;
/// duplicate `(frame, box)` keys and inconsistent dimensionality are errors.
pub fn load_precomputed<R: BufRead>(reader: R) -> Result<PrecomputedFeatures, FeatureError> {
    let mut table = PrecomputedFeatures::default();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() < 6 {
            return Err(FeatureError::Format {
                line: lineno,
                message: format!(
                    "expected at least 6 fields (frame_id x y w h v1 ...), got {}",
                    fields.len()
                ),
            });
        }
        let parse = |name: &str, raw: &str| -> Result<f64, FeatureError> {
            raw.parse::<f64>().map_err(|_| FeatureError::Format {
                line: lineno,
                message: format!("cannot parse {name} from '{raw}'"),
            })
        };
        let x = parse("x", fields[1])?;
        let y = parse("y", fields[2])?;
        let w = parse("w", fields[3])?;
        let h = parse("h", fields[4])?;
        let bbox = BoundingBox::new(x, y, w, h)
            .map_err(|e| FeatureError::Format { line: lineno, message: e.to_string() })?;
        let mut values = Vec::with_capacity(fields.len() - 5);
        for raw in &fields[5..] {
            let v = parse("feature value", raw)?;
            if !v.is_finite() {
                return Err(FeatureError::Format {
                    line: lineno,
                    message: format!("feature value {v} is not finite"),
                });
            }
            values.push(v);
        }
        if table.map.is_empty() {
            table.dims = values.len();
        } else if values.len() != table.dims {
            return Err(FeatureError::Format {
                line: lineno,
                message: format!(
                    "inconsistent dimensionality: expected {} values, got {}",
                    table.dims,
                    values.len()
                ),
            });
        }
        let key = precomputed_key(fields[0], &bbox);
        if table.map.insert(key, values).is_some() {
            return Err(FeatureError::Format {
                line: lineno,
                message: format!(
                    "duplicate entry for frame '{}' window (x={x}, y={y}, w={w}, h={h})",
                    fields[0]
                ),
            });
        }
    }
    Ok(table)
}

/// A configured descriptor: either one of the computed families (HOG,
/// co-occurrence, gray, HOG+co-occurrence) applied to the frame image, or a
/// table of precomputed vectors.
#[derive(Debug, Clone)]
pub enum FeatureExtractor {
    Hog,
    Glcm,
    Gray,
    HogGlcm,
    Precomputed(PrecomputedFeatures),
}

impl FeatureExtractor {
    /// Extractor for a computed descriptor tag; `external` has no intrinsic
    /// extractor (it needs a feature table).
    pub fn from_tag(tag: DescriptorTag) -> Option<FeatureExtractor> {
        match tag {
            DescriptorTag::Hog => Some(FeatureExtractor::Hog),
            DescriptorTag::Glcm => Some(FeatureExtractor::Glcm),
            DescriptorTag::Gray => Some(FeatureExtractor::Gray),
            DescriptorTag::HogGlcm => Some(FeatureExtractor::HogGlcm),
            DescriptorTag::External => None,
        }
    }

    pub fn tag(&self) -> DescriptorTag {
        match self {
            FeatureExtractor::Hog => DescriptorTag::Hog,
            FeatureExtractor::Glcm => DescriptorTag::Glcm,
            FeatureExtractor::Gray => DescriptorTag::Gray,
            FeatureExtractor::HogGlcm => DescriptorTag::HogGlcm,
            FeatureExtractor::Precomputed(_) => DescriptorTag::External,
        }
    }

    /// Whether extraction reads frame pixels (false for precomputed tables).
    pub fn needs_images(&self) -> bool {
        !matches!(self, FeatureExtractor::Precomputed(_))
    }

    pub fn dims(&self) -> Option<usize> {
        match self {
            FeatureExtractor::Precomputed(table) => table.dims(),
            other => other.tag().dims(),
        }
    }

    /// Extracts the descriptor of one window. Computed descriptors require
    /// the frame image; the precomputed table ignores it.
    pub fn extract(
        &self,
        image: Option<&GrayImage>,
        frame_id: &str,
        bbox: &BoundingBox,
    ) -> Result<FeatureVector, FeatureError> {
        if let FeatureExtractor::Precomputed(table) = self {
            return table.get(frame_id, bbox).ok_or_else(|| FeatureError::MissingFeature {
                frame_id: frame_id.to_string(),
                x: bbox.x(),
                y: bbox.y(),
                w: bbox.w(),
                h: bbox.h(),
            });
        }
        let image = image.ok_or_else(|| FeatureError::NeedsImage(self.tag()))?;
        let patch = extract_patch(image, bbox)?;
        Ok(match self {
            FeatureExtractor::Hog => hog(&patch),
            FeatureExtractor::Glcm => glcm(&patch),
            FeatureExtractor::Gray => gray(&patch),
            FeatureExtractor::HogGlcm => concat(&hog(&patch), &glcm(&patch)),
            FeatureExtractor::Precomputed(_) => unreachable!("handled above"),
        })
    }
}
