//! Experiment configuration bundles.
//!
//! A bundle is a TOML file with one section per subcommand; any value a
//! command-line flag can set may instead come from the bundle, and explicit
//! flags always win. This keeps a full experiment reproducible from a single
//! checked-in manifest:
//!
//! ```toml
//! [synth]
//! seed = 7
//! frames = 100
//!
//! [synth.scene]
//! pedestrians = 3
//!
//! [[synth.detector]]
//! detector_id = "det_a"
//! tp_rate = 0.9
//! score_tp = [0.8, 0.1]
//! score_fp = [0.5, 0.1]
//! rng_seed = 1
//!
//! [fuse]
//! mode = "csbc"
//! overlap = 0.5
//! ```
//!
//! Unknown keys anywhere in the bundle are rejected, so typos fail loudly
//! instead of silently falling back to defaults.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::synth::{DetectorProfile, SceneConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config bundle {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config bundle {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

/// Defaults for every subcommand, deserialized from one TOML file. All
/// fields are optional; a command resolves each setting as flag, then
/// bundle, then built-in default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigBundle {
    pub train: TrainSection,
    pub calib: CalibSection,
    pub fuse: FuseSection,
    pub eval: EvalSection,
    pub synth: SynthSection,
    pub plot: PlotSection,
}

impl ConfigBundle {
    pub fn from_toml_str(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&text)
            .map_err(|message| ConfigError::Parse { path: path.to_path_buf(), message })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub detections: Vec<PathBuf>,
    pub gt: Option<PathBuf>,
    pub images: Option<PathBuf>,
    /// Descriptor name: `hog`, `glcm`, `gray`, `hog+glcm`, or
    /// `external:<table-file>`.
    pub feature: Option<String>,
    pub components: Option<usize>,
    pub out: Option<PathBuf>,
    pub max_windows: Option<usize>,
    pub normalize_features: Option<bool>,
    pub pls_scale: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibSection {
    pub root: Option<PathBuf>,
    pub support: Vec<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FuseSection {
    pub root: Option<PathBuf>,
    pub support: Vec<PathBuf>,
    pub models: Option<PathBuf>,
    pub calib: Option<PathBuf>,
    pub images: Option<PathBuf>,
    /// Feature table for content models stamped `external`.
    pub feature: Option<String>,
    pub mode: Option<String>,
    pub overlap: Option<f64>,
    /// Weight clamp as `[lo, hi]`.
    pub clamp: Option<(f64, f64)>,
    pub support_policy: Option<String>,
    pub multiply_jaccard: Option<bool>,
    /// Overlap threshold for optional post-fusion non-maximum suppression.
    pub nms: Option<f64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub detections: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub iou: Option<f64>,
    pub out: Option<PathBuf>,
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub seed: Option<u64>,
    pub frames: Option<usize>,
    pub out: Option<PathBuf>,
    pub scene: SceneConfig,
    /// One simulated detector per entry (`[[synth.detector]]`).
    pub detector: Vec<DetectorProfile>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlotSection {
    /// Curve CSVs as `name=path` entries.
    pub curve: Vec<String>,
    pub out: Option<PathBuf>,
}
