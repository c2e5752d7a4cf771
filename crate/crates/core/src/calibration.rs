//! Score calibration across detectors.
//!
//! Different detectors emit scores on incompatible scales (margins, logits,
//! probabilities…), so their raw values cannot be summed meaningfully. A
//! [`CalibrationMap`] is an affine map `slope * score + intercept` fitted so
//! that the 5th and 95th percentiles of a source detector's scores land on
//! the 5th and 95th percentiles of a reference detector's scores. Percentile
//! anchoring makes the fit robust to a handful of extreme scores, and the
//! strictly positive slope guarantees the map never reorders a detector's
//! own windows. Scores outside the fitted range extrapolate linearly; no
//! clamping is applied.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CalibrationError {
    /// The score sample cannot pin down an affine map.
    #[error("degenerate {which} score distribution: need at least 2 distinct values")]
    Degenerate { which: &'static str },
    /// The 5th and 95th percentiles coincide even though the sample is not
    /// constant (e.g. one outlier among hundreds of identical scores), so the
    /// slope is undefined.
    #[error("zero percentile span in {which} scores: 5th and 95th percentiles coincide")]
    ZeroSpan { which: &'static str },
    #[error("scores must be finite")]
    NonFinite,
    #[error("invalid calibration map for {detector:?}: {message}")]
    InvalidMap { detector: String, message: String },
    #[error("duplicate calibration entry for detector {0:?}")]
    DuplicateDetector(String),
    #[error("malformed calibration file: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Affine score map from one detector's scale onto a reference scale.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationMap {
    source_detector_id: String,
    slope: f64,
    intercept: f64,
    source_range: (f64, f64),
}

impl CalibrationMap {
    /// Builds a map directly from its parameters, validating that the slope
    /// is strictly positive and everything is finite.
    pub fn new(
        source_detector_id: impl Into<String>,
        slope: f64,
        intercept: f64,
        source_range: (f64, f64),
    ) -> Result<Self, CalibrationError> {
        let source_detector_id = source_detector_id.into();
        let check = |ok: bool, message: &str| -> Result<(), CalibrationError> {
            if ok {
                Ok(())
            } else {
                Err(CalibrationError::InvalidMap {
                    detector: source_detector_id.clone(),
                    message: message.to_string(),
                })
            }
        };
        check(!source_detector_id.is_empty(), "empty detector id")?;
        check(
            slope.is_finite() && slope > 0.0,
            "slope must be finite and > 0",
        )?;
        check(intercept.is_finite(), "intercept must be finite")?;
        check(
            source_range.0.is_finite()
                && source_range.1.is_finite()
                && source_range.0 <= source_range.1,
            "source range must be finite with low <= high",
        )?;
        Ok(Self {
            source_detector_id,
            slope,
            intercept,
            source_range,
        })
    }

    pub fn source_detector_id(&self) -> &str {
        &self.source_detector_id
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    /// Lowest and highest source score observed when the map was fitted.
    pub fn source_range(&self) -> (f64, f64) {
        self.source_range
    }

    /// Maps a source-scale score onto the reference scale. Strictly order
    /// preserving; scores outside the fitted range extrapolate linearly.
    pub fn apply(&self, score: f64) -> f64 {
        self.slope * score + self.intercept
    }
}

/// Percentile of a sorted, nonempty slice using linear interpolation between
/// order statistics: rank = p/100 * (n-1).
fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = rank - lo as f64;
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

fn anchors(which: &'static str, scores: &[f64]) -> Result<(f64, f64, f64, f64), CalibrationError> {
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(CalibrationError::NonFinite);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let distinct = sorted.windows(2).any(|w| w[0] != w[1]);
    if sorted.len() < 2 || !distinct {
        return Err(CalibrationError::Degenerate { which });
    }
    let p05 = percentile_sorted(&sorted, 5.0);
    let p95 = percentile_sorted(&sorted, 95.0);
    Ok((p05, p95, sorted[0], sorted[sorted.len() - 1]))
}

/// Fits the affine map that aligns the 5th and 95th percentiles of
/// `source_scores` with those of `reference_scores`.
pub fn fit_calibration(
    source_detector_id: impl Into<String>,
    source_scores: &[f64],
    reference_scores: &[f64],
) -> Result<CalibrationMap, CalibrationError> {
    let (s05, s95, low, high) = anchors("source", source_scores)?;
    let (r05, r95, _, _) = anchors("reference", reference_scores)?;
    if s95 - s05 == 0.0 {
        return Err(CalibrationError::ZeroSpan { which: "source" });
    }
    if r95 - r05 == 0.0 {
        return Err(CalibrationError::ZeroSpan { which: "reference" });
    }
    let slope = (r95 - r05) / (s95 - s05);
    let intercept = r05 - slope * s05;
    CalibrationMap::new(source_detector_id, slope, intercept, (low, high))
}

/// A collection of calibration maps keyed by source detector id, as stored
/// in a calibration file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CalibrationSet {
    maps: BTreeMap<String, CalibrationMap>,
}

#[derive(Serialize, Deserialize)]
struct RawMap {
    detector: String,
    slope: f64,
    intercept: f64,
    source_low: f64,
    source_high: f64,
}

#[derive(Serialize, Deserialize, Default)]
struct RawSet {
    #[serde(default, rename = "map")]
    maps: Vec<RawMap>,
}

impl CalibrationSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a map, replacing and returning any previous map for the same
    /// detector.
    pub fn insert(&mut self, map: CalibrationMap) -> Option<CalibrationMap> {
        self.maps.insert(map.source_detector_id.clone(), map)
    }

    pub fn get(&self, detector_id: &str) -> Option<&CalibrationMap> {
        self.maps.get(detector_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &CalibrationMap> {
        self.maps.values()
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    /// Serializes the set as a TOML document with one `[[map]]` table per
    /// detector, in detector-id order.
    pub fn to_toml_string(&self) -> String {
        let raw = RawSet {
            maps: self
                .maps
                .values()
                .map(|m| RawMap {
                    detector: m.source_detector_id.clone(),
                    slope: m.slope,
                    intercept: m.intercept,
                    source_low: m.source_range.0,
                    source_high: m.source_range.1,
                })
                .collect(),
        };
        toml::to_string(&raw).expect("calibration set serializes")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, CalibrationError> {
        let raw: RawSet =
            toml::from_str(text).map_err(|e| CalibrationError::Parse(e.to_string()))?;
        let mut set = Self::new();
        for m in raw.maps {
            let map = CalibrationMap::new(
                m.detector,
                m.slope,
                m.intercept,
                (m.source_low, m.source_high),
            )?;
            if set.get(map.source_detector_id()).is_some() {
                return Err(CalibrationError::DuplicateDetector(
                    map.source_detector_id().to_string(),
                ));
            }
            set.insert(map);
        }
        Ok(set)
    }

    pub fn save_to_path(&self, path: impl AsRef<Path>) -> Result<(), CalibrationError> {
        fs::write(path, self.to_toml_string())?;
        Ok(())
    }

    pub fn load_from_path(path: impl AsRef<Path>) -> Result<Self, CalibrationError> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }
}
