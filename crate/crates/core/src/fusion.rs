//! Late-fusion rescoring of one detector's windows using the others.
//!
//! One detector is the *root*: its windows are the fusion candidates. Every
//! other detector contributes *support*: windows on the same frame whose
//! Jaccard overlap with a root window reaches `overlap_threshold`. A root
//! window with no support at all is discarded; a supported window keeps its
//! box and gains score:
//!
//! * [`fuse_sc`] (spatial consensus) adds each supporting window's
//!   calibrated score weighted by its overlap with the root window.
//! * [`fuse_csbc`] (content-weighted consensus) replaces the overlap weight
//!   with a clamped per-detector regression estimate of how much the support
//!   window's own image content looks like a true detection, so confident
//!   scores on the wrong content (traffic signs, tree trunks…) stop
//!   reinforcing each other.
//!
//! Contributions are accumulated in a canonical order — support detectors
//! sorted by id, then their windows in input order — so permuting the
//! support list yields bit-identical output.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::CalibrationSet;
use crate::features::{FeatureError, FeatureExtractor, GrayImage, ImageError, ImageSource};
use crate::geometry::jaccard;
use crate::model_io::{Detection, DetectionSet, ModelIoError};
use crate::pls::{PlsError, PlsModel};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("overlap threshold {0} is outside (0, 1]")]
    InvalidThreshold(f64),
    #[error("weight clamp ({0}, {1}) is invalid: bounds must be finite with low <= high")]
    InvalidClamp(f64, f64),
    #[error("this operation requires fusion mode {expected:?}")]
    ModeMismatch { expected: FusionMode },
    #[error("support detector {0:?} appears more than once")]
    DuplicateDetector(String),
    #[error("root detector {0:?} also appears in the support list")]
    RootInSupport(String),
    #[error("no calibration map for support detector {0:?}")]
    MissingCalibration(String),
    #[error("no content model for support detector {0:?}")]
    MissingModel(String),
    #[error("content model incompatible with its descriptor: {0}")]
    IncompatibleModel(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Pls(#[from] PlsError),
    #[error(transparent)]
    Detection(#[from] ModelIoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    Sc,
    Csbc,
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FusionMode::Sc => "sc",
            FusionMode::Csbc => "csbc",
        })
    }
}

impl std::str::FromStr for FusionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sc" => Ok(FusionMode::Sc),
            "csbc" => Ok(FusionMode::Csbc),
            other => Err(format!("unknown fusion mode {other:?} (expected sc or csbc)")),
        }
    }
}

/// Which supporting windows of a detector count toward a root window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportPolicy {
    /// Every window above the overlap threshold contributes.
    AllWindows,
    /// Only the best-overlapping window per detector contributes
    /// (ties broken by higher score, then input order).
    BestPerDetector,
}

impl std::fmt::Display for SupportPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SupportPolicy::AllWindows => "all_windows",
            SupportPolicy::BestPerDetector => "best_per_detector",
        })
    }
}

impl std::str::FromStr for SupportPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all_windows" => Ok(SupportPolicy::AllWindows),
            "best_per_detector" => Ok(SupportPolicy::BestPerDetector),
            other => Err(format!(
                "unknown support policy {other:?} (expected all_windows or best_per_detector)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    /// Minimum Jaccard overlap for a window to count as support.
    pub overlap_threshold: f64,
    pub mode: FusionMode,
    /// Content-model predictions are clamped into this range before use.
    /// The default `(0, 1)` keeps contributions non-negative and bounded.
    pub weight_clamp: (f64, f64),
    pub support_policy: SupportPolicy,
    /// When set, content-weighted terms are additionally multiplied by the
    /// overlap J (an alternative weighting; off by default).
    pub multiply_jaccard: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            overlap_threshold: 0.5,
            mode: FusionMode::Sc,
            weight_clamp: (0.0, 1.0),
            support_policy: SupportPolicy::AllWindows,
            multiply_jaccard: false,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), FusionError> {
        if !self.overlap_threshold.is_finite()
            || self.overlap_threshold <= 0.0
            || self.overlap_threshold > 1.0
        {
            return Err(FusionError::InvalidThreshold(self.overlap_threshold));
        }
        let (lo, hi) = self.weight_clamp;
        if !lo.is_finite() || !hi.is_finite() || lo > hi {
            return Err(FusionError::InvalidClamp(lo, hi));
        }
        Ok(())
    }
}

/// A support detector's content model paired with the descriptor extractor
/// that produces its inputs. Construction checks that the two agree.
#[derive(Debug, Clone)]
pub struct DetectorModel {
    model: PlsModel,
    extractor: FeatureExtractor,
}

impl DetectorModel {
    pub fn new(model: PlsModel, extractor: FeatureExtractor) -> Result<Self, FusionError> {
        if model.feature_tag() != extractor.tag() {
            return Err(FusionError::IncompatibleModel(format!(
                "model expects '{}' descriptors but the extractor produces '{}'",
                model.feature_tag(),
                extractor.tag()
            )));
        }
        if let Some(dims) = extractor.dims() {
            if dims != model.coefficients().len() {
                return Err(FusionError::IncompatibleModel(format!(
                    "model has {} inputs but the extractor produces {dims}",
                    model.coefficients().len()
                )));
            }
        }
        Ok(DetectorModel { model, extractor })
    }

    pub fn model(&self) -> &PlsModel {
        &self.model
    }

    pub fn extractor(&self) -> &FeatureExtractor {
        &self.extractor
    }
}

/// All windows in `sets` on `w_r`'s frame overlapping it by at least the
/// configured threshold, paired with their Jaccard overlap.
fn support_from<'a>(
    w_r: &Detection,
    sets: impl Iterator<Item = &'a DetectionSet>,
    cfg: &FusionConfig,
) -> Vec<(&'a Detection, f64)> {
    let mut support = Vec::new();
    for set in sets {
        let windows = set.frame(w_r.frame_id());
        match cfg.support_policy {
            SupportPolicy::AllWindows => {
                for w in windows {
                    let j = jaccard(w_r.bbox(), w.bbox());
                    if j >= cfg.overlap_threshold {
                        support.push((w, j));
                    }
                }
            }
            SupportPolicy::BestPerDetector => {
                let mut best: Option<(&Detection, f64)> = None;
                for w in windows {
                    let j = jaccard(w_r.bbox(), w.bbox());
                    if j < cfg.overlap_threshold {
                        continue;
                    }
                    let better = match best {
                        None => true,
                        Some((bw, bj)) => j > bj || (j == bj && w.score() > bw.score()),
                    };
                    if better {
                        best = Some((w, j));
                    }
                }
                support.extend(best);
            }
        }
    }
    support
}

/// Finds the supporting windows for one root window among the other
/// detectors' outputs, in the order the sets are given.
pub fn find_support<'a>(
    w_r: &Detection,
    others: &'a [DetectionSet],
    cfg: &FusionConfig,
) -> Vec<(&'a Detection, f64)> {
    support_from(w_r, others.iter(), cfg)
}

/// Support sets sorted by detector id (the canonical accumulation order),
/// rejecting duplicate ids and the root's own id.
fn ordered_support<'a>(
    root: &DetectionSet,
    others: &'a [DetectionSet],
) -> Result<Vec<&'a DetectionSet>, FusionError> {
    let mut ordered: Vec<&DetectionSet> = Vec::with_capacity(others.len());
    for set in others {
        if set.detector_id() == root.detector_id() {
            return Err(FusionError::RootInSupport(set.detector_id().to_string()));
        }
        if ordered.iter().any(|s| s.detector_id() == set.detector_id()) {
            return Err(FusionError::DuplicateDetector(set.detector_id().to_string()));
        }
        ordered.push(set);
    }
    ordered.sort_by(|a, b| a.detector_id().cmp(b.detector_id()));
    Ok(ordered)
}

fn clamp(v: f64, (lo, hi): (f64, f64)) -> f64 {
    v.max(lo).min(hi)
}

/// Spatial consensus: each root window with support gains the sum of its
/// supporters' calibrated scores weighted by overlap; unsupported root
/// windows are dropped. Boxes never change.
pub fn fuse_sc(
    root: &DetectionSet,
    others: &[DetectionSet],
    cals: &CalibrationSet,
    cfg: &FusionConfig,
) -> Result<DetectionSet, FusionError> {
    cfg.validate()?;
    if cfg.mode != FusionMode::Sc {
        return Err(FusionError::ModeMismatch { expected: FusionMode::Sc });
    }
    let ordered = ordered_support(root, others)?;
    for set in &ordered {
        if cals.get(set.detector_id()).is_none() {
            return Err(FusionError::MissingCalibration(set.detector_id().to_string()));
        }
    }

    let mut out = DetectionSet::new(root.detector_id())?;
    for (_, windows) in root.frames() {
        for w_r in windows {
            let support = support_from(w_r, ordered.iter().copied(), cfg);
            if support.is_empty() {
                continue;
            }
            let mut score = w_r.score();
            for (w_j, j) in support {
                let cal = cals.get(w_j.detector_id()).expect("checked above");
                score += cal.apply(w_j.score()) * j;
            }
            out.push(w_r.with_score(score)?)?;
        }
    }
    Ok(out)
}

/// Per-frame cache of clamped content weights. A support window's weight
/// depends only on its detector and box, so windows supporting several root
/// windows on the same frame are evaluated once.
struct FrameWeights<'a> {
    frame_id: &'a str,
    image: Option<GrayImage>,
    weights: HashMap<(String, [u64; 4]), f64>,
}

impl<'a> FrameWeights<'a> {
    fn new(frame_id: &'a str) -> Self {
        FrameWeights { frame_id, image: None, weights: HashMap::new() }
    }

    fn weight(
        &mut self,
        w_j: &Detection,
        models: &BTreeMap<String, DetectorModel>,
        images: &dyn ImageSource,
        clamp_range: (f64, f64),
    ) -> Result<f64, FusionError> {
        let bbox = w_j.bbox();
        let key = (
            w_j.detector_id().to_string(),
            [
                bbox.x().to_bits(),
                bbox.y().to_bits(),
                bbox.w().to_bits(),
                bbox.h().to_bits(),
            ],
        );
        if let Some(&w) = self.weights.get(&key) {
            return Ok(w);
        }
        let dm = models.get(w_j.detector_id()).expect("checked before fusion");
        let image = if dm.extractor.needs_images() {
            if self.image.is_none() {
                self.image = Some(images.image(self.frame_id)?);
            }
            self.image.as_ref()
        } else {
            None
        };
        let features = dm.extractor.extract(image, self.frame_id, bbox)?;
        let weight = clamp(dm.model.predict_features(&features)?, clamp_range);
        self.weights.insert(key, weight);
        Ok(weight)
    }
}

/// Content-weighted consensus: like [`fuse_sc`], but each supporting term is
/// the calibrated score times a clamped regression estimate computed from
/// the support window's own image content (optionally still multiplied by
/// the overlap). The discard rule is identical: support is support even when
/// its clamped weight is zero.
pub fn fuse_csbc(
    root: &DetectionSet,
    others: &[DetectionSet],
    cals: &CalibrationSet,
    models: &BTreeMap<String, DetectorModel>,
    images: &dyn ImageSource,
    cfg: &FusionConfig,
) -> Result<DetectionSet, FusionError> {
    cfg.validate()?;
    if cfg.mode != FusionMode::Csbc {
        return Err(FusionError::ModeMismatch { expected: FusionMode::Csbc });
    }
    let ordered = ordered_support(root, others)?;
    for set in &ordered {
        if cals.get(set.detector_id()).is_none() {
            return Err(FusionError::MissingCalibration(set.detector_id().to_string()));
        }
        if !models.contains_key(set.detector_id()) {
            return Err(FusionError::MissingModel(set.detector_id().to_string()));
        }
    }

    let mut out = DetectionSet::new(root.detector_id())?;
    for (frame_id, windows) in root.frames() {
        let mut frame = FrameWeights::new(frame_id);
        for w_r in windows {
            let support = support_from(w_r, ordered.iter().copied(), cfg);
            if support.is_empty() {
                continue;
            }
            let mut score = w_r.score();
            for (w_j, j) in support {
                let cal = cals.get(w_j.detector_id()).expect("checked above");
                let weight = frame.weight(w_j, models, images, cfg.weight_clamp)?;
                let mut term = cal.apply(w_j.score()) * weight;
                if cfg.multiply_jaccard {
                    term *= j;
                }
                score += term;
            }
            out.push(w_r.with_score(score)?)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::CalibrationMap;
    use crate::features::{load_precomputed, DescriptorTag};
    use crate::geometry::BoundingBox;
    use crate::pls;
    use ndarray::{Array1, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap as StdHashMap;

    fn bb(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    fn det(frame: &str, b: BoundingBox, score: f64, who: &str) -> Detection {
        Detection::new(frame, b, score, who).unwrap()
    }

    fn set(id: &str, dets: Vec<Detection>) -> DetectionSet {
        let mut s = DetectionSet::new(id).unwrap();
        for d in dets {
            s.push(d).unwrap();
        }
        s
    }

    fn identity_cals(ids: &[&str]) -> CalibrationSet {
        let mut cals = CalibrationSet::new();
        for id in ids {
            cals.insert(CalibrationMap::new(*id, 1.0, 0.0, (0.0, 1.0)).unwrap());
        }
        cals
    }

    struct NoImages;

    impl ImageSource for NoImages {
        fn image(&self, frame_id: &str) -> Result<GrayImage, ImageError> {
            Err(ImageError::MissingImage {
                frame_id: frame_id.to_string(),
                dir: "<none>".into(),
            })
        }
    }

    struct MemorySource(StdHashMap<String, GrayImage>);

    impl ImageSource for MemorySource {
        fn image(&self, frame_id: &str) -> Result<GrayImage, ImageError> {
            self.0.get(frame_id).cloned().ok_or_else(|| ImageError::MissingImage {
                frame_id: frame_id.to_string(),
                dir: "<memory>".into(),
            })
        }
    }

    #[test]
    fn default_config_is_valid() {
        let cfg = FusionConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.overlap_threshold, 0.5);
        assert_eq!(cfg.mode, FusionMode::Sc);
        assert_eq!(cfg.weight_clamp, (0.0, 1.0));
        assert_eq!(cfg.support_policy, SupportPolicy::AllWindows);
        assert!(!cfg.multiply_jaccard);
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        for t in [0.0, -0.1, 1.2, f64::NAN] {
            let cfg = FusionConfig { overlap_threshold: t, ..Default::default() };
            assert!(matches!(cfg.validate(), Err(FusionError::InvalidThreshold(_))), "{t}");
        }
        let cfg = FusionConfig { weight_clamp: (1.0, 0.0), ..Default::default() };
        assert!(matches!(cfg.validate(), Err(FusionError::InvalidClamp(..))));
        let cfg = FusionConfig { weight_clamp: (0.0, f64::INFINITY), ..Default::default() };
        assert!(matches!(cfg.validate(), Err(FusionError::InvalidClamp(..))));
    }

    #[test]
    fn mode_strings_round_trip() {
        assert_eq!("sc".parse::<FusionMode>().unwrap(), FusionMode::Sc);
        assert_eq!("csbc".parse::<FusionMode>().unwrap(), FusionMode::Csbc);
        assert!("spatial".parse::<FusionMode>().is_err());
        assert_eq!(FusionMode::Csbc.to_string(), "csbc");
        assert_eq!(
            "best_per_detector".parse::<SupportPolicy>().unwrap(),
            SupportPolicy::BestPerDetector
        );
        assert_eq!(SupportPolicy::AllWindows.to_string(), "all_windows");
    }

    #[test]
    fn no_support_when_no_other_detector_fires_on_the_frame() {
        let w_r = det("f1", bb(0.0, 0.0, 10.0, 10.0), 0.9, "root");
        let others = vec![set("a", vec![det("f2", bb(0.0, 0.0, 10.0, 10.0), 0.9, "a")])];
        assert!(find_support(&w_r, &others, &FusionConfig::default()).is_empty());
    }

    #[test]
    fn identical_window_supports_with_full_overlap() {
        let w_r = det("f1", bb(3.0, 4.0, 10.0, 20.0), 0.9, "root");
        let others = vec![set("a", vec![det("f1", bb(3.0, 4.0, 10.0, 20.0), 0.5, "a")])];
        let support = find_support(&w_r, &others, &FusionConfig::default());
        assert_eq!(support.len(), 1);
        assert_eq!(support[0].1, 1.0);
    }

    #[test]
    fn threshold_is_inclusive_and_filters_low_overlap() {
        // Unit squares offset by half their width overlap with J = 1/3.
        let w_r = det("f1", bb(0.0, 0.0, 2.0, 2.0), 0.9, "root");
        let others = vec![set("a", vec![det("f1", bb(1.0, 0.0, 2.0, 2.0), 0.5, "a")])];
        let half = FusionConfig { overlap_threshold: 0.5, ..Default::default() };
        assert!(find_support(&w_r, &others, &half).is_empty());
        let quarter = FusionConfig { overlap_threshold: 0.25, ..Default::default() };
        let support = find_support(&w_r, &others, &quarter);
        assert_eq!(support.len(), 1);
        assert!((support[0].1 - 1.0 / 3.0).abs() < 1e-15);
        // J exactly at the threshold counts as support.
        let third = FusionConfig { overlap_threshold: 1.0 / 3.0, ..Default::default() };
        assert_eq!(find_support(&w_r, &others, &third).len(), 1);
    }

    #[test]
    fn best_per_detector_keeps_one_window_per_detector() {
        let w_r = det("f1", bb(0.0, 0.0, 10.0, 10.0), 0.9, "root");
        let others = vec![
            set(
                "a",
                vec![
                    det("f1", bb(0.0, 0.0, 10.0, 6.0), 0.2, "a"), // J = 0.6
                    det("f1", bb(0.0, 0.0, 10.0, 9.0), 0.1, "a"), // J = 0.9
                ],
            ),
            set("b", vec![det("f1", bb(0.0, 0.0, 10.0, 10.0), 0.3, "b")]),
        ];
        let cfg = FusionConfig {
            support_policy: SupportPolicy::BestPerDetector,
            ..Default::default()
        };
        let support = find_support(&w_r, &others, &cfg);
        assert_eq!(support.len(), 2);
        assert_eq!(support[0].0.score(), 0.1);
        assert_eq!(support[0].1, 0.9);
        assert_eq!(support[1].1, 1.0);

        // Equal overlap: the higher score wins.
        let tied = vec![set(
            "a",
            vec![
                det("f1", bb(0.0, 0.0, 10.0, 5.0), 0.2, "a"), // J = 0.5
                det("f1", bb(0.0, 5.0, 10.0, 5.0), 0.7, "a"), // J = 0.5
            ],
        )];
        let support = find_support(&w_r, &tied, &cfg);
        assert_eq!(support.len(), 1);
        assert_eq!(support[0].0.score(), 0.7);

        // Equal overlap and score: first in input order wins.
        let fully_tied = vec![set(
            "a",
            vec![
                det("f1", bb(0.0, 0.0, 10.0, 5.0), 0.4, "a"),
                det("f1", bb(0.0, 5.0, 10.0, 5.0), 0.4, "a"),
            ],
        )];
        let support = find_support(&w_r, &fully_tied, &cfg);
        assert_eq!(support.len(), 1);
        assert_eq!(support[0].0.bbox().y(), 0.0);
    }

    #[test]
    fn unsupported_root_windows_are_discarded() {
        let root = set(
            "root",
            vec![
                det("f1", bb(0.0, 0.0, 10.0, 10.0), 0.9, "root"),
                det("f1", bb(50.0, 50.0, 10.0, 10.0), 0.8, "root"),
            ],
        );
        let others = vec![set("a", vec![det("f1", bb(0.0, 0.0, 10.0, 10.0), 0.5, "a")])];
        let out = fuse_sc(&root, &others, &identity_cals(&["a"]), &FusionConfig::default())
            .unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out.frame("f1")[0].bbox().x(), 0.0);
    }

    #[test]
    fn sc_adds_calibrated_score_times_overlap() {
        // Support window: raw score 0.6, calibration 1.0*s + 0.2 -> 0.8,
        // overlap 0.5, so the root's 1.0 becomes 1.0 + 0.8 * 0.5 = 1.4.
        let root = set("root", vec![det("f1", bb(0.0, 0.0, 10.0, 10.0), 1.0, "root")]);
        let others = vec![set("a", vec![det("f1", bb(0.0, 0.0, 10.0, 5.0), 0.6, "a")])];
        let mut cals = CalibrationSet::new();
        cals.insert(CalibrationMap::new("a", 1.0, 0.2, (0.0, 1.0)).unwrap());
        let out = fuse_sc(&root, &others, &cals, &FusionConfig::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out.frame("f1")[0].score() - 1.4).abs() < 1e-12);
    }

    /// A dense multi-frame, multi-detector fixture with deterministic
    /// pseudo-random boxes clustered so that overlaps actually occur.
    fn dense_fixture() -> (DetectionSet, Vec<DetectionSet>, CalibrationSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let frames = ["f1", "f2", "f3"];
        let mut root = DetectionSet::new("root").unwrap();
        let mut others: Vec<DetectionSet> = ["det_a", "det_b", "det_c"]
            .iter()
            .map(|id| DetectionSet::new(*id).unwrap())
            .collect();
        for frame in frames {
            // Anchor boxes; every detector drops jittered copies near them.
            let anchors: Vec<BoundingBox> = (0..4)
                .map(|_| {
                    bb(
                        rng.gen_range(0.0..200.0),
                        rng.gen_range(0.0..200.0),
                        rng.gen_range(20.0..40.0),
                        rng.gen_range(40.0..80.0),
                    )
                })
                .collect();
            for anchor in &anchors {
                if rng.gen_bool(0.9) {
                    let b = bb(
                        anchor.x() + rng.gen_range(-3.0..3.0),
                        anchor.y() + rng.gen_range(-3.0..3.0),
                        anchor.w(),
                        anchor.h(),
                    );
                    root.push(det(frame, b, rng.gen_range(0.1..1.0), "root")).unwrap();
                }
                for other in others.iter_mut() {
                    let id = other.detector_id().to_string();
                    for _ in 0..rng.gen_range(0..3) {
                        let b = bb(
                            anchor.x() + rng.gen_range(-4.0..4.0),
                            anchor.y() + rng.gen_range(-4.0..4.0),
                            anchor.w() * rng.gen_range(0.9..1.1),
                            anchor.h() * rng.gen_range(0.9..1.1),
                        );
                        other.push(det(frame, b, rng.gen_range(0.1..1.0), &id)).unwrap();
                    }
                }
            }
        }
        let mut cals = CalibrationSet::new();
        cals.insert(CalibrationMap::new("det_a", 1.1, 0.05, (0.0, 1.0)).unwrap());
        cals.insert(CalibrationMap::new("det_b", 0.9, 0.0, (0.0, 1.0)).unwrap());
        cals.insert(CalibrationMap::new("det_c", 1.4, 0.02, (0.0, 1.0)).unwrap());
        (root, others, cals)
    }

    #[test]
    fn sc_matches_independent_double_loop_oracle() {
        let (root, others, cals) = dense_fixture();
        let cfg = FusionConfig::default();
        let out = fuse_sc(&root, &others, &cals, &cfg).unwrap();

        let mut expected = 0usize;
        for (frame_id, windows) in root.frames() {
            for w_r in windows {
                // Brute force: scan every window of every other detector.
                let mut terms = Vec::new();
                for other in &others {
                    for w_j in other.frame(frame_id) {
                        let j = jaccard(w_r.bbox(), w_j.bbox());
                        if j >= cfg.overlap_threshold {
                            let cal = cals.get(other.detector_id()).unwrap();
                            terms.push(cal.apply(w_j.score()) * j);
                        }
                    }
                }
                let fused: Vec<&Detection> = out
                    .frame(frame_id)
                    .iter()
                    .filter(|d| d.bbox() == w_r.bbox())
                    .collect();
                if terms.is_empty() {
                    assert!(fused.is_empty(), "unsupported window must be discarded");
                } else {
                    expected += 1;
                    assert_eq!(fused.len(), 1);
                    let want = w_r.score() + terms.iter().sum::<f64>();
                    assert!(
                        (fused[0].score() - want).abs() <= 1e-12,
                        "frame {frame_id}: got {}, want {want}",
                        fused[0].score()
                    );
                    // Output scores never drop below the root's own score
                    // when all contributions are non-negative.
                    assert!(fused[0].score() >= w_r.score());
                }
            }
        }
        assert_eq!(out.len(), expected);
        assert!(expected > 5, "fixture must actually exercise fusion");
    }

    fn score_map(set: &DetectionSet) -> Vec<(String, [u64; 4], u64)> {
        set.frames()
            .flat_map(|(frame, dets)| {
                dets.iter().map(move |d| {
                    (
                        frame.to_string(),
                        [
                            d.bbox().x().to_bits(),
                            d.bbox().y().to_bits(),
                            d.bbox().w().to_bits(),
                            d.bbox().h().to_bits(),
                        ],
                        d.score().to_bits(),
                    )
                })
            })
            .collect()
    }

    #[test]
    fn sc_is_bit_identical_under_support_permutations() {
        let (root, others, cals) = dense_fixture();
        let cfg = FusionConfig::default();
        let reference = score_map(&fuse_sc(&root, &others, &cals, &cfg).unwrap());
        let permutations: [[usize; 3]; 5] =
            [[0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        for perm in permutations {
            let shuffled: Vec<DetectionSet> =
                perm.iter().map(|&i| others[i].clone()).collect();
            let out = score_map(&fuse_sc(&root, &shuffled, &cals, &cfg).unwrap());
            assert_eq!(out, reference, "permutation {perm:?} changed the output");
        }
    }

    #[test]
    fn sc_requires_calibration_for_every_support_detector() {
        let (root, others, _) = dense_fixture();
        let partial = identity_cals(&["det_a", "det_b"]);
        let err = fuse_sc(&root, &others, &partial, &FusionConfig::default()).unwrap_err();
        assert!(matches!(err, FusionError::MissingCalibration(id) if id == "det_c"));
    }

    #[test]
    fn duplicate_and_root_detector_ids_are_rejected() {
        let root = set("root", vec![det("f1", bb(0.0, 0.0, 10.0, 10.0), 0.9, "root")]);
        let dup = vec![
            set("a", vec![det("f1", bb(0.0, 0.0, 10.0, 10.0), 0.5, "a")]),
            set("a", vec![det("f1", bb(0.0, 0.0, 10.0, 10.0), 0.4, "a")]),
        ];
        let err =
            fuse_sc(&root, &dup, &identity_cals(&["a"]), &FusionConfig::default()).unwrap_err();
        assert!(matches!(err, FusionError::DuplicateDetector(_)));

        let own = vec![set("root", vec![det("f1", bb(0.0, 0.0, 10.0, 10.0), 0.5, "root")])];
        let err =
            fuse_sc(&root, &own, &identity_cals(&["root"]), &FusionConfig::default()).unwrap_err();
        assert!(matches!(err, FusionError::RootInSupport(_)));
    }

    #[test]
    fn sc_rejects_wrong_mode() {
        let root = set("root", vec![det("f1", bb(0.0, 0.0, 10.0, 10.0), 0.9, "root")]);
        let cfg = FusionConfig { mode: FusionMode::Csbc, ..Default::default() };
        let err = fuse_sc(&root, &[], &CalibrationSet::new(), &cfg).unwrap_err();
        assert!(matches!(err, FusionError::ModeMismatch { expected: FusionMode::Sc }));
    }

    /// Builds a 1-input content model `prediction = slope * v + offset`
    /// fitted from synthetic pairs, plus a feature table that assigns value
    /// `v` to every listed window.
    fn linear_model(slope: f64, offset: f64) -> PlsModel {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let x = Array2::from_shape_vec((4, 1), xs.to_vec()).unwrap();
        let y = Array1::from_vec(xs.iter().map(|v| slope * v + offset).collect());
        pls::fit(&x, &y, 1).unwrap()
    }

    fn feature_table(entries: &[(&str, &BoundingBox, f64)]) -> FeatureExtractor {
        let mut text = String::new();
        for (frame, b, v) in entries {
            text.push_str(&format!("{frame} {} {} {} {} {v}\n", b.x(), b.y(), b.w(), b.h()));
        }
        FeatureExtractor::Precomputed(load_precomputed(text.as_bytes()).unwrap())
    }

    /// One root window over two support windows with known feature values.
    fn csbc_fixture(
        values: (f64, f64),
    ) -> (DetectionSet, Vec<DetectionSet>, CalibrationSet, BTreeMap<String, DetectorModel>) {
        let root = set("root", vec![det("f1", bb(0.0, 0.0, 10.0, 10.0), 1.0, "root")]);
        let b_a = bb(0.0, 0.0, 10.0, 8.0); // J = 0.8
        let b_b = bb(0.0, 0.0, 10.0, 5.0); // J = 0.5
        let others = vec![
            set("det_a", vec![det("f1", b_a, 0.6, "det_a")]),
            set("det_b", vec![det("f1", b_b, 0.4, "det_b")]),
        ];
        let mut cals = CalibrationSet::new();
        cals.insert(CalibrationMap::new("det_a", 1.0, 0.2, (0.0, 1.0)).unwrap());
        cals.insert(CalibrationMap::new("det_b", 2.0, 0.0, (0.0, 1.0)).unwrap());
        let mut models = BTreeMap::new();
        models.insert(
            "det_a".to_string(),
            DetectorModel::new(linear_model(1.0, 0.0), feature_table(&[("f1", &b_a, values.0)]))
                .unwrap(),
        );
        models.insert(
            "det_b".to_string(),
            DetectorModel::new(linear_model(1.0, 0.0), feature_table(&[("f1", &b_b, values.1)]))
                .unwrap(),
        );
        (root, others, cals, models)
    }

    #[test]
    fn csbc_weights_by_clamped_content_prediction() {
        // Predictions are the raw feature values 0.7 and 0.3 (identity
        // model); terms are calibrated_score * weight with no overlap factor:
        // 1.0 + (0.6 + 0.2) * 0.7 + (0.4 * 2.0) * 0.3 = 1.8.
        let (root, others, cals, models) = csbc_fixture((0.7, 0.3));
        let cfg = FusionConfig { mode: FusionMode::Csbc, ..Default::default() };
        let out = fuse_csbc(&root, &others, &cals, &models, &NoImages, &cfg).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out.frame("f1")[0].score() - 1.8).abs() <= 1e-9);
    }

    #[test]
    fn csbc_clamps_predictions_into_the_configured_range() {
        // Raw predictions 1.5 and -2.0 clamp to 1.0 and 0.0:
        // 1.0 + 0.8 * 1.0 + 0.8 * 0.0 = 1.8.
        let (root, others, cals, models) = csbc_fixture((1.5, -2.0));
        let cfg = FusionConfig { mode: FusionMode::Csbc, ..Default::default() };
        let out = fuse_csbc(&root, &others, &cals, &models, &NoImages, &cfg).unwrap();
        assert!((out.frame("f1")[0].score() - 1.8).abs() <= 1e-9);
    }

    #[test]
    fn zero_weight_support_still_counts_as_support() {
        // Both weights clamp to zero, so the root keeps exactly its own
        // score — but it is NOT discarded, because spatial support existed.
        let (root, others, cals, models) = csbc_fixture((-1.0, -5.0));
        let cfg = FusionConfig { mode: FusionMode::Csbc, ..Default::default() };
        let out = fuse_csbc(&root, &others, &cals, &models, &NoImages, &cfg).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out.frame("f1")[0].score(), 1.0);
    }

    #[test]
    fn constant_clamp_reduces_csbc_to_unit_weighted_sc() {
        // With weight_clamp = (c, c) every term becomes calibrated * c,
        // regardless of content. Oracle: brute-force sum with weight c.
        let (root, others, cals, models) = csbc_fixture((0.123, 0.456));
        let c = 0.75;
        let cfg = FusionConfig {
            mode: FusionMode::Csbc,
            weight_clamp: (c, c),
            ..Default::default()
        };
        let out = fuse_csbc(&root, &others, &cals, &models, &NoImages, &cfg).unwrap();
        let want = 1.0 + (0.6 + 0.2) * c + (0.4 * 2.0) * c;
        assert!((out.frame("f1")[0].score() - want).abs() <= 1e-12);
    }

    #[test]
    fn multiply_jaccard_knob_restores_the_overlap_factor() {
        // With the knob on, terms are calibrated * weight * J:
        // 1.0 + 0.8 * 0.7 * 0.8 + 0.8 * 0.3 * 0.5 = 1.568.
        let (root, others, cals, models) = csbc_fixture((0.7, 0.3));
        let cfg = FusionConfig {
            mode: FusionMode::Csbc,
            multiply_jaccard: true,
            ..Default::default()
        };
        let out = fuse_csbc(&root, &others, &cals, &models, &NoImages, &cfg).unwrap();
        assert!((out.frame("f1")[0].score() - 1.568).abs() <= 1e-9);
    }

    #[test]
    fn csbc_requires_a_model_for_every_support_detector() {
        let (root, others, cals, mut models) = csbc_fixture((0.5, 0.5));
        models.remove("det_b");
        let cfg = FusionConfig { mode: FusionMode::Csbc, ..Default::default() };
        let err = fuse_csbc(&root, &others, &cals, &models, &NoImages, &cfg).unwrap_err();
        assert!(matches!(err, FusionError::MissingModel(id) if id == "det_b"));
    }

    #[test]
    fn detector_model_rejects_mismatched_descriptor() {
        let model = linear_model(1.0, 0.0); // external tag, 1 input
        let err = DetectorModel::new(model.clone(), FeatureExtractor::Glcm).unwrap_err();
        assert!(matches!(err, FusionError::IncompatibleModel(_)));
        let table = feature_table(&[("f1", &bb(0.0, 0.0, 1.0, 1.0), 0.5)]);
        // Tag matches (external) but the table is 1-dim like the model: ok.
        DetectorModel::new(model, table).unwrap();
        // A glcm-tagged model must pair with the glcm extractor.
        let xs: Vec<f64> = (0..120).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = Array2::from_shape_vec((6, 20), xs).unwrap();
        let y = Array1::from_vec((0..6).map(|i| i as f64 * 0.1).collect());
        let glcm_model = pls::fit(&x, &y, 1).unwrap().with_feature_tag(DescriptorTag::Glcm);
        DetectorModel::new(glcm_model, FeatureExtractor::Glcm).unwrap();
    }

    #[test]
    fn missing_image_is_an_error_only_for_frames_with_support() {
        // Model reads glcm descriptors, so support windows need pixels.
        let xs: Vec<f64> = (0..120).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = Array2::from_shape_vec((6, 20), xs).unwrap();
        let y = Array1::from_vec((0..6).map(|i| i as f64 * 0.1).collect());
        let glcm_model = pls::fit(&x, &y, 1).unwrap().with_feature_tag(DescriptorTag::Glcm);
        let mut models = BTreeMap::new();
        models.insert(
            "det_a".to_string(),
            DetectorModel::new(glcm_model, FeatureExtractor::Glcm).unwrap(),
        );
        let cals = identity_cals(&["det_a"]);
        let cfg = FusionConfig { mode: FusionMode::Csbc, ..Default::default() };

        // Support on frame "has_image": fine, its pixels exist in memory.
        // No support on frame "no_image": its absence must not matter.
        let root = set(
            "root",
            vec![
                det("has_image", bb(0.0, 0.0, 16.0, 16.0), 0.9, "root"),
                det("no_image", bb(0.0, 0.0, 16.0, 16.0), 0.8, "root"),
            ],
        );
        let others = vec![set(
            "det_a",
            vec![det("has_image", bb(0.0, 0.0, 16.0, 14.0), 0.5, "det_a")],
        )];
        let mut images = StdHashMap::new();
        images.insert(
            "has_image".to_string(),
            GrayImage::from_fn(32, 32, |x, y| ((x + y) % 7) as f64 / 6.0),
        );
        let out =
            fuse_csbc(&root, &others, &cals, &models, &MemorySource(images), &cfg).unwrap();
        assert_eq!(out.len(), 1);

        // The same fixture without any images fails, naming the frame.
        let err = fuse_csbc(&root, &others, &cals, &models, &NoImages, &cfg).unwrap_err();
        assert!(err.to_string().contains("has_image"), "{err}");
    }

    /// CSBC analogue of the dense-fixture oracle: every window of every
    /// support detector gets a deterministic pseudo-random feature value.
    #[test]
    fn csbc_matches_independent_double_loop_oracle() {
        let (root, others, cals) = dense_fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut models = BTreeMap::new();
        let mut tables: StdHashMap<String, FeatureExtractor> = StdHashMap::new();
        for other in &others {
            let entries: Vec<(String, BoundingBox, f64)> = other
                .frames()
                .flat_map(|(frame, dets)| {
                    dets.iter()
                        .map(|d| (frame.to_string(), *d.bbox(), rng.gen_range(-0.5..1.5)))
                        .collect::<Vec<_>>()
                })
                .collect();
            let refs: Vec<(&str, &BoundingBox, f64)> =
                entries.iter().map(|(f, b, v)| (f.as_str(), b, *v)).collect();
            let table = feature_table(&refs);
            tables.insert(other.detector_id().to_string(), table.clone());
            models.insert(
                other.detector_id().to_string(),
                DetectorModel::new(linear_model(1.0, 0.0), table).unwrap(),
            );
        }
        let cfg = FusionConfig { mode: FusionMode::Csbc, ..Default::default() };
        let out = fuse_csbc(&root, &others, &cals, &models, &NoImages, &cfg).unwrap();

        for (frame_id, windows) in root.frames() {
            for w_r in windows {
                let mut terms = Vec::new();
                for other in &others {
                    for w_j in other.frame(frame_id) {
                        let j = jaccard(w_r.bbox(), w_j.bbox());
                        if j >= cfg.overlap_threshold {
                            let cal = cals.get(other.detector_id()).unwrap();
                            let extractor = &tables[other.detector_id()];
                            let features =
                                extractor.extract(None, frame_id, w_j.bbox()).unwrap();
                            let model = models[other.detector_id()].model();
                            let weight = model
                                .predict_features(&features)
                                .unwrap()
                                .clamp(0.0, 1.0);
                            terms.push(cal.apply(w_j.score()) * weight);
                        }
                    }
                }
                let fused: Vec<&Detection> = out
                    .frame(frame_id)
                    .iter()
                    .filter(|d| d.bbox() == w_r.bbox())
                    .collect();
                if terms.is_empty() {
                    assert!(fused.is_empty());
                } else {
                    assert_eq!(fused.len(), 1);
                    let want = w_r.score() + terms.iter().sum::<f64>();
                    assert!(
                        (fused[0].score() - want).abs() <= 1e-12,
                        "got {}, want {want}",
                        fused[0].score()
                    );
                }
            }
        }
    }

    #[test]
    fn csbc_is_bit_identical_under_support_permutations() {
        let (root, others, cals) = dense_fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut models = BTreeMap::new();
        for other in &others {
            let entries: Vec<(String, BoundingBox, f64)> = other
                .frames()
                .flat_map(|(frame, dets)| {
                    dets.iter()
                        .map(|d| (frame.to_string(), *d.bbox(), rng.gen_range(0.0..1.0)))
                        .collect::<Vec<_>>()
                })
                .collect();
            let refs: Vec<(&str, &BoundingBox, f64)> =
                entries.iter().map(|(f, b, v)| (f.as_str(), b, *v)).collect();
            models.insert(
                other.detector_id().to_string(),
                DetectorModel::new(linear_model(1.0, 0.0), feature_table(&refs)).unwrap(),
            );
        }
        let cfg = FusionConfig { mode: FusionMode::Csbc, ..Default::default() };
        let reference =
            score_map(&fuse_csbc(&root, &others, &cals, &models, &NoImages, &cfg).unwrap());
        for perm in [[2usize, 0, 1], [1, 2, 0], [2, 1, 0]] {
            let shuffled: Vec<DetectionSet> =
                perm.iter().map(|&i| others[i].clone()).collect();
            let out =
                score_map(&fuse_csbc(&root, &shuffled, &cals, &models, &NoImages, &cfg).unwrap());
            assert_eq!(out, reference, "permutation {perm:?} changed the output");
        }
    }
}
