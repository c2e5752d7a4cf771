//! Deterministic synthetic scenes and simulated detector ensembles.
//!
//! Scenes contain "pedestrians" (the objects to detect) plus two distractor
//! classes, each rendered as a texture that appearance descriptors can tell
//! apart: pedestrians are horizontal sinusoidal bands, trees are hard
//! high-frequency vertical stripes, walls are flat bright blocks, and the
//! background is flat mid-gray. Simulated detectors hit each ground-truth
//! box with a configured probability and hallucinate false positives only on
//! distractor boxes, class by class — so a content model has a learnable
//! signal separating a detector's good windows from its typical mistakes.
//!
//! Everything is a pure function of explicit seeds (ChaCha8 streams), making
//! scenes, detections, and downstream experiments bit-reproducible.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{GrayImage, ImageError, ImageSource};
use crate::geometry::{jaccard, BoundingBox};
use crate::model_io::{Detection, DetectionSet, GroundTruthBox, ModelIoError};

pub const CLASS_TREE: &str = "tree";
pub const CLASS_WALL: &str = "wall";

const BACKGROUND_VALUE: f64 = 0.4;
const WALL_VALUE: f64 = 0.7;
const TREE_DARK: f64 = 0.15;
const TREE_BRIGHT: f64 = 0.85;
const TREE_STRIPE_PX: f64 = 2.0;
const PEDESTRIAN_BANDS: f64 = 4.0;
const PLACEMENT_ATTEMPTS: usize = 200;
const FRAME_MARGIN: f64 = 2.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid detector profile {detector_id:?}: {message}")]
    InvalidProfile { detector_id: String, message: String },
    #[error(
        "cannot place {wanted} {kind} boxes within the overlap budget \
         (placed {placed}); enlarge the frame or relax the budget"
    )]
    Placement { kind: &'static str, wanted: usize, placed: usize },
    #[error(transparent)]
    Detection(#[from] ModelIoError),
}

/// Scene layout parameters. Sizes of the rendered boxes scale with the
/// frame's smaller dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub pedestrians: usize,
    pub trees: usize,
    pub walls: usize,
    /// Maximum pairwise Jaccard overlap allowed between any two placed
    /// boxes (ground truth and distractors alike).
    pub overlap_budget: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 320,
            height: 256,
            pedestrians: 3,
            trees: 4,
            walls: 3,
            overlap_budget: 0.05,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.width < 128 || self.height < 128 {
            return Err(SynthError::InvalidConfig(format!(
                "frame must be at least 128x128, got {}x{}",
                self.width, self.height
            )));
        }
        if !(0.0..=1.0).contains(&self.overlap_budget) {
            return Err(SynthError::InvalidConfig(format!(
                "overlap budget {} is outside [0, 1]",
                self.overlap_budget
            )));
        }
        Ok(())
    }
}

/// One generated frame: its rendered image, pedestrian ground truth, and
/// the distractor boxes with their content class.
#[derive(Debug, Clone)]
pub struct Scene {
    pub frame_id: String,
    pub seed: u64,
    pub image: GrayImage,
    pub gts: Vec<GroundTruthBox>,
    pub distractors: Vec<(BoundingBox, String)>,
}

/// Error profile of one simulated detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorProfile {
    pub detector_id: String,
    /// Probability of firing on each ground-truth box.
    pub tp_rate: f64,
    /// Per-distractor-box probability of a false positive, by content class.
    /// Classes absent from the map never trigger this detector.
    #[serde(default)]
    pub fp_rate_per_class: BTreeMap<String, f64>,
    /// Standard deviation (pixels) of the Gaussian jitter applied to the
    /// corners of every emitted box.
    #[serde(default)]
    pub localization_sigma: f64,
    /// Mean and standard deviation of true-positive scores.
    pub score_tp: (f64, f64),
    /// Mean and standard deviation of false-positive scores.
    pub score_fp: (f64, f64),
    pub rng_seed: u64,
}

impl DetectorProfile {
    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |message: String| SynthError::InvalidProfile {
            detector_id: self.detector_id.clone(),
            message,
        };
        if !(0.0..=1.0).contains(&self.tp_rate) {
            return Err(fail(format!("tp_rate {} is outside [0, 1]", self.tp_rate)));
        }
        for (class, rate) in &self.fp_rate_per_class {
            if !(0.0..=1.0).contains(rate) {
                return Err(fail(format!("fp rate {rate} for class {class:?} is outside [0, 1]")));
            }
        }
        if !self.localization_sigma.is_finite() || self.localization_sigma < 0.0 {
            return Err(fail(format!(
                "localization sigma {} must be finite and non-negative",
                self.localization_sigma
            )));
        }
        for (name, (mean, sd)) in [("score_tp", self.score_tp), ("score_fp", self.score_fp)] {
            if !mean.is_finite() || !sd.is_finite() || sd < 0.0 {
                return Err(fail(format!("{name} ({mean}, {sd}) must be finite with sd >= 0")));
            }
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combines a detector seed and a scene seed into one stream seed, so every
/// (detector, scene) pair draws from its own independent sequence.
pub fn mix_seeds(a: u64, b: u64) -> u64 {
    splitmix64(a ^ splitmix64(b))
}

/// Standard normal draw via the Box-Muller transform (two uniform draws).
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[derive(Clone, Copy)]
enum BoxKind {
    Pedestrian,
    Tree,
    Wall,
}

impl BoxKind {
    fn name(self) -> &'static str {
        match self {
            BoxKind::Pedestrian => "pedestrian",
            BoxKind::Tree => CLASS_TREE,
            BoxKind::Wall => CLASS_WALL,
        }
    }

    /// Samples a box size: pedestrians are tall, trees taller and thinner,
    /// walls wide and squat. All proportional to the frame's short side.
    fn sample_size(self, base: f64, rng: &mut ChaCha8Rng) -> (f64, f64) {
        match self {
            BoxKind::Pedestrian => {
                let w = base * rng.gen_range(0.09..0.13);
                (w, 2.5 * w)
            }
            BoxKind::Tree => {
                let w = base * rng.gen_range(0.05..0.08);
                (w, 3.2 * w)
            }
            BoxKind::Wall => {
                let w = base * rng.gen_range(0.16..0.24);
                let h = w * rng.gen_range(0.6..0.9);
                (w, h)
            }
        }
    }
}

fn place_boxes(
    kind: BoxKind,
    count: usize,
    cfg: &SceneConfig,
    placed: &mut Vec<BoundingBox>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<BoundingBox>, SynthError> {
    let base = cfg.width.min(cfg.height) as f64;
    let mut boxes = Vec::with_capacity(count);
    for i in 0..count {
        let mut accepted = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let (w, h) = kind.sample_size(base, rng);
            let max_x = cfg.width as f64 - w - FRAME_MARGIN;
            let max_y = cfg.height as f64 - h - FRAME_MARGIN;
            if max_x <= FRAME_MARGIN || max_y <= FRAME_MARGIN {
                continue;
            }
            let candidate = BoundingBox::new(
                rng.gen_range(FRAME_MARGIN..max_x),
                rng.gen_range(FRAME_MARGIN..max_y),
                w,
                h,
            )
            .expect("sampled boxes are positive and finite");
            if placed.iter().all(|b| jaccard(b, &candidate) <= cfg.overlap_budget) {
                accepted = Some(candidate);
                break;
            }
        }
        match accepted {
            Some(b) => {
                placed.push(b);
                boxes.push(b);
            }
            None => {
                return Err(SynthError::Placement { kind: kind.name(), wanted: count, placed: i })
            }
        }
    }
    Ok(boxes)
}

fn paint_box(pixels: &mut [f64], width: usize, height: usize, b: &BoundingBox, kind: BoxKind) {
    let x0 = b.x().floor().max(0.0) as usize;
    let y0 = b.y().floor().max(0.0) as usize;
    let x1 = (b.right().ceil() as usize).min(width);
    let y1 = (b.bottom().ceil() as usize).min(height);
    for py in y0..y1 {
        for px in x0..x1 {
            let value = match kind {
                // Horizontal bands: a sinusoid along y spanning 0.1..0.95.
                BoxKind::Pedestrian => {
                    let local = (py as f64 - b.y()) / b.h();
                    0.525 + 0.425 * (std::f64::consts::TAU * PEDESTRIAN_BANDS * local).sin()
                }
                // Hard vertical stripes, two pixels wide.
                BoxKind::Tree => {
                    let stripe = ((px as f64 - b.x()) / TREE_STRIPE_PX).floor() as i64;
                    if stripe.rem_euclid(2) == 0 {
                        TREE_BRIGHT
                    } else {
                        TREE_DARK
                    }
                }
                BoxKind::Wall => WALL_VALUE,
            };
            pixels[py * width + px] = value.clamp(0.0, 1.0);
        }
    }
}

/// Renders one deterministic scene: pedestrians (ground truth) plus tree and
/// wall distractors, placed by rejection sampling under the overlap budget
/// and painted over a flat background (walls first, pedestrians last).
pub fn generate_scene(seed: u64, frame_id: &str, cfg: &SceneConfig) -> Result<Scene, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut placed = Vec::new();
    let peds = place_boxes(BoxKind::Pedestrian, cfg.pedestrians, cfg, &mut placed, &mut rng)?;
    let trees = place_boxes(BoxKind::Tree, cfg.trees, cfg, &mut placed, &mut rng)?;
    let walls = place_boxes(BoxKind::Wall, cfg.walls, cfg, &mut placed, &mut rng)?;

    let mut pixels = vec![BACKGROUND_VALUE; cfg.width * cfg.height];
    for b in &walls {
        paint_box(&mut pixels, cfg.width, cfg.height, b, BoxKind::Wall);
    }
    for b in &trees {
        paint_box(&mut pixels, cfg.width, cfg.height, b, BoxKind::Tree);
    }
    for b in &peds {
        paint_box(&mut pixels, cfg.width, cfg.height, b, BoxKind::Pedestrian);
    }
    let image = GrayImage::new(cfg.width, cfg.height, pixels)
        .expect("painted values stay within [0, 1]");

    let gts = peds
        .iter()
        .map(|b| GroundTruthBox::new(frame_id, *b, false))
        .collect();
    let mut distractors: Vec<(BoundingBox, String)> = Vec::new();
    distractors.extend(trees.iter().map(|b| (*b, CLASS_TREE.to_string())));
    distractors.extend(walls.iter().map(|b| (*b, CLASS_WALL.to_string())));
    Ok(Scene { frame_id: frame_id.to_string(), seed, image, gts, distractors })
}

fn jittered(b: &BoundingBox, sigma: f64, rng: &mut ChaCha8Rng) -> BoundingBox {
    if sigma == 0.0 {
        return *b;
    }
    let x0 = b.x() + sigma * gaussian(rng);
    let y0 = b.y() + sigma * gaussian(rng);
    let x1 = b.right() + sigma * gaussian(rng);
    let y1 = b.bottom() + sigma * gaussian(rng);
    BoundingBox::new(x0, y0, (x1 - x0).max(1.0), (y1 - y0).max(1.0))
        .expect("jittered boxes are finite with positive size")
}

/// Runs one simulated detector over a scene: each ground-truth box fires
/// with `tp_rate`, each distractor box with its class's false-positive rate;
/// boxes are corner-jittered and scores drawn from the per-outcome Gaussian.
/// Deterministic in `(profile.rng_seed, scene.seed)`.
pub fn simulate_detector(
    profile: &DetectorProfile,
    scene: &Scene,
) -> Result<DetectionSet, SynthError> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seeds(profile.rng_seed, scene.seed));
    let mut out = DetectionSet::new(&profile.detector_id)?;
    for gt in &scene.gts {
        if profile.tp_rate > 0.0 && rng.gen_bool(profile.tp_rate) {
            let b = jittered(&gt.bbox, profile.localization_sigma, &mut rng);
            let score = profile.score_tp.0 + profile.score_tp.1 * gaussian(&mut rng);
            out.push(Detection::new(&scene.frame_id, b, score, &profile.detector_id)?)?;
        }
    }
    for (bbox, class) in &scene.distractors {
        let rate = profile.fp_rate_per_class.get(class).copied().unwrap_or(0.0);
        if rate > 0.0 && rng.gen_bool(rate) {
            let b = jittered(bbox, profile.localization_sigma, &mut rng);
            let score = profile.score_fp.0 + profile.score_fp.1 * gaussian(&mut rng);
            out.push(Detection::new(&scene.frame_id, b, score, &profile.detector_id)?)?;
        }
    }
    Ok(out)
}

/// In-memory image source over generated scenes, for pipelines that skip
/// the image directory on disk.
#[derive(Debug, Clone, Default)]
pub struct SceneSource {
    images: HashMap<String, GrayImage>,
}

impl SceneSource {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_scene(&mut self, scene: &Scene) {
        self.images.insert(scene.frame_id.clone(), scene.image.clone());
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

impl ImageSource for SceneSource {
    fn image(&self, frame_id: &str) -> Result<GrayImage, ImageError> {
        self.images.get(frame_id).cloned().ok_or_else(|| ImageError::MissingImage {
            frame_id: frame_id.to_string(),
            dir: "<synthetic>".into(),
        })
    }
}

/// Canonical frame name for the i-th generated scene (lexicographic order
/// matches numeric order up to 9999 frames).
pub fn frame_name(index: usize) -> String {
    format!("f{index:04}")
}
