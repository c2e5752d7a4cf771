//! Builds per-detector regression training sets and fits scoring models.
//!
//! Each detection window becomes one training row: the predictors are the
//! appearance descriptor of the window's image patch, and the target is the
//! window's maximum Jaccard overlap with any non-ignored ground-truth box on
//! its frame (zero when the frame has none). A partial-least-squares model
//! fitted on such rows learns to estimate "how much does this window look
//! like a real object", which the `csbc` fusion mode uses to weight support
//! windows by content instead of by raw overlap.

use std::collections::HashMap;

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::features::{FeatureError, FeatureExtractor, ImageError, ImageSource};
use crate::geometry::{jaccard, BoundingBox};
use crate::model_io::{DetectionSet, GroundTruthBox};
use crate::pls::{fit_with, FitOptions, PlsError, PlsModel};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("detector {detector_id:?} has no detections to train on")]
    EmptySet { detector_id: String },
    #[error(
        "all training labels for detector {detector_id:?} are identical ({value}); \
         add background windows or annotated frames so overlaps span a range"
    )]
    DegenerateTarget { detector_id: String, value: f64 },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Pls(#[from] PlsError),
}

/// Knobs for training-set construction and model fitting.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Cap on training windows per detector. When the canonical window list
    /// is longer, it is thinned by deterministic stride subsampling.
    pub max_windows: Option<usize>,
    /// L2-normalize each descriptor row before fitting. The fitted model is
    /// stamped so prediction applies the same normalization.
    pub normalize_features: bool,
    /// Options forwarded to the regression fit (e.g. unit-variance scaling).
    pub fit: FitOptions,
}

/// Regression target for one window: its maximum Jaccard overlap with the
/// frame's non-ignored ground truth, or 0.0 when there is none.
pub fn label_window(bbox: &BoundingBox, frame_gts: &[&GroundTruthBox]) -> f64 {
    frame_gts
        .iter()
        .filter(|gt| !gt.ignore)
        .map(|gt| jaccard(bbox, &gt.bbox))
        .fold(0.0, f64::max)
}

/// Evenly spaced subsample of `take` indices from `0..n` (all of them when
/// `take >= n`). Deterministic: index i maps to floor(i * n / take).
fn stride_indices(n: usize, take: usize) -> Vec<usize> {
    if take >= n {
        (0..n).collect()
    } else {
        (0..take).map(|i| i * n / take).collect()
    }
}

/// Assembles the design matrix and label vector for one detector.
///
/// Rows follow the canonical window order: frames in lexicographic order,
/// then detections in input order within each frame. Frames absent from the
/// ground truth contribute label 0 for all their windows.
pub fn build_training_set(
    dets: &DetectionSet,
    gts: &[GroundTruthBox],
    images: &dyn ImageSource,
    extractor: &FeatureExtractor,
    options: &TrainOptions,
) -> Result<(Array2<f64>, Array1<f64>), TrainError> {
    if dets.is_empty() {
        return Err(TrainError::EmptySet {
            detector_id: dets.detector_id().to_string(),
        });
    }
    let mut gts_by_frame: HashMap<&str, Vec<&GroundTruthBox>> = HashMap::new();
    for gt in gts {
        gts_by_frame.entry(gt.frame_id.as_str()).or_default().push(gt);
    }

    let windows: Vec<(&str, &BoundingBox)> = dets
        .frames()
        .flat_map(|(frame_id, dets)| dets.iter().map(move |d| (frame_id, d.bbox())))
        .collect();
    let selected = match options.max_windows {
        Some(cap) => stride_indices(windows.len(), cap),
        None => (0..windows.len()).collect(),
    };

    let empty = Vec::new();
    let mut rows: Vec<f64> = Vec::new();
    let mut labels: Vec<f64> = Vec::with_capacity(selected.len());
    let mut dims = 0usize;
    let mut cached: Option<(&str, crate::features::GrayImage)> = None;
    for &idx in &selected {
        let (frame_id, bbox) = windows[idx];
        let image = if extractor.needs_images() {
            if cached.as_ref().map(|(f, _)| *f) != Some(frame_id) {
                cached = Some((frame_id, images.image(frame_id)?));
            }
            cached.as_ref().map(|(_, img)| img)
        } else {
            None
        };
        let mut features = extractor.extract(image, frame_id, bbox)?;
        if options.normalize_features {
            features = features.normalized();
        }
        dims = features.values().len();
        rows.extend_from_slice(features.values());
        let frame_gts = gts_by_frame.get(frame_id).unwrap_or(&empty);
        labels.push(label_window(bbox, frame_gts));
    }

    let x = Array2::from_shape_vec((selected.len(), dims), rows)
        .expect("row-major training matrix dimensions are consistent");
    Ok((x, Array1::from_vec(labels)))
}

/// Fits the content-scoring model for one detector: builds its training set
/// and runs the regression with `k` latent components. The returned model is
/// stamped with the descriptor kind and normalization flag so that
/// prediction at fusion time reproduces the training-time pipeline.
pub fn train_detector_model(
    dets: &DetectionSet,
    gts: &[GroundTruthBox],
    images: &dyn ImageSource,
    extractor: &FeatureExtractor,
    k: usize,
    options: &TrainOptions,
) -> Result<PlsModel, TrainError> {
    let (x, y) = build_training_set(dets, gts, images, extractor, options)?;
    let model = fit_with(&x, &y, k, &options.fit).map_err(|e| match e {
        PlsError::ConstantTarget(value) => TrainError::DegenerateTarget {
            detector_id: dets.detector_id().to_string(),
            value,
        },
        other => TrainError::Pls(other),
    })?;
    Ok(model
        .with_feature_tag(extractor.tag())
        .with_normalize_features(options.normalize_features))
}
