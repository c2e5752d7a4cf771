//! Late fusion of bounding-box outputs from multiple object detectors.
//!
//! One detector is designated the *root*; its windows are rescored by
//! accumulating evidence from overlapping windows produced by the other
//! detectors. Two fusion modes are provided:
//!
//! * **Spatial consensus** (`sc`) — each supporting window contributes its
//!   calibrated score weighted by its Jaccard overlap with the root window.
//! * **Content-weighted consensus** (`csbc`) — the Jaccard weight is replaced
//!   by a learned estimate of how much the supporting window actually looks
//!   like a true detection, predicted by a per-detector partial-least-squares
//!   regression over appearance descriptors (HOG, co-occurrence statistics,
//!   raw gray levels, or externally supplied features).
//!
//! The crate also ships the surrounding tooling needed to exercise the
//! pipeline end to end: detection/ground-truth file I/O, score calibration,
//! model training, miss-rate/FPPI evaluation with log-average miss rate, and
//! a deterministic synthetic scene generator for integration testing. The
//! `detfuse` binary exposes all of it on the command line.

pub mod calibration;
pub mod cli;
pub mod config;
pub mod eval;
pub mod features;
pub mod fusion;
pub mod geometry;
pub mod model_io;
pub mod pls;
pub mod synth;
pub mod trainer;

pub use calibration::{fit_calibration, CalibrationMap, CalibrationSet};
pub use config::ConfigBundle;
pub use eval::{det_curve, log_average_miss_rate, match_frame, EvalCurve};
pub use features::{extract_patch, DescriptorTag, FeatureExtractor, FeatureVector, WindowPatch};
pub use fusion::{
    find_support, fuse_csbc, fuse_sc, DetectorModel, FusionConfig, FusionMode, SupportPolicy,
};
pub use geometry::{greedy_nms, jaccard, BoundingBox};
pub use model_io::{
    read_detections_file, read_ground_truth_file, Detection, DetectionSet, GroundTruthBox,
};
pub use pls::{FitOptions, PlsModel};
pub use synth::{generate_scene, simulate_detector, DetectorProfile, Scene, SceneConfig};
pub use trainer::{build_training_set, train_detector_model, TrainOptions};
