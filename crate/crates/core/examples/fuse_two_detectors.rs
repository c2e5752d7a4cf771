//! Minimal end-to-end use of the library API: synthesize a few frames for
//! two detectors, calibrate the support detector against the root, fuse with
//! overlap weighting, and score the result.
//!
//! Run with: `cargo run --example fuse_two_detectors`

use detfuse::synth::{generate_scene, mix_seeds, simulate_detector, DetectorProfile, SceneConfig};
use detfuse::{
    det_curve, fit_calibration, fuse_sc, log_average_miss_rate, CalibrationSet, DetectionSet,
    FusionConfig,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scene_cfg = SceneConfig::default();
    let root_profile = DetectorProfile {
        detector_id: "root_det".into(),
        tp_rate: 0.9,
        fp_rate_per_class: [("tree".to_string(), 0.5)].into_iter().collect(),
        localization_sigma: 1.5,
        score_tp: (0.8, 0.08),
        score_fp: (0.6, 0.08),
        rng_seed: 1,
    };
    let support_profile = DetectorProfile {
        detector_id: "det_a".into(),
        rng_seed: 2,
        ..root_profile.clone()
    };

    let mut root = DetectionSet::new("root_det")?;
    let mut support = DetectionSet::new("det_a")?;
    let mut gts = Vec::new();
    for i in 0..20 {
        let scene = generate_scene(mix_seeds(7, i), &format!("f{i:04}"), &scene_cfg)?;
        gts.extend(scene.gts.iter().cloned());
        for d in simulate_detector(&root_profile, &scene)?.iter() {
            root.push(d.clone())?;
        }
        for d in simulate_detector(&support_profile, &scene)?.iter() {
            support.push(d.clone())?;
        }
    }

    let root_scores: Vec<f64> = root.iter().map(|d| d.score()).collect();
    let support_scores: Vec<f64> = support.iter().map(|d| d.score()).collect();
    let mut cals = CalibrationSet::new();
    cals.insert(fit_calibration("det_a", &support_scores, &root_scores)?);

    let supports = [support];
    let fused = fuse_sc(&root, &supports, &cals, &FusionConfig::default())?;

    let before = log_average_miss_rate(&det_curve(&root, &gts, 0.5)?);
    let after = log_average_miss_rate(&det_curve(&fused, &gts, 0.5)?);
    println!("root alone: lamr {before:.2}");
    println!("fused ({} of {} windows kept): lamr {after:.2}", fused.len(), root.len());
    Ok(())
}
