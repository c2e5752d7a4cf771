//! Command-line driver for the `detfuse` binary.
//!
//! Subcommands cover the whole pipeline: `synth` builds a reproducible
//! dataset, `train` fits per-detector content models, `calib` fits score
//! calibration maps, `fuse` combines detector outputs, `eval` scores them,
//! and `plot` renders miss-rate curves. Every flag may instead come from a
//! TOML config bundle (`--config`); explicit flags override bundle values.
//!
//! Exit codes: 0 on success, 1 for runtime/data errors (unreadable files,
//! missing frames, degenerate inputs), 2 for usage/config errors (missing
//! or invalid flags, malformed bundles).

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::calibration::{fit_calibration, CalibrationSet};
use crate::config::ConfigBundle;
use crate::eval::{det_curve, log_average_miss_rate, write_curve_csv, write_curves_svg, EvalCurve};
use crate::features::{
    load_precomputed, DescriptorTag, FeatureExtractor, GrayImage, ImageDir, ImageError,
    ImageSource,
};
use crate::fusion::{fuse_csbc, fuse_sc, DetectorModel, FusionConfig, FusionMode, SupportPolicy};
use crate::geometry::greedy_nms;
use crate::model_io::{
    read_detections_file, read_ground_truth_file, write_detections_file, write_ground_truth_file,
    DetectionSet, GroundTruthBox,
};
use crate::pls::{FitOptions, PlsModel};
use crate::synth::{frame_name, generate_scene, mix_seeds, simulate_detector};
use crate::trainer::{train_detector_model, TrainOptions};

/// Marker for errors caused by how the tool was invoked (bad flags or a bad
/// config bundle) rather than by the data it operated on. Mapped to exit
/// code 2; everything else exits 1.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(message: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(message.into()))
}

/// Parses the command line, runs the selected command, and returns the
/// process exit code.
pub fn run() -> i32 {
    // Clap itself exits 2 on unparsable flags and 0 for --help/--version.
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.downcast_ref::<UsageError>().is_some() {
                2
            } else {
                1
            }
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "detfuse",
    version,
    about = "Fuse bounding-box outputs of multiple object detectors"
)]
struct Cli {
    /// TOML config bundle supplying defaults for any flag.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset: images, ground truth, and one
    /// detection file per configured detector profile.
    Synth(SynthArgs),
    /// Fit one content model per detection file against ground truth.
    Train(TrainArgs),
    /// Fit affine score-calibration maps onto a root detector's scale.
    Calib(CalibArgs),
    /// Rescore a root detector's windows using support detectors.
    Fuse(FuseArgs),
    /// Score detections against ground truth (miss-rate curve + LAMR).
    Eval(EvalArgs),
    /// Render one or more miss-rate curve CSVs into a single SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Master seed; every frame and detector stream derives from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of frames to generate.
    #[arg(long)]
    frames: Option<usize>,
    /// Output directory (created if absent).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Detection file; repeat for several detectors. The file stem is the
    /// detector id.
    #[arg(long = "detections", value_name = "FILE")]
    detections: Vec<PathBuf>,
    /// Ground-truth file for the training frames.
    #[arg(long, value_name = "FILE")]
    gt: Option<PathBuf>,
    /// Directory of frame images (`<frame_id>.pgm` or `.png`).
    #[arg(long, value_name = "DIR")]
    images: Option<PathBuf>,
    /// Descriptor: hog, glcm, gray, hog+glcm, or external:<table-file>.
    #[arg(long)]
    feature: Option<String>,
    /// Number of latent regression components.
    #[arg(long)]
    components: Option<usize>,
    /// Output directory for model files and the manifest.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Cap on training windows per detector (deterministic subsampling).
    #[arg(long, value_name = "N")]
    max_windows: Option<usize>,
    /// L2-normalize descriptor rows before fitting (true/false).
    #[arg(long, value_name = "BOOL")]
    normalize_features: Option<bool>,
    /// Scale feature columns to unit variance before fitting (true/false).
    #[arg(long, value_name = "BOOL")]
    pls_scale: Option<bool>,
}

#[derive(Debug, Args)]
struct CalibArgs {
    /// Root detector's detections on the calibration split (the reference
    /// score scale).
    #[arg(long, value_name = "FILE")]
    root: Option<PathBuf>,
    /// Support detector's detections on the same split; repeatable.
    #[arg(long = "support", value_name = "FILE")]
    support: Vec<PathBuf>,
    /// Output calibration file (TOML).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FuseArgs {
    /// Root detector's detection file (defines the output windows).
    #[arg(long, value_name = "FILE")]
    root: Option<PathBuf>,
    /// Support detector's detection file; repeatable.
    #[arg(long = "support", value_name = "FILE")]
    support: Vec<PathBuf>,
    /// Directory of trained content models (csbc mode).
    #[arg(long, value_name = "DIR")]
    models: Option<PathBuf>,
    /// Calibration file fitted by `calib`.
    #[arg(long, value_name = "FILE")]
    calib: Option<PathBuf>,
    /// Directory of frame images (csbc mode with pixel descriptors).
    #[arg(long, value_name = "DIR")]
    images: Option<PathBuf>,
    /// Feature table for models stamped `external`: external:<table-file>.
    #[arg(long)]
    feature: Option<String>,
    /// Fusion mode: sc or csbc.
    #[arg(long)]
    mode: Option<String>,
    /// Minimum Jaccard overlap for support.
    #[arg(long, value_name = "T")]
    overlap: Option<f64>,
    /// Content-weight clamp as `lo,hi`.
    #[arg(long, value_name = "LO,HI")]
    clamp: Option<String>,
    /// Support policy: all_windows or best_per_detector.
    #[arg(long)]
    support_policy: Option<String>,
    /// Additionally multiply content weights by the overlap (true/false).
    #[arg(long, value_name = "BOOL")]
    multiply_jaccard: Option<bool>,
    /// Apply per-frame non-maximum suppression at this overlap before
    /// writing (off by default).
    #[arg(long, value_name = "T")]
    nms: Option<f64>,
    /// Output detection file.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Detection file to score.
    #[arg(long, value_name = "FILE")]
    detections: Option<PathBuf>,
    /// Ground-truth file.
    #[arg(long, value_name = "FILE")]
    gt: Option<PathBuf>,
    /// Jaccard threshold for a detection to match a ground truth.
    #[arg(long, value_name = "T")]
    iou: Option<f64>,
    /// Output CSV (miss rate vs FPPI, trailing LAMR line).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Also render the curve to this SVG file.
    #[arg(long, value_name = "FILE")]
    svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// Curve CSV as `name=path` (name optional: `path` uses the file stem);
    /// repeatable.
    #[arg(long = "curve", value_name = "NAME=CSV")]
    curve: Vec<String>,
    /// Output SVG file.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

fn dispatch(cli: Cli) -> Result<()> {
    let bundle = match &cli.config {
        Some(path) => ConfigBundle::load(path).map_err(|e| usage(e.to_string()))?,
        None => ConfigBundle::default(),
    };
    match cli.command {
        Command::Synth(args) => cmd_synth(&bundle, args),
        Command::Train(args) => cmd_train(&bundle, args),
        Command::Calib(args) => cmd_calib(&bundle, args),
        Command::Fuse(args) => cmd_fuse(&bundle, args),
        Command::Eval(args) => cmd_eval(&bundle, args),
        Command::Plot(args) => cmd_plot(&bundle, args),
    }
}

// ---- flag/bundle resolution helpers ----

fn pick<T: Clone>(flag: &Option<T>, bundle: &Option<T>) -> Option<T> {
    flag.clone().or_else(|| bundle.clone())
}

fn need<T: Clone>(flag: &Option<T>, bundle: &Option<T>, what: &str) -> Result<T> {
    pick(flag, bundle).ok_or_else(|| usage(format!("{what} is required (flag or config bundle)")))
}

fn pick_list(flag: &[PathBuf], bundle: &[PathBuf]) -> Vec<PathBuf> {
    if flag.is_empty() { bundle.to_vec() } else { flag.to_vec() }
}

/// Detector id for a detection file: its file stem.
fn file_stem(path: &Path) -> Result<String> {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .filter(|s| !s.is_empty())
        .ok_or_else(|| usage(format!("cannot derive a detector id from path {}", path.display())))
}

fn parse_clamp(text: &str) -> Result<(f64, f64)> {
    let (lo, hi) = text
        .split_once(',')
        .ok_or_else(|| usage(format!("--clamp expects `lo,hi`, got {text:?}")))?;
    let parse = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| usage(format!("--clamp expects numbers, got {text:?}")))
    };
    Ok((parse(lo)?, parse(hi)?))
}

/// Builds the extractor for a `--feature` value. Pixel descriptors come
/// from their tag; `external:<file>` loads a precomputed feature table.
fn parse_feature(spec: &str) -> Result<FeatureExtractor> {
    if let Some(path) = spec.strip_prefix("external:") {
        let file = File::open(path)
            .with_context(|| format!("cannot open feature table {path}"))?;
        let table = load_precomputed(BufReader::new(file))
            .with_context(|| format!("cannot parse feature table {path}"))?;
        return Ok(FeatureExtractor::Precomputed(table));
    }
    let tag = DescriptorTag::from_str(spec).map_err(|e| usage(e.to_string()))?;
    FeatureExtractor::from_tag(tag)
        .ok_or_else(|| usage("feature `external` needs a table: use external:<file>".to_string()))
}

/// Image source for commands where pixels may be unnecessary: a real
/// directory when given, otherwise a source that errors on first use.
struct NoImages;

impl ImageSource for NoImages {
    fn image(&self, frame_id: &str) -> Result<GrayImage, ImageError> {
        Err(ImageError::MissingImage { frame_id: frame_id.to_string(), dir: "<none>".into() })
    }
}

fn image_source(dir: &Option<PathBuf>) -> Box<dyn ImageSource> {
    match dir {
        Some(d) => Box::new(ImageDir::new(d)),
        None => Box::new(NoImages),
    }
}

// ---- synth ----

fn cmd_synth(bundle: &ConfigBundle, args: SynthArgs) -> Result<()> {
    let seed = need(&args.seed, &bundle.synth.seed, "--seed")?;
    let frames = need(&args.frames, &bundle.synth.frames, "--frames")?;
    let out = need(&args.out, &bundle.synth.out, "--out")?;
    let scene_cfg = &bundle.synth.scene;
    let profiles = &bundle.synth.detector;
    scene_cfg.validate().map_err(|e| usage(e.to_string()))?;
    for p in profiles {
        p.validate().map_err(|e| usage(e.to_string()))?;
    }
    let mut ids = std::collections::HashSet::new();
    for p in profiles {
        if !ids.insert(p.detector_id.as_str()) {
            return Err(usage(format!("duplicate detector profile {:?}", p.detector_id)));
        }
    }

    let image_dir = out.join("images");
    fs::create_dir_all(&image_dir)
        .with_context(|| format!("cannot create {}", image_dir.display()))?;
    let mut gts: Vec<GroundTruthBox> = Vec::new();
    let mut sets: Vec<DetectionSet> = profiles
        .iter()
        .map(|p| DetectionSet::new(&p.detector_id))
        .collect::<Result<_, _>>()?;

    for i in 0..frames {
        let frame_id = frame_name(i);
        let scene = generate_scene(mix_seeds(seed, i as u64), &frame_id, scene_cfg)?;
        crate::features::write_pgm_file(&scene.image, image_dir.join(format!("{frame_id}.pgm")))?;
        gts.extend(scene.gts.iter().cloned());
        for (profile, set) in profiles.iter().zip(&mut sets) {
            for det in simulate_detector(profile, &scene)?.iter() {
                set.push(det.clone())?;
            }
        }
    }

    write_ground_truth_file(&gts, out.join("gt.txt"))?;
    for set in &sets {
        write_detections_file(set, out.join(format!("{}.det", set.detector_id())))?;
    }
    println!(
        "wrote {frames} frames, {} ground-truth boxes, {} detector files to {}",
        gts.len(),
        sets.len(),
        out.display()
    );
    Ok(())
}

// ---- train ----

#[derive(serde::Serialize)]
struct Manifest<'a> {
    feature: &'a str,
    components: usize,
    normalize_features: bool,
    pls_scale: bool,
    model: Vec<ManifestEntry>,
}

#[derive(serde::Serialize)]
struct ManifestEntry {
    detector: String,
    file: String,
    rows: usize,
}

fn cmd_train(bundle: &ConfigBundle, args: TrainArgs) -> Result<()> {
    let detections = pick_list(&args.detections, &bundle.train.detections);
    if detections.is_empty() {
        return Err(usage("--detections is required (flag or config bundle)".to_string()));
    }
    let gt = need(&args.gt, &bundle.train.gt, "--gt")?;
    let feature = need(&args.feature, &bundle.train.feature, "--feature")?;
    let components = need(&args.components, &bundle.train.components, "--components")?;
    if components == 0 {
        return Err(usage("--components must be at least 1".to_string()));
    }
    let out = need(&args.out, &bundle.train.out, "--out")?;
    let images = pick(&args.images, &bundle.train.images);
    let extractor = parse_feature(&feature)?;
    if extractor.needs_images() && images.is_none() {
        return Err(usage(format!("--images is required for feature {feature}")));
    }
    let options = TrainOptions {
        max_windows: pick(&args.max_windows, &bundle.train.max_windows),
        normalize_features: pick(&args.normalize_features, &bundle.train.normalize_features)
            .unwrap_or(false),
        fit: FitOptions {
            scale: pick(&args.pls_scale, &bundle.train.pls_scale).unwrap_or(false),
        },
    };

    let gts = read_ground_truth_file(&gt)?;
    let source = image_source(&images);
    fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;

    let mut entries = Vec::new();
    for path in &detections {
        let set = read_detections_file(path, &file_stem(path)?)?;
        let rows = set.len().min(options.max_windows.unwrap_or(usize::MAX));
        let model =
            train_detector_model(&set, &gts, source.as_ref(), &extractor, components, &options)?;
        let file = format!("{}.plsmodel", set.detector_id());
        model.save_to_path(out.join(&file))?;
        println!("trained {}: {} windows -> {}", set.detector_id(), rows, file);
        entries.push(ManifestEntry { detector: set.detector_id().to_string(), file, rows });
    }
    let manifest = Manifest {
        feature: &feature,
        components,
        normalize_features: options.normalize_features,
        pls_scale: options.fit.scale,
        model: entries,
    };
    let text = toml::to_string(&manifest).expect("manifest serializes");
    fs::write(out.join("manifest.toml"), text)
        .with_context(|| format!("cannot write manifest to {}", out.display()))?;
    Ok(())
}

// ---- calib ----

fn cmd_calib(bundle: &ConfigBundle, args: CalibArgs) -> Result<()> {
    let root = need(&args.root, &bundle.calib.root, "--root")?;
    let support = pick_list(&args.support, &bundle.calib.support);
    if support.is_empty() {
        return Err(usage("--support is required (flag or config bundle)".to_string()));
    }
    let out = need(&args.out, &bundle.calib.out, "--out")?;

    let root_set = read_detections_file(&root, &file_stem(&root)?)?;
    let root_scores: Vec<f64> = root_set.iter().map(|d| d.score()).collect();
    let mut cals = CalibrationSet::new();
    for path in &support {
        let set = read_detections_file(path, &file_stem(path)?)?;
        let scores: Vec<f64> = set.iter().map(|d| d.score()).collect();
        let map = fit_calibration(set.detector_id(), &scores, &root_scores)?;
        cals.insert(map);
    }
    cals.save_to_path(&out)?;
    println!("calibrated {} detectors -> {}", cals.len(), out.display());
    Ok(())
}

// ---- fuse ----

fn cmd_fuse(bundle: &ConfigBundle, args: FuseArgs) -> Result<()> {
    let root = need(&args.root, &bundle.fuse.root, "--root")?;
    let support = pick_list(&args.support, &bundle.fuse.support);
    if support.is_empty() {
        return Err(usage("--support is required (flag or config bundle)".to_string()));
    }
    let calib = need(&args.calib, &bundle.fuse.calib, "--calib")?;
    let out = need(&args.out, &bundle.fuse.out, "--out")?;
    let mode_text = pick(&args.mode, &bundle.fuse.mode).unwrap_or_else(|| "sc".to_string());
    let mode = FusionMode::from_str(&mode_text).map_err(|e| usage(e.to_string()))?;
    let clamp = match &args.clamp {
        Some(text) => parse_clamp(text)?,
        None => bundle.fuse.clamp.unwrap_or((0.0, 1.0)),
    };
    let mut cfg = FusionConfig {
        mode,
        weight_clamp: clamp,
        ..FusionConfig::default()
    };
    if let Some(t) = pick(&args.overlap, &bundle.fuse.overlap) {
        cfg.overlap_threshold = t;
    }
    if let Some(p) = pick(&args.support_policy, &bundle.fuse.support_policy) {
        cfg.support_policy = SupportPolicy::from_str(&p).map_err(|e| usage(e.to_string()))?;
    }
    cfg.multiply_jaccard =
        pick(&args.multiply_jaccard, &bundle.fuse.multiply_jaccard).unwrap_or(false);
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let nms = pick(&args.nms, &bundle.fuse.nms);
    if let Some(t) = nms {
        if !(0.0..=1.0).contains(&t) {
            return Err(usage(format!("--nms threshold {t} is outside [0, 1]")));
        }
    }

    let root_set = read_detections_file(&root, &file_stem(&root)?)?;
    let mut support_sets = Vec::new();
    for path in &support {
        support_sets.push(read_detections_file(path, &file_stem(path)?)?);
    }
    let cals = CalibrationSet::load_from_path(&calib)?;

    let n_in = root_set.len();
    let mut fused = match mode {
        FusionMode::Sc => fuse_sc(&root_set, &support_sets, &cals, &cfg)?,
        FusionMode::Csbc => {
            let models_dir = pick(&args.models, &bundle.fuse.models)
                .ok_or_else(|| usage("mode csbc requires --models".to_string()))?;
            let feature = pick(&args.feature, &bundle.fuse.feature);
            let table = match &feature {
                Some(spec) if spec.starts_with("external:") => Some(parse_feature(spec)?),
                Some(other) => {
                    return Err(usage(format!(
                        "fuse derives pixel descriptors from each model; \
                         --feature only supplies external:<file>, got {other:?}"
                    )))
                }
                None => None,
            };
            let mut models = BTreeMap::new();
            let mut needs_images = false;
            for set in &support_sets {
                let path = models_dir.join(format!("{}.plsmodel", set.detector_id()));
                let model = PlsModel::load_from_path(&path)
                    .with_context(|| format!("cannot load model {}", path.display()))?;
                let extractor = if model.feature_tag() == DescriptorTag::External {
                    table.clone().ok_or_else(|| {
                        usage(format!(
                            "model {} is stamped `external`; supply --feature external:<file>",
                            path.display()
                        ))
                    })?
                } else {
                    FeatureExtractor::from_tag(model.feature_tag())
                        .expect("non-external tags have built-in extractors")
                };
                needs_images |= extractor.needs_images();
                models.insert(set.detector_id().to_string(), DetectorModel::new(model, extractor)?);
            }
            let images = pick(&args.images, &bundle.fuse.images);
            if needs_images && images.is_none() {
                return Err(usage(
                    "mode csbc with pixel descriptors requires --images".to_string(),
                ));
            }
            let source = image_source(&images);
            fuse_csbc(&root_set, &support_sets, &cals, &models, source.as_ref(), &cfg)?
        }
    };
    let n_discarded = n_in - fused.len();

    if let Some(t) = nms {
        let mut kept = DetectionSet::new(fused.detector_id())?;
        let frame_ids: Vec<String> = fused.frame_ids().map(str::to_string).collect();
        for frame_id in frame_ids {
            for det in greedy_nms(fused.frame(&frame_id), t)? {
                kept.push(det)?;
            }
        }
        fused = kept;
    }

    write_detections_file(&fused, &out)?;
    println!("{n_in} windows in, {n_discarded} discarded, {} out", fused.len());
    Ok(())
}

// ---- eval ----

fn cmd_eval(bundle: &ConfigBundle, args: EvalArgs) -> Result<()> {
    let detections = need(&args.detections, &bundle.eval.detections, "--detections")?;
    let gt = need(&args.gt, &bundle.eval.gt, "--gt")?;
    let out = need(&args.out, &bundle.eval.out, "--out")?;
    let iou = pick(&args.iou, &bundle.eval.iou).unwrap_or(0.5);
    if !(0.0 < iou && iou <= 1.0) {
        return Err(usage(format!("--iou {iou} is outside (0, 1]")));
    }
    let svg = pick(&args.svg, &bundle.eval.svg);

    let dets = read_detections_file(&detections, &file_stem(&detections)?)?;
    let gts = read_ground_truth_file(&gt)?;
    let curve = det_curve(&dets, &gts, iou)?;
    let lamr = log_average_miss_rate(&curve);

    let mut csv = BufWriter::new(
        File::create(&out).with_context(|| format!("cannot create {}", out.display()))?,
    );
    write_curve_csv(&curve, &mut csv)?;
    csv.flush()?;
    if let Some(svg_path) = svg {
        let mut sink = BufWriter::new(
            File::create(&svg_path)
                .with_context(|| format!("cannot create {}", svg_path.display()))?,
        );
        write_curves_svg(&[(dets.detector_id(), &curve)], &mut sink)?;
        sink.flush()?;
    }
    println!(
        "lamr {lamr:.2} over {} frames, {} ground truths -> {}",
        curve.n_frames,
        curve.n_gt,
        out.display()
    );
    Ok(())
}

// ---- plot ----

/// Reads a curve CSV written by `eval` back into points. The trailing
/// `lamr,...` line is ignored (the plot recomputes it from the points).
fn read_curve_csv(path: &Path) -> Result<EvalCurve> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("fppi,miss_rate") => {}
        other => anyhow::bail!(
            "{} is not a curve CSV (expected `fppi,miss_rate` header, got {other:?})",
            path.display()
        ),
    }
    let mut points = Vec::new();
    for line in lines {
        if line.is_empty() || line.starts_with("lamr,") {
            continue;
        }
        let (a, b) = line
            .split_once(',')
            .ok_or_else(|| anyhow::anyhow!("malformed curve row {line:?} in {}", path.display()))?;
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| anyhow::anyhow!("malformed number {s:?} in {}", path.display()))
        };
        points.push((parse(a)?, parse(b)?));
    }
    if points.is_empty() {
        anyhow::bail!("{} contains no curve points", path.display());
    }
    Ok(EvalCurve { points, n_frames: 0, n_gt: 0 })
}

fn cmd_plot(bundle: &ConfigBundle, args: PlotArgs) -> Result<()> {
    let specs = if args.curve.is_empty() { bundle.plot.curve.clone() } else { args.curve };
    if specs.is_empty() {
        return Err(usage("--curve is required (flag or config bundle)".to_string()));
    }
    let out = need(&args.out, &bundle.plot.out, "--out")?;

    let mut curves: Vec<(String, EvalCurve)> = Vec::new();
    for spec in &specs {
        let (name, path) = match spec.split_once('=') {
            Some((name, path)) => (name.to_string(), PathBuf::from(path)),
            None => {
                let path = PathBuf::from(spec);
                (file_stem(&path)?, path)
            }
        };
        curves.push((name, read_curve_csv(&path)?));
    }
    let named: Vec<(&str, &EvalCurve)> =
        curves.iter().map(|(name, curve)| (name.as_str(), curve)).collect();
    let mut sink = BufWriter::new(
        File::create(&out).with_context(|| format!("cannot create {}", out.display()))?,
    );
    write_curves_svg(&named, &mut sink)?;
    sink.flush()?;
    println!("plotted {} curves -> {}", curves.len(), out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamp_strings_parse_or_reject() {
        assert_eq!(parse_clamp("0,1").unwrap(), (0.0, 1.0));
        assert_eq!(parse_clamp("-0.5, 2.5").unwrap(), (-0.5, 2.5));
        assert!(parse_clamp("0").is_err());
        assert!(parse_clamp("a,b").is_err());
    }

    #[test]
    fn detector_ids_come_from_file_stems() {
        assert_eq!(file_stem(Path::new("runs/det_a.det")).unwrap(), "det_a");
        assert_eq!(file_stem(Path::new("det_b")).unwrap(), "det_b");
        assert!(file_stem(Path::new("")).is_err());
    }

    #[test]
    fn feature_specs_resolve_to_extractors() {
        assert_eq!(parse_feature("hog").unwrap().tag(), DescriptorTag::Hog);
        assert_eq!(parse_feature("hog+glcm").unwrap().tag(), DescriptorTag::HogGlcm);
        let err = parse_feature("sift").unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some(), "{err}");
        // `external` without a table is a usage error, not a data error.
        let err = parse_feature("external").unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some(), "{err}");
    }

    #[test]
    fn usage_errors_are_distinguishable_for_exit_codes() {
        let u = usage("bad flag");
        assert!(u.downcast_ref::<UsageError>().is_some());
        let r = anyhow::anyhow!("runtime failure");
        assert!(r.downcast_ref::<UsageError>().is_none());
    }

    #[test]
    fn curve_csv_round_trips_through_plot_reader() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        std::fs::write(&path, "fppi,miss_rate\n0,0.5\n0.25,0.25\nlamr,39.76\n").unwrap();
        let curve = read_curve_csv(&path).unwrap();
        assert_eq!(curve.points, vec![(0.0, 0.5), (0.25, 0.25)]);

        std::fs::write(&path, "not,a,curve\n").unwrap();
        assert!(read_curve_csv(&path).is_err());
        std::fs::write(&path, "fppi,miss_rate\nlamr,100.00\n").unwrap();
        assert!(read_curve_csv(&path).is_err(), "no points is an error");
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
