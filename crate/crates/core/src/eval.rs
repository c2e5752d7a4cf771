//! Detection quality evaluation: greedy matching against ground truth,
//! miss-rate versus false-positives-per-image curves, and the log-average
//! miss rate summary number (lower is better).
//!
//! Matching is greedy per frame in descending score order: each detection
//! takes the unmatched, non-ignored ground-truth box it overlaps most
//! (at or above the overlap threshold). A detection that only overlaps
//! ignore-flagged ground truth is neither a true nor a false positive.
//! The curve sweeps a score threshold over every distinct detection score;
//! the summary samples it at nine reference FPPI values spaced log-uniformly
//! in [0.01, 1] with a right-continuous step rule.

use std::collections::{BTreeSet, HashMap};
use std::io::{self, Write};

use thiserror::Error;

use crate::geometry::jaccard;
use crate::model_io::{Detection, DetectionSet, GroundTruthBox};

/// Miss-rate samples are floored at this value before taking logs, so a
/// perfect detector yields a finite (0.001%) summary instead of -inf.
pub const MISS_RATE_FLOOR: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("overlap threshold {0} is outside (0, 1]")]
    InvalidThreshold(f64),
    #[error("no non-ignored ground-truth boxes: miss rate is undefined")]
    NoGroundTruth,
}

/// Miss rate as a function of false positives per image, swept over all
/// distinct detection score thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalCurve {
    /// `(fppi, miss_rate)` points with strictly increasing fppi.
    pub points: Vec<(f64, f64)>,
    /// Number of frames in the union of detection and ground-truth frames
    /// (the FPPI denominator).
    pub n_frames: usize,
    /// Number of non-ignored ground-truth boxes (the miss-rate denominator).
    pub n_gt: usize,
}

/// The nine reference FPPI values 10^(-2 + k/4), k = 0..8, at which the
/// log-average miss rate samples the curve.
pub fn reference_fppi() -> [f64; 9] {
    std::array::from_fn(|k| 10f64.powf(-2.0 + k as f64 / 4.0))
}

fn validate_threshold(iou_threshold: f64) -> Result<(), EvalError> {
    if !iou_threshold.is_finite() || iou_threshold <= 0.0 || iou_threshold > 1.0 {
        return Err(EvalError::InvalidThreshold(iou_threshold));
    }
    Ok(())
}

/// Greedy matching of one frame's detections against its ground truth.
/// Returns `(true_positives, false_positives, missed_gt)`.
pub fn match_frame(
    dets: &[Detection],
    gts: &[GroundTruthBox],
    iou_threshold: f64,
) -> Result<(usize, usize, usize), EvalError> {
    validate_threshold(iou_threshold)?;
    let det_refs: Vec<&Detection> = dets.iter().collect();
    let gt_refs: Vec<&GroundTruthBox> = gts.iter().collect();
    Ok(match_refs(&det_refs, &gt_refs, iou_threshold))
}

fn match_refs(
    dets: &[&Detection],
    gts: &[&GroundTruthBox],
    iou_threshold: f64,
) -> (usize, usize, usize) {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score()
            .partial_cmp(&dets[a].score())
            .expect("detection scores are finite")
            .then(a.cmp(&b))
    });

    let mut taken = vec![false; gts.len()];
    let (mut tp, mut fp) = (0usize, 0usize);
    for di in order {
        let d = &dets[di];
        // Best unmatched, non-ignored ground truth at or above the
        // threshold; ties go to the earliest box in input order.
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if gt.ignore || taken[gi] {
                continue;
            }
            let j = jaccard(d.bbox(), &gt.bbox);
            if j >= iou_threshold && best.is_none_or(|(_, bj)| j > bj) {
                best = Some((gi, j));
            }
        }
        if let Some((gi, _)) = best {
            taken[gi] = true;
            tp += 1;
            continue;
        }
        // Detections explained by an ignore region are neither hits nor
        // false alarms, and ignore regions are never consumed.
        let ignored = gts
            .iter()
            .any(|gt| gt.ignore && jaccard(d.bbox(), &gt.bbox) >= iou_threshold);
        if !ignored {
            fp += 1;
        }
    }
    let missed = gts
        .iter()
        .enumerate()
        .filter(|(gi, gt)| !gt.ignore && !taken[*gi])
        .count();
    (tp, fp, missed)
}

/// Sweeps a score threshold over all distinct detection scores and records
/// the (FPPI, miss rate) operating point at each, collapsing duplicate FPPI
/// values to their best (lowest) miss rate.
pub fn det_curve(
    dets: &DetectionSet,
    gts: &[GroundTruthBox],
    iou_threshold: f64,
) -> Result<EvalCurve, EvalError> {
    validate_threshold(iou_threshold)?;
    let n_gt = gts.iter().filter(|g| !g.ignore).count();
    if n_gt == 0 {
        return Err(EvalError::NoGroundTruth);
    }
    let mut frames: BTreeSet<&str> = dets.frame_ids().collect();
    let mut gts_by_frame: HashMap<&str, Vec<&GroundTruthBox>> = HashMap::new();
    for gt in gts {
        frames.insert(gt.frame_id.as_str());
        gts_by_frame.entry(gt.frame_id.as_str()).or_default().push(gt);
    }
    let n_frames = frames.len();

    if dets.is_empty() {
        return Ok(EvalCurve { points: vec![(0.0, 1.0)], n_frames, n_gt });
    }

    let mut thresholds: Vec<f64> = dets.iter().map(Detection::score).collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).expect("scores are finite"));
    thresholds.dedup();

    let empty = Vec::new();
    let mut points: Vec<(f64, f64)> = Vec::with_capacity(thresholds.len());
    for &t in &thresholds {
        let (mut fp_total, mut missed_total) = (0usize, 0usize);
        for frame in &frames {
            let kept: Vec<&Detection> =
                dets.frame(frame).iter().filter(|d| d.score() >= t).collect();
            let frame_gts = gts_by_frame.get(frame).unwrap_or(&empty);
            let (_, fp, missed) = match_refs(&kept, frame_gts, iou_threshold);
            fp_total += fp;
            missed_total += missed;
        }
        points.push((
            fp_total as f64 / n_frames as f64,
            missed_total as f64 / n_gt as f64,
        ));
    }

    points.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("fppi is finite"));
    let mut collapsed: Vec<(f64, f64)> = Vec::with_capacity(points.len());
    for (fppi, miss) in points {
        match collapsed.last_mut() {
            Some((last_fppi, last_miss)) if *last_fppi == fppi => {
                *last_miss = last_miss.min(miss);
            }
            _ => collapsed.push((fppi, miss)),
        }
    }
    Ok(EvalCurve { points: collapsed, n_frames, n_gt })
}

/// Samples the curve at the nine reference FPPI values (right-continuous
/// step: the miss rate of the largest curve fppi at or below the reference,
/// or the first point's miss rate when the reference lies below the curve),
/// floors each sample at [`MISS_RATE_FLOOR`], and returns the geometric mean
/// as a percentage.
pub fn log_average_miss_rate(curve: &EvalCurve) -> f64 {
    assert!(!curve.points.is_empty(), "cannot summarize an empty curve");
    let mut log_sum = 0.0;
    for reference in reference_fppi() {
        let mut sample = curve.points[0].1;
        for &(fppi, miss) in &curve.points {
            if fppi <= reference {
                sample = miss;
            } else {
                break;
            }
        }
        log_sum += sample.max(MISS_RATE_FLOOR).ln();
    }
    (log_sum / 9.0).exp() * 100.0
}

/// Writes the curve as CSV: a `fppi,miss_rate` header, one row per point,
/// and a trailing `lamr,<percentage>` row (two decimals).
pub fn write_curve_csv<W: Write>(curve: &EvalCurve, sink: &mut W) -> io::Result<()> {
    writeln!(sink, "fppi,miss_rate")?;
    for (fppi, miss) in &curve.points {
        writeln!(sink, "{fppi},{miss}")?;
    }
    writeln!(sink, "lamr,{:.2}", log_average_miss_rate(curve))
}

const SVG_WIDTH: f64 = 640.0;
const SVG_HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 30.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 50.0;
const X_DOMAIN: (f64, f64) = (1e-3, 1e1);
const Y_DOMAIN: (f64, f64) = (1e-2, 1e0);
const CURVE_COLORS: [&str; 6] =
    ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn x_pos(fppi: f64) -> f64 {
    let clamped = fppi.clamp(X_DOMAIN.0, X_DOMAIN.1);
    let t = (clamped.log10() - X_DOMAIN.0.log10()) / (X_DOMAIN.1.log10() - X_DOMAIN.0.log10());
    MARGIN_LEFT + t * (SVG_WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
}

fn y_pos(miss: f64) -> f64 {
    let clamped = miss.clamp(Y_DOMAIN.0, Y_DOMAIN.1);
    let t = (clamped.log10() - Y_DOMAIN.0.log10()) / (Y_DOMAIN.1.log10() - Y_DOMAIN.0.log10());
    SVG_HEIGHT - MARGIN_BOTTOM - t * (SVG_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
}

/// Renders one or more labeled curves as a log-log SVG plot with gridlines
/// at the nine reference FPPI values. Each legend entry carries the curve's
/// log-average miss rate.
pub fn write_curves_svg<W: Write>(
    curves: &[(&str, &EvalCurve)],
    sink: &mut W,
) -> io::Result<()> {
    let (x0, x1) = (MARGIN_LEFT, SVG_WIDTH - MARGIN_RIGHT);
    let (y0, y1) = (MARGIN_TOP, SVG_HEIGHT - MARGIN_BOTTOM);
    writeln!(
        sink,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_WIDTH}\" height=\"{SVG_HEIGHT}\" \
         viewBox=\"0 0 {SVG_WIDTH} {SVG_HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">"
    )?;
    writeln!(sink, "<rect width=\"{SVG_WIDTH}\" height=\"{SVG_HEIGHT}\" fill=\"white\"/>")?;
    writeln!(
        sink,
        "<rect x=\"{x0}\" y=\"{y0}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>",
        x1 - x0,
        y1 - y0
    )?;

    for reference in reference_fppi() {
        let x = x_pos(reference);
        writeln!(
            sink,
            "<line class=\"ref\" x1=\"{x:.2}\" y1=\"{y0}\" x2=\"{x:.2}\" y2=\"{y1}\" \
             stroke=\"#cccccc\" stroke-dasharray=\"3,3\"/>"
        )?;
    }
    for exp in [-2i32, -1, 0] {
        let v = 10f64.powi(exp);
        let y = y_pos(v);
        writeln!(
            sink,
            "<line x1=\"{x0}\" y1=\"{y:.2}\" x2=\"{x1}\" y2=\"{y:.2}\" stroke=\"#eeeeee\"/>"
        )?;
        writeln!(
            sink,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{v}</text>",
            x0 - 8.0,
            y + 4.0
        )?;
    }
    for exp in [-3i32, -2, -1, 0, 1] {
        let v = 10f64.powi(exp);
        let x = x_pos(v);
        writeln!(
            sink,
            "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{v}</text>",
            y1 + 18.0
        )?;
    }
    writeln!(
        sink,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">false positives per image</text>",
        (x0 + x1) / 2.0,
        SVG_HEIGHT - 12.0
    )?;
    writeln!(
        sink,
        "<text x=\"16\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.2})\">\
         miss rate</text>",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    )?;

    for (i, (label, curve)) in curves.iter().enumerate() {
        let color = CURVE_COLORS[i % CURVE_COLORS.len()];
        // Right-continuous steps: hold each miss rate until the next point.
        let mut path = String::new();
        for (pi, &(fppi, miss)) in curve.points.iter().enumerate() {
            let (x, y) = (x_pos(fppi), y_pos(miss));
            if pi == 0 {
                path.push_str(&format!("M {x:.2} {y:.2}"));
            } else {
                path.push_str(&format!(" H {x:.2} V {y:.2}"));
            }
        }
        if !curve.points.is_empty() {
            path.push_str(&format!(" H {:.2}", x_pos(X_DOMAIN.1)));
        }
        writeln!(
            sink,
            "<path class=\"curve\" d=\"{path}\" fill=\"none\" stroke=\"{color}\" \
             stroke-width=\"2\"/>"
        )?;
        let ly = y0 + 18.0 + 18.0 * i as f64;
        writeln!(
            sink,
            "<line x1=\"{:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{color}\" \
             stroke-width=\"2\"/>",
            x0 + 12.0,
            x0 + 40.0
        )?;
        writeln!(
            sink,
            "<text x=\"{:.2}\" y=\"{:.2}\">{label} ({:.2}%)</text>",
            x0 + 46.0,
            ly + 4.0,
            log_average_miss_rate(curve)
        )?;
    }
    writeln!(sink, "</svg>")
}
