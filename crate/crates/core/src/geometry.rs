//! Bounding-box algebra: areas, overlap, Jaccard coefficient, and greedy
//! non-maximum suppression.

use crate::model_io::Detection;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid bounding box (x={x}, y={y}, w={w}, h={h}): coordinates must be finite and w, h must be positive")]
    InvalidBox { x: f64, y: f64, w: f64, h: f64 },
    #[error("overlap threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
}

/// Axis-aligned box with real-valued pixel coordinates. `(x, y)` is the top
/// left corner; width and height are strictly positive, so every box has
/// nonzero area. Intersection uses half-open intervals: boxes that share only
/// an edge do not overlap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct BoundingBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

/// Serde proxy so deserialized boxes still pass through validation.
#[derive(Serialize, Deserialize)]
struct RawBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl TryFrom<RawBox> for BoundingBox {
    type Error = GeometryError;
    fn try_from(r: RawBox) -> Result<Self, Self::Error> {
        BoundingBox::new(r.x, r.y, r.w, r.h)
    }
}

impl From<BoundingBox> for RawBox {
    fn from(b: BoundingBox) -> Self {
        RawBox { x: b.x, y: b.y, w: b.w, h: b.h }
    }
}

impl BoundingBox {
    /// Rejects non-finite coordinates and non-positive extents rather than
    /// clamping them, so downstream area ratios are always well defined.
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        let finite = x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite();
        if !finite || w <= 0.0 || h <= 0.0 {
            return Err(GeometryError::InvalidBox { x, y, w, h });
        }
        Ok(BoundingBox { x, y, w, h })
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Right edge (exclusive).
    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    /// Bottom edge (exclusive).
    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let ix = (self.right().min(other.right()) - self.x.max(other.x)).max(0.0);
        let iy = (self.bottom().min(other.bottom()) - self.y.max(other.y)).max(0.0);
        ix * iy
    }
}

/// Jaccard coefficient (intersection over union) of two boxes. Symmetric,
/// in `[0, 1]`, exactly `1` for identical boxes and `0` for disjoint ones.
pub fn jaccard(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    // The union is derived from the same edge arithmetic as the intersection:
    // `(x + w) - x` and `w` can differ in the last bit, and mixing the two
    // would leave identical boxes with a ratio slightly off 1.
    let edge_area = |c: &BoundingBox| (c.right() - c.x) * (c.bottom() - c.y);
    inter / (edge_area(a) + edge_area(b) - inter)
}

/// Greedy non-maximum suppression over one detector's windows in one frame.
///
/// Detections are visited in descending score order (ties keep input order);
/// each kept window suppresses every remaining window whose Jaccard overlap
/// with it is `>= overlap_threshold`. The survivors are returned sorted by
/// descending score.
pub fn greedy_nms(
    dets: &[Detection],
    overlap_threshold: f64,
) -> Result<Vec<Detection>, GeometryError> {
    if !(0.0..=1.0).contains(&overlap_threshold) || overlap_threshold.is_nan() {
        return Err(GeometryError::InvalidThreshold(overlap_threshold));
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score()
            .partial_cmp(&dets[a].score())
            .expect("detection scores are finite")
            .then(a.cmp(&b))
    });
    let mut suppressed = vec![false; dets.len()];
    let mut kept = Vec::new();
    for (rank, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        kept.push(dets[i].clone());
        for &j in &order[rank + 1..] {
            if !suppressed[j] && jaccard(dets[i].bbox(), dets[j].bbox()) >= overlap_threshold {
                suppressed[j] = true;
            }
        }
    }
    Ok(kept)
}
