//! Histogram-of-oriented-gradients descriptor over the canonical 64x128
//! patch: 8x8-pixel cells, 9 unsigned orientation bins over 0-180 degrees,
//! 2x2-cell blocks at 8-pixel stride, per-block L2 normalization.

use super::{DescriptorTag, FeatureVector, WindowPatch, PATCH_HEIGHT, PATCH_WIDTH};

const CELL: usize = 8;
/// Orientation bins per cell histogram.
pub const BINS: usize = 9;
const CELLS_X: usize = PATCH_WIDTH / CELL; // 8
const CELLS_Y: usize = PATCH_HEIGHT / CELL; // 16
const BLOCKS_X: usize = CELLS_X - 1; // 7
const BLOCKS_Y: usize = CELLS_Y - 1; // 15
const BLOCK_LEN: usize = 4 * BINS; // 36
const NORM_EPS: f64 = 1e-6;

/// Length of the HOG descriptor: 7 x 15 blocks x 36 entries.
pub const HOG_DIMS: usize = BLOCKS_X * BLOCKS_Y * BLOCK_LEN;

/// Computes the HOG descriptor.
///
/// Gradients use centered differences `[-1, 0, 1]` with edge clamping.
/// Orientation is the *edge* direction (perpendicular to the gradient
/// vector), folded into [0, 180): a vertical step edge votes at 90 degrees.
/// Each pixel votes its gradient magnitude bilinearly into the two bins
/// whose centers (bin b at (b + 0.5) * 20 degrees) straddle its orientation,
/// wrapping between the first and last bin. Blocks are laid out row-major;
/// within a block, cells are row-major, each contributing its 9 bins.
pub fn hog(patch: &WindowPatch) -> FeatureVector {
    let mut hist = vec![[0.0f64; BINS]; CELLS_X * CELLS_Y];
    for y in 0..PATCH_HEIGHT {
        for x in 0..PATCH_WIDTH {
            let xm = x.saturating_sub(1);
            let xp = (x + 1).min(PATCH_WIDTH - 1);
            let ym = y.saturating_sub(1);
            let yp = (y + 1).min(PATCH_HEIGHT - 1);
            let gx = patch.get(xp, y) - patch.get(xm, y);
            let gy = patch.get(x, yp) - patch.get(x, ym);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let ang = (gy.atan2(gx).to_degrees() + 90.0).rem_euclid(180.0);
            let pos = ang / 20.0 - 0.5;
            let lower = pos.floor();
            let frac = pos - lower;
            let b0 = (lower as i32).rem_euclid(BINS as i32) as usize;
            let b1 = (b0 + 1) % BINS;
            let cell = (y / CELL) * CELLS_X + (x / CELL);
            hist[cell][b0] += mag * (1.0 - frac);
            hist[cell][b1] += mag * frac;
        }
    }

    let mut values = Vec::with_capacity(HOG_DIMS);
    for by in 0..BLOCKS_Y {
        for bx in 0..BLOCKS_X {
            let mut block = [0.0f64; BLOCK_LEN];
            for cy in 0..2 {
                for cx in 0..2 {
                    let cell = (by + cy) * CELLS_X + (bx + cx);
                    let at = (cy * 2 + cx) * BINS;
                    block[at..at + BINS].copy_from_slice(&hist[cell]);
                }
            }
            let norm_sq: f64 = block.iter().map(|v| v * v).sum();
            let denom = (norm_sq + NORM_EPS * NORM_EPS).sqrt();
            values.extend(block.iter().map(|v| v / denom));
        }
    }
    FeatureVector::new(values, DescriptorTag::Hog).expect("HOG output is finite by construction")
}
