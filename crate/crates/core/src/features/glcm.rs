//! Gray-level co-occurrence descriptor: intensities quantized to 8 levels,
//! symmetric normalized co-occurrence matrices for 4 unit offsets, and 5
//! Haralick statistics per matrix.

use super::{DescriptorTag, FeatureVector, WindowPatch, PATCH_HEIGHT, PATCH_WIDTH};

pub const GLCM_LEVELS: usize = 8;

/// Offsets as (row delta, column delta) at distance 1.
pub const GLCM_OFFSETS: [(isize, isize); 4] = [(0, 1), (1, 0), (1, 1), (1, -1)];

/// Length of the descriptor: 4 offsets x 5 statistics.
pub const GLCM_DIMS: usize = GLCM_OFFSETS.len() * 5;

fn quantize(p: f64) -> usize {
    ((p * GLCM_LEVELS as f64).floor() as usize).min(GLCM_LEVELS - 1)
}

/// Symmetric, normalized co-occurrence matrix of the patch for one offset:
/// every in-range pixel pair `(p, p+offset)` is counted in both directions,
/// then the matrix is scaled to sum to 1.
pub fn cooccurrence_matrix(
    patch: &WindowPatch,
    offset: (isize, isize),
) -> [[f64; GLCM_LEVELS]; GLCM_LEVELS] {
    let (dy, dx) = offset;
    let mut m = [[0.0f64; GLCM_LEVELS]; GLCM_LEVELS];
    let mut total = 0.0;
    for y in 0..PATCH_HEIGHT as isize {
        for x in 0..PATCH_WIDTH as isize {
            let (ny, nx) = (y + dy, x + dx);
            if ny < 0 || nx < 0 || ny >= PATCH_HEIGHT as isize || nx >= PATCH_WIDTH as isize {
                continue;
            }
            let a = quantize(patch.get(x as usize, y as usize));
            let b = quantize(patch.get(nx as usize, ny as usize));
            m[a][b] += 1.0;
            m[b][a] += 1.0;
            total += 2.0;
        }
    }
    if total > 0.0 {
        for row in &mut m {
            for v in row {
                *v /= total;
            }
        }
    }
    m
}

/// Haralick statistics of one normalized co-occurrence matrix, in the order
/// `[contrast, correlation, energy, homogeneity, entropy]`. Entropy uses the
/// natural logarithm with `0 ln 0 = 0`. Correlation of a matrix whose
/// marginal variance is zero (a single occupied level) is defined as 1.
pub fn haralick_stats(m: &[[f64; GLCM_LEVELS]; GLCM_LEVELS]) -> [f64; 5] {
    let mut contrast = 0.0;
    let mut energy = 0.0;
    let mut homogeneity = 0.0;
    let mut entropy = 0.0;
    let mut marginal = [0.0f64; GLCM_LEVELS];
    for (i, row) in m.iter().enumerate() {
        for (j, &p) in row.iter().enumerate() {
            let d = i as f64 - j as f64;
            contrast += d * d * p;
            energy += p * p;
            homogeneity += p / (1.0 + d * d);
            if p > 0.0 {
                entropy -= p * p.ln();
            }
            marginal[i] += p;
        }
    }
    // The matrix is symmetric, so row and column marginals coincide.
    let mean: f64 = marginal.iter().enumerate().map(|(i, &p)| i as f64 * p).sum();
    let var: f64 = marginal
        .iter()
        .enumerate()
        .map(|(i, &p)| (i as f64 - mean) * (i as f64 - mean) * p)
        .sum();
    let correlation = if var <= 0.0 {
        1.0
    } else {
        let mut cov = 0.0;
        for (i, row) in m.iter().enumerate() {
            for (j, &p) in row.iter().enumerate() {
                cov += (i as f64 - mean) * (j as f64 - mean) * p;
            }
        }
        cov / var
    };
    [contrast, correlation, energy, homogeneity, entropy]
}

/// Computes the co-occurrence descriptor: for each offset in
/// [`GLCM_OFFSETS`] order, the 5 Haralick statistics of its matrix.
pub fn glcm(patch: &WindowPatch) -> FeatureVector {
    let mut values = Vec::with_capacity(GLCM_DIMS);
    for offset in GLCM_OFFSETS {
        values.extend(haralick_stats(&cooccurrence_matrix(patch, offset)));
    }
    FeatureVector::new(values, DescriptorTag::Glcm)
        .expect("co-occurrence statistics are finite by construction")
}
