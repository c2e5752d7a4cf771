//! Single-response partial-least-squares regression (PLS1, fitted by
//! NIPALS deflation). Used to learn, per support detector, how window
//! content maps to an overlap-with-truth weight.

use crate::features::{DescriptorTag, FeatureVector};
use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

/// Residual-covariance norm below which NIPALS stops adding components.
const EARLY_STOP_NORM: f64 = 1e-12;

const FORMAT_NAME: &str = "detfuse-pls-model";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PlsError {
    #[error("component count {k} out of range (valid 1..={max})")]
    InvalidComponentCount { k: usize, max: usize },
    #[error("need at least 2 training samples, got {0}")]
    TooFewSamples(usize),
    #[error("sample/response count mismatch: {rows} rows but {responses} responses")]
    SampleCountMismatch { rows: usize, responses: usize },
    #[error("target is constant ({0}); a constant response cannot be regressed")]
    ConstantTarget(f64),
    #[error("non-finite value in training data")]
    NonFiniteInput,
    #[error("dimension mismatch: model expects {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("input contains non-finite values")]
    NonFiniteQuery,
    #[error("features carry no covariance with the target; nothing to fit")]
    NoCovariance,
    #[error("feature tag mismatch: model expects '{expected}', got '{got}'")]
    TagMismatch { expected: DescriptorTag, got: DescriptorTag },
    #[error("model format error: {0}")]
    Format(String),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

/// Options controlling [`fit_with`].
#[derive(Debug, Clone, Copy, Default)]
pub struct FitOptions {
    /// Scale each centered feature column to unit sample variance before
    /// fitting (zero-variance columns are left unscaled). Off by default.
    pub scale: bool,
}

/// A fitted PLS1 regression: predicts a scalar response from a feature
/// vector via `y_mean + (x - x_mean) · B`. Also stores the per-component
/// weights/loadings so predictions can be reproduced through the latent
/// projection.
#[derive(Debug, Clone, PartialEq)]
pub struct PlsModel {
    n_components: usize,
    x_mean: Array1<f64>,
    /// Per-column scale divisors when fitted with [`FitOptions::scale`].
    x_std: Option<Array1<f64>>,
    y_mean: f64,
    /// d x k; columns have unit L2 norm.
    weights: Array2<f64>,
    /// d x k.
    loadings: Array2<f64>,
    /// k.
    y_loadings: Array1<f64>,
    /// d; derived as W (PᵀW)⁻¹ q.
    coefficients: Array1<f64>,
    feature_tag: DescriptorTag,
    /// Whether inputs are expected to be L2-normalized before prediction
    /// (applied by [`PlsModel::predict_features`]).
    normalize_features: bool,
}

/// Fits a PLS1 model with default options (mean-centering only).
///
/// `y` holds the responses (typically overlap ratios in `[0, 1]`, though any
/// finite values are accepted). Requires `n >= 2`, a non-constant target,
/// and `1 <= k <= min(n - 1, d)`. If the residual covariance vanishes before
/// `k` components are extracted, fitting stops early and the model records
/// the smaller count.
pub fn fit(x: &Array2<f64>, y: &Array1<f64>, k: usize) -> Result<PlsModel, PlsError> {
    fit_with(x, y, k, &FitOptions::default())
}

/// [`fit`] with explicit options.
pub fn fit_with(
    x: &Array2<f64>,
    y: &Array1<f64>,
    k: usize,
    options: &FitOptions,
) -> Result<PlsModel, PlsError> {
    let (n, d) = x.dim();
    if y.len() != n {
        return Err(PlsError::SampleCountMismatch { rows: n, responses: y.len() });
    }
    if n < 2 {
        return Err(PlsError::TooFewSamples(n));
    }
    let max_k = (n - 1).min(d);
    if k < 1 || k > max_k {
        return Err(PlsError::InvalidComponentCount { k, max: max_k });
    }
    if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return Err(PlsError::NonFiniteInput);
    }
    let y_min = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let y_max = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if y_min == y_max {
        return Err(PlsError::ConstantTarget(y_min));
    }

    let x_mean = x.mean_axis(Axis(0)).expect("n >= 2");
    let y_mean = y.mean().expect("n >= 2");
    let mut xc = x.to_owned();
    for mut row in xc.rows_mut() {
        row -= &x_mean;
    }
    let x_std = if options.scale {
        let mut std = Array1::zeros(d);
        for (j, col) in xc.columns().into_iter().enumerate() {
            let var = col.iter().map(|v| v * v).sum::<f64>() / (n - 1) as f64;
            let s = var.sqrt();
            std[j] = if s == 0.0 { 1.0 } else { s };
        }
        for mut row in xc.rows_mut() {
            row /= &std;
        }
        Some(std)
    } else {
        None
    };
    let mut yc = y - y_mean;

    let mut weights = Vec::with_capacity(k);
    let mut loadings = Vec::with_capacity(k);
    let mut y_loadings = Vec::with_capacity(k);
    for _ in 0..k {
        let mut w = xc.t().dot(&yc);
        let w_norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        if w_norm < EARLY_STOP_NORM {
            break;
        }
        w /= w_norm;
        let t = xc.dot(&w);
        let tt: f64 = t.iter().map(|v| v * v).sum();
        let p = xc.t().dot(&t) / tt;
        let q = yc.dot(&t) / tt;
        for (mut row, &ti) in xc.rows_mut().into_iter().zip(t.iter()) {
            row.scaled_add(-ti, &p);
        }
        yc.scaled_add(-q, &t);
        weights.push(w);
        loadings.push(p);
        y_loadings.push(q);
    }
    let fitted = weights.len();
    if fitted == 0 {
        return Err(PlsError::NoCovariance);
    }

    let mut w_mat = Array2::zeros((d, fitted));
    let mut p_mat = Array2::zeros((d, fitted));
    for c in 0..fitted {
        w_mat.column_mut(c).assign(&weights[c]);
        p_mat.column_mut(c).assign(&loadings[c]);
    }
    let q_vec = Array1::from(y_loadings);

    // B = W (PᵀW)⁻¹ q, solved through the small k x k system (PᵀW) z = q.
    let ptw = p_mat.t().dot(&w_mat);
    let z = solve_dense(&ptw, &q_vec).ok_or_else(|| {
        PlsError::Format("latent system is numerically singular; model cannot be derived".into())
    })?;
    let coefficients = w_mat.dot(&z);

    Ok(PlsModel {
        n_components: fitted,
        x_mean,
        x_std,
        y_mean,
        weights: w_mat,
        loadings: p_mat,
        y_loadings: q_vec,
        coefficients,
        feature_tag: DescriptorTag::External,
        normalize_features: false,
    })
}

/// Gaussian elimination with partial pivoting for the small latent system.
fn solve_dense(a: &Array2<f64>, b: &Array1<f64>) -> Option<Array1<f64>> {
    let n = b.len();
    debug_assert_eq!(a.dim(), (n, n));
    let mut m = a.to_owned();
    let mut rhs = b.to_owned();
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&r1, &r2| m[[r1, col]].abs().partial_cmp(&m[[r2, col]].abs()).unwrap())?;
        if m[[pivot_row, col]].abs() < 1e-300 {
            return None;
        }
        if pivot_row != col {
            for j in 0..n {
                m.swap([pivot_row, j], [col, j]);
            }
            rhs.swap(pivot_row, col);
        }
        for row in col + 1..n {
            let factor = m[[row, col]] / m[[col, col]];
            for j in col..n {
                m[[row, j]] -= factor * m[[col, j]];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = Array1::zeros(n);
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for j in row + 1..n {
            acc -= m[[row, j]] * x[j];
        }
        x[row] = acc / m[[row, row]];
    }
    Some(x)
}

impl PlsModel {
    /// Number of components actually fitted (may be smaller than requested
    /// after an early stop).
    pub fn n_components(&self) -> usize {
        self.n_components
    }

    /// Feature dimensionality the model expects.
    pub fn dims(&self) -> usize {
        self.x_mean.len()
    }

    pub fn y_mean(&self) -> f64 {
        self.y_mean
    }

    pub fn coefficients(&self) -> &Array1<f64> {
        &self.coefficients
    }

    pub fn feature_tag(&self) -> DescriptorTag {
        self.feature_tag
    }

    pub fn with_feature_tag(mut self, tag: DescriptorTag) -> Self {
        self.feature_tag = tag;
        self
    }

    pub fn normalize_features(&self) -> bool {
        self.normalize_features
    }

    pub fn with_normalize_features(mut self, normalize: bool) -> Self {
        self.normalize_features = normalize;
        self
    }

    fn check_query(&self, x: &[f64]) -> Result<(), PlsError> {
        if x.len() != self.dims() {
            return Err(PlsError::DimensionMismatch { expected: self.dims(), got: x.len() });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(PlsError::NonFiniteQuery);
        }
        Ok(())
    }

    /// Predicts the response: `y_mean + (x - x_mean) · B` (with the stored
    /// per-column scaling applied first when the model was fitted scaled).
    /// Predictions are an affine map and may leave the training range;
    /// callers clamp when they need bounded weights.
    pub fn predict(&self, x: &[f64]) -> Result<f64, PlsError> {
        self.check_query(x)?;
        let mut acc = self.y_mean;
        match &self.x_std {
            None => {
                for ((&xi, &mi), &bi) in
                    x.iter().zip(self.x_mean.iter()).zip(self.coefficients.iter())
                {
                    acc += (xi - mi) * bi;
                }
            }
            Some(std) => {
                for (((&xi, &mi), &si), &bi) in
                    x.iter().zip(self.x_mean.iter()).zip(std.iter()).zip(self.coefficients.iter())
                {
                    acc += (xi - mi) / si * bi;
                }
            }
        }
        Ok(acc)
    }

    /// Latent scores of one input: the centered (and scaled, if fitted so)
    /// vector is projected on each weight column with loading deflation
    /// between components — the per-row equivalent of the training
    /// deflation.
    pub fn latent_scores(&self, x: &[f64]) -> Result<Vec<f64>, PlsError> {
        self.check_query(x)?;
        let mut u: Array1<f64> = Array1::from_iter(
            x.iter().zip(self.x_mean.iter()).map(|(&xi, &mi)| xi - mi),
        );
        if let Some(std) = &self.x_std {
            u /= std;
        }
        let mut scores = Vec::with_capacity(self.n_components);
        for c in 0..self.n_components {
            let s = u.dot(&self.weights.column(c));
            u.scaled_add(-s, &self.loadings.column(c));
            scores.push(s);
        }
        Ok(scores)
    }

    /// Prediction through the latent projection: `y_mean + Σ s_c q_c`.
    /// Agrees with [`PlsModel::predict`] within numerical tolerance.
    pub fn predict_via_latent(&self, x: &[f64]) -> Result<f64, PlsError> {
        let scores = self.latent_scores(x)?;
        Ok(self.y_mean + scores.iter().zip(self.y_loadings.iter()).map(|(s, q)| s * q).sum::<f64>())
    }

    /// Predicts from a tagged feature vector: validates the descriptor tag,
    /// applies L2 normalization when the model was trained on normalized
    /// inputs, then evaluates [`PlsModel::predict`].
    pub fn predict_features(&self, features: &FeatureVector) -> Result<f64, PlsError> {
        if features.tag() != self.feature_tag {
            return Err(PlsError::TagMismatch { expected: self.feature_tag, got: features.tag() });
        }
        if self.normalize_features {
            return self.predict(features.normalized().values());
        }
        self.predict(features.values())
    }

    /// Serializes the model as a versioned JSON document. All floats use
    /// shortest-round-trip formatting, so save → load is bit-exact.
    pub fn save<W: Write>(&self, sink: &mut W) -> Result<(), PlsError> {
        let file = ModelFile {
            format: FORMAT_NAME.to_string(),
            version: FORMAT_VERSION,
            feature_tag: self.feature_tag.as_str().to_string(),
            dims: self.dims(),
            n_components: self.n_components,
            normalize_features: self.normalize_features,
            x_mean: self.x_mean.to_vec(),
            x_std: self.x_std.as_ref().map(|s| s.to_vec()),
            y_mean: self.y_mean,
            weights: columns_to_rows(&self.weights),
            loadings: columns_to_rows(&self.loadings),
            y_loadings: self.y_loadings.to_vec(),
            coefficients: self.coefficients.to_vec(),
        };
        serde_json::to_writer(&mut *sink, &file)
            .map_err(|e| PlsError::Format(format!("cannot serialize model: {e}")))?;
        sink.write_all(b"\n")?;
        Ok(())
    }

    /// Reads a model saved by [`PlsModel::save`], validating the format
    /// name, version, and all structural invariants.
    pub fn load<R: Read>(source: R) -> Result<PlsModel, PlsError> {
        let file: ModelFile = serde_json::from_reader(source)
            .map_err(|e| PlsError::Format(format!("cannot parse model file: {e}")))?;
        if file.format != FORMAT_NAME {
            return Err(PlsError::Format(format!(
                "unknown format '{}' (expected '{FORMAT_NAME}')",
                file.format
            )));
        }
        if file.version != FORMAT_VERSION {
            return Err(PlsError::Format(format!(
                "unsupported version {} (this build reads version {FORMAT_VERSION})",
                file.version
            )));
        }
        let feature_tag: DescriptorTag = file
            .feature_tag
            .parse()
            .map_err(|_| PlsError::Format(format!("unknown feature tag '{}'", file.feature_tag)))?;
        let d = file.dims;
        let k = file.n_components;
        if k == 0 {
            return Err(PlsError::Format("n_components must be positive".into()));
        }
        let check_len = |name: &str, len: usize, expected: usize| -> Result<(), PlsError> {
            if len != expected {
                return Err(PlsError::Format(format!(
                    "{name} has {len} entries, expected {expected}"
                )));
            }
            Ok(())
        };
        check_len("x_mean", file.x_mean.len(), d)?;
        check_len("coefficients", file.coefficients.len(), d)?;
        check_len("y_loadings", file.y_loadings.len(), k)?;
        check_len("weights", file.weights.len(), k)?;
        check_len("loadings", file.loadings.len(), k)?;
        if let Some(std) = &file.x_std {
            check_len("x_std", std.len(), d)?;
        }
        for row in file.weights.iter().chain(file.loadings.iter()) {
            check_len("matrix row", row.len(), d)?;
        }
        let all = file
            .x_mean
            .iter()
            .chain(file.coefficients.iter())
            .chain(file.y_loadings.iter())
            .chain(file.x_std.iter().flatten())
            .chain(file.weights.iter().flatten())
            .chain(file.loadings.iter().flatten())
            .chain(std::iter::once(&file.y_mean));
        if !all.into_iter().all(|v| v.is_finite()) {
            return Err(PlsError::Format("model contains non-finite values".into()));
        }
        Ok(PlsModel {
            n_components: k,
            x_mean: Array1::from(file.x_mean),
            x_std: file.x_std.map(Array1::from),
            y_mean: file.y_mean,
            weights: rows_to_columns(&file.weights, d, k),
            loadings: rows_to_columns(&file.loadings, d, k),
            y_loadings: Array1::from(file.y_loadings),
            coefficients: Array1::from(file.coefficients),
            feature_tag,
            normalize_features: file.normalize_features,
        })
    }

    pub fn save_to_path(&self, path: impl AsRef<Path>) -> Result<(), PlsError> {
        let mut out = BufWriter::new(File::create(path)?);
        self.save(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load_from_path(path: impl AsRef<Path>) -> Result<PlsModel, PlsError> {
        PlsModel::load(BufReader::new(File::open(path)?))
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    feature_tag: String,
    dims: usize,
    n_components: usize,
    normalize_features: bool,
    x_mean: Vec<f64>,
    x_std: Option<Vec<f64>>,
    y_mean: f64,
    /// Component-major: k rows of d values each.
    weights: Vec<Vec<f64>>,
    loadings: Vec<Vec<f64>>,
    y_loadings: Vec<f64>,
    coefficients: Vec<f64>,
}

fn columns_to_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.columns().into_iter().map(|c| c.to_vec()).collect()
}

fn rows_to_columns(rows: &[Vec<f64>], d: usize, k: usize) -> Array2<f64> {
    let mut m = Array2::zeros((d, k));
    for (c, row) in rows.iter().enumerate() {
        for (i, &v) in row.iter().enumerate() {
            m[[i, c]] = v;
        }
    }
    m
}
