//! Voxelwise ridge regression with per-voxel regularization chosen by chunked
//! bootstrap cross-validation.
//!
//! Every split factors its design once. With `X = U S Vᵀ`, the ridge solution
//! for any `α` is `V diag(s / (s² + α)) Uᵀ y`, so sweeping the α grid is a
//! diagonal rescale of a single projection. The factorization is taken from
//! the eigendecomposition of whichever Gram matrix (`XᵀX` or `XXᵀ`) is
//! smaller, which keeps the wide regime (more regressors than timepoints)
//! well-defined and cheap.

use std::collections::BTreeMap;
use std::path::Path;

use faer::{Mat, MatRef, Side};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::tensor::{read_array1, read_array2, write_f64};
use crate::linalg::{ensure_sequential_kernels, from_faer, mul};
use crate::stats::pearson;
use crate::temporal::DelayedDesign;

/// Voxels processed per work item. Fixed so results never depend on the worker count.
const VOXEL_CHUNK: usize = 256;

pub fn logspace(lo_exp: f64, hi_exp: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![10f64.powf(lo_exp)],
        _ => (0..n)
            .map(|k| 10f64.powf(lo_exp + (hi_exp - lo_exp) * k as f64 / (n - 1) as f64))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    /// Number of random chunked splits. Zero disables cross-validation, which
    /// requires a single-value alpha grid.
    pub n_bootstraps: usize,
    pub chunk_length_trs: usize,
    /// Fraction of chunks held out in each split.
    pub holdout_fraction: f64,
    pub alpha_grid: Vec<f64>,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            n_bootstraps: 15,
            chunk_length_trs: 20,
            holdout_fraction: 0.2,
            alpha_grid: logspace(1.0, 6.0, 10),
            seed: 0,
        }
    }
}

impl CvConfig {
    pub fn fixed_alpha(alpha: f64) -> Self {
        Self {
            n_bootstraps: 0,
            alpha_grid: vec![alpha],
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.alpha_grid.is_empty() {
            return Err(Error::invalid("alpha grid is empty"));
        }
        if self.alpha_grid.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::invalid("alphas must be finite and non-negative"));
        }
        if self.n_bootstraps == 0 && self.alpha_grid.len() > 1 {
            return Err(Error::invalid("several alphas need at least one bootstrap"));
        }
        if self.chunk_length_trs == 0 {
            return Err(Error::invalid("chunk length must be positive"));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::invalid("holdout fraction must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Row indices of one train/validation split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Contiguous chunks of `chunk_length_trs` rows; each split holds out a random
/// subset of whole chunks.
pub fn bootstrap_splits(n_rows: usize, cv: &CvConfig) -> Result<Vec<Split>> {
    let n_chunks = n_rows.div_ceil(cv.chunk_length_trs);
    if cv.n_bootstraps > 0 && n_chunks < 2 {
        return Err(Error::invalid(format!(
            "{n_rows} rows give fewer than two {}-TR chunks",
            cv.chunk_length_trs
        )));
    }
    let n_held = ((cv.holdout_fraction * n_chunks as f64).round() as usize).clamp(1, n_chunks.max(2) - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(cv.seed);
    Ok((0..cv.n_bootstraps)
        .map(|_| {
            let mut held = vec![false; n_chunks];
            for c in sample(&mut rng, n_chunks, n_held).into_iter() {
                held[c] = true;
            }
            let (mut train, mut validation) = (Vec::new(), Vec::new());
            for row in 0..n_rows {
                if held[row / cv.chunk_length_trs] {
                    validation.push(row);
                } else {
                    train.push(row);
                }
            }
            Split { train, validation }
        })
        .collect())
}

/// Spectral factors of a design: `X = left · diag(…) · rightᵀ` arranged so the
/// ridge weights for penalty `α` are `right · diag(1 / (λ + α)) · leftᵀ y`,
/// with `λ` the retained squared singular values.
pub struct SpectralRidge {
    left: Mat<f64>,
    right: Mat<f64>,
    eig: Vec<f64>,
}

impl SpectralRidge {
    pub fn new(x: MatRef<'_, f64>) -> Result<Self> {
        ensure_sequential_kernels();
        let (n, p) = (x.nrows(), x.ncols());
        if n == 0 || p == 0 {
            return Err(Error::invalid("empty design"));
        }
        let mut all_zero = true;
        for j in 0..p {
            for i in 0..n {
                let v = x[(i, j)];
                if !v.is_finite() {
                    return Err(Error::invalid("design contains NaN or infinite values"));
                }
                all_zero &= v == 0.0;
            }
        }
        if all_zero {
            return Err(Error::invalid("design matrix is all zeros"));
        }
        let primal = n >= p;
        let gram = if primal {
            mul(x.transpose(), x)
        } else {
            mul(x, x.transpose())
        };
        let evd = gram
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e:?}")))?;
        let vals = evd.S().column_vector();
        let vecs = evd.U();
        let dim = gram.nrows();
        let lambda_max = (0..dim).map(|k| vals[k]).fold(0.0f64, f64::max);
        // Gram eigenvalues carry absolute error ~ ε λ_max, so the clip is applied on λ.
        let cutoff = f64::EPSILON * lambda_max * n.max(p) as f64;
        let keep: Vec<usize> = (0..dim).filter(|&k| vals[k] > cutoff).collect();
        let eig: Vec<f64> = keep.iter().map(|&k| vals[k]).collect();
        let basis = Mat::from_fn(dim, keep.len(), |i, j| vecs[(i, keep[j])]);
        let (left, right) = if primal {
            (mul(x, basis.as_ref()), basis)
        } else {
            let right = mul(x.transpose(), basis.as_ref());
            (basis, right)
        };
        Ok(Self { left, right, eig })
    }

    pub fn rank(&self) -> usize {
        self.eig.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eig
    }

    /// `leftᵀ y`
    pub fn project(&self, y: MatRef<'_, f64>) -> Mat<f64> {
        mul(self.left.transpose(), y)
    }

    /// Ridge weights for projected targets, one penalty per column.
    pub fn weights(&self, projected: MatRef<'_, f64>, alphas: &[f64]) -> Mat<f64> {
        debug_assert_eq!(projected.ncols(), alphas.len());
        let scaled = Mat::from_fn(projected.nrows(), projected.ncols(), |i, j| {
            projected[(i, j)] * shrink(self.eig[i], alphas[j])
        });
        mul(self.right.as_ref(), scaled.as_ref())
    }

    pub fn right(&self) -> MatRef<'_, f64> {
        self.right.as_ref()
    }
}

fn shrink(lambda: f64, alpha: f64) -> f64 {
    1.0 / (lambda + alpha)
}

fn select_rows(x: ArrayView2<'_, f64>, rows: &[usize]) -> Mat<f64> {
    Mat::from_fn(rows.len(), x.ncols(), |i, j| x[[rows[i], j]])
}

fn select_block(y: ArrayView2<'_, f64>, rows: &[usize], cols: std::ops::Range<usize>) -> Mat<f64> {
    let start = cols.start;
    Mat::from_fn(rows.len(), cols.len(), |i, j| y[[rows[i], start + j]])
}

fn col_corr(pred: MatRef<'_, f64>, actual: MatRef<'_, f64>, j: usize) -> f64 {
    let a = Array1::from_iter((0..pred.nrows()).map(|i| pred[(i, j)]));
    let b = Array1::from_iter((0..actual.nrows()).map(|i| actual[(i, j)]));
    pearson(a.view(), b.view()).unwrap_or(0.0)
}

fn voxel_chunks(n_voxels: usize) -> Vec<std::ops::Range<usize>> {
    (0..n_voxels)
        .step_by(VOXEL_CHUNK)
        .map(|s| s..(s + VOXEL_CHUNK).min(n_voxels))
        .collect()
}

/// Raw result of a ridge fit on a plain matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeSolution {
    /// `p × n_voxels`
    pub weights: Array2<f64>,
    pub alpha_per_voxel: Vec<f64>,
    /// Mean validation correlation at the chosen alpha (NaN without CV).
    pub cv_score_per_voxel: Vec<f64>,
}

/// Mean validation correlation for every alpha (rows) and voxel (columns).
pub fn cv_correlations(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, cv: &CvConfig) -> Result<Array2<f64>> {
    let splits = bootstrap_splits(x.nrows(), cv)?;
    let n_vox = y.ncols();
    let mut total = Array2::<f64>::zeros((cv.alpha_grid.len(), n_vox));
    for split in &splits {
        let xtr = select_rows(x, &split.train);
        let xval = select_rows(x, &split.validation);
        let spectral = SpectralRidge::new(xtr.as_ref())?;
        let heldout_basis = mul(xval.as_ref(), spectral.right());
        let chunks = voxel_chunks(n_vox);
        let per_chunk: Vec<Array2<f64>> = chunks
            .par_iter()
            .map(|cols| {
                let ytr = select_block(y, &split.train, cols.clone());
                let yval = select_block(y, &split.validation, cols.clone());
                let proj = spectral.project(ytr.as_ref());
                let mut out = Array2::zeros((cv.alpha_grid.len(), cols.len()));
                for (ai, &alpha) in cv.alpha_grid.iter().enumerate() {
                    let scaled = Mat::from_fn(proj.nrows(), proj.ncols(), |i, j| {
                        proj[(i, j)] * shrink(spectral.eig[i], alpha)
                    });
                    let pred = mul(heldout_basis.as_ref(), scaled.as_ref());
                    for j in 0..cols.len() {
                        out[[ai, j]] = col_corr(pred.as_ref(), yval.as_ref(), j);
                    }
                }
                out
            })
            .collect();
        for (cols, block) in chunks.iter().zip(per_chunk) {
            let mut dst = total.slice_mut(ndarray::s![.., cols.clone()]);
            dst += &block;
        }
    }
    if !splits.is_empty() {
        total /= splits.len() as f64;
    }
    Ok(total)
}

/// Ridge fit on a plain design matrix.
pub fn fit_ridge_matrix(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, cv: &CvConfig) -> Result<RidgeSolution> {
    cv.validate()?;
    if x.nrows() != y.nrows() {
        return Err(Error::shape(format!(
            "design has {} rows, responses have {}",
            x.nrows(),
            y.nrows()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("responses contain NaN or infinite values"));
    }
    let n_vox = y.ncols();
    let (alpha_per_voxel, cv_score_per_voxel) = if cv.n_bootstraps == 0 {
        (vec![cv.alpha_grid[0]; n_vox], vec![f64::NAN; n_vox])
    } else {
        let scores = cv_correlations(x, y, cv)?;
        let mut alphas = Vec::with_capacity(n_vox);
        let mut best = Vec::with_capacity(n_vox);
        for col in scores.axis_iter(Axis(1)) {
            // first maximum wins, so ties go to the earlier grid entry
            let mut k = 0;
            for (i, &s) in col.iter().enumerate() {
                if s > col[k] {
                    k = i;
                }
            }
            alphas.push(cv.alpha_grid[k]);
            best.push(col[k]);
        }
        (alphas, best)
    };
    let weights = solve_with_alphas(x, y, &alpha_per_voxel)?;
    Ok(RidgeSolution {
        weights,
        alpha_per_voxel,
        cv_score_per_voxel,
    })
}

/// Ridge weights on all rows with a given penalty per voxel.
pub fn solve_with_alphas(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, alphas: &[f64]) -> Result<Array2<f64>> {
    if alphas.len() != y.ncols() {
        return Err(Error::shape("one alpha per voxel required"));
    }
    let all: Vec<usize> = (0..x.nrows()).collect();
    let spectral = SpectralRidge::new(select_rows(x, &all).as_ref())?;
    let chunks = voxel_chunks(y.ncols());
    let blocks: Vec<Mat<f64>> = chunks
        .par_iter()
        .map(|cols| {
            let yc = select_block(y, &all, cols.clone());
            let proj = spectral.project(yc.as_ref());
            spectral.weights(proj.as_ref(), &alphas[cols.clone()])
        })
        .collect();
    let mut weights = Array2::zeros((x.ncols(), y.ncols()));
    for (cols, block) in chunks.iter().zip(blocks) {
        weights
            .slice_mut(ndarray::s![.., cols.clone()])
            .assign(&from_faer(block.as_ref()));
    }
    Ok(weights)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub stories: Vec<String>,
    pub n_timepoints: usize,
    pub cv: CvConfig,
    pub delays_trs: Vec<usize>,
    pub n_features: usize,
}

/// Per-voxel linear model from a delayed design to responses.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodingModel {
    /// `(n_features · n_delays) × n_voxels`
    pub weights: Array2<f64>,
    pub alpha_per_voxel: Vec<f64>,
    pub cv_score_per_voxel: Vec<f64>,
    pub feature_space_id: String,
    pub layer_id: i64,
    pub training_meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct ModelSidecar {
    feature_space_id: String,
    layer_id: i64,
    training_meta: TrainingMeta,
    n_voxels: usize,
    n_regressors: usize,
}

impl EncodingModel {
    pub fn n_voxels(&self) -> usize {
        self.weights.ncols()
    }

    /// Write `weights.vxt`, `alphas.vxt`, `cv_scores.vxt` and `model.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_f64(&self.weights.view(), dir.join("weights.vxt"))?;
        write_f64(&Array1::from(self.alpha_per_voxel.clone()).view(), dir.join("alphas.vxt"))?;
        write_f64(&Array1::from(self.cv_score_per_voxel.clone()).view(), dir.join("cv_scores.vxt"))?;
        let sidecar = ModelSidecar {
            feature_space_id: self.feature_space_id.clone(),
            layer_id: self.layer_id,
            training_meta: self.training_meta.clone(),
            n_voxels: self.weights.ncols(),
            n_regressors: self.weights.nrows(),
        };
        let text = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::invalid(e.to_string()))?;
        let p = dir.join("model.json");
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join("model.json");
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let sidecar: ModelSidecar = serde_json::from_str(&text).map_err(|e| Error::Manifest {
            path: p.clone(),
            message: e.to_string(),
        })?;
        let weights = read_array2(dir.join("weights.vxt"))?;
        let alphas = read_array1(dir.join("alphas.vxt"))?.to_vec();
        let cv_scores = read_array1(dir.join("cv_scores.vxt"))?.to_vec();
        if weights.ncols() != alphas.len() || weights.ncols() != sidecar.n_voxels {
            return Err(Error::shape(format!("inconsistent model files in {}", dir.display())));
        }
        Ok(Self {
            weights,
            alpha_per_voxel: alphas,
            cv_score_per_voxel: cv_scores,
            feature_space_id: sidecar.feature_space_id,
            layer_id: sidecar.layer_id,
            training_meta: sidecar.training_meta,
        })
    }
}

/// Fit an encoding model on a delayed design.
pub fn fit_ridge(design: &DelayedDesign, y: ArrayView2<'_, f64>, cv: &CvConfig) -> Result<EncodingModel> {
    let sol = fit_ridge_matrix(design.matrix.view(), y, cv)?;
    Ok(EncodingModel {
        weights: sol.weights,
        alpha_per_voxel: sol.alpha_per_voxel,
        cv_score_per_voxel: sol.cv_score_per_voxel,
        feature_space_id: String::new(),
        layer_id: 0,
        training_meta: TrainingMeta {
            stories: Vec::new(),
            n_timepoints: y.nrows(),
            cv: cv.clone(),
            delays_trs: design.delays_trs.clone(),
            n_features: design.n_features,
        },
    })
}

pub fn predict_matrix(weights: ArrayView2<'_, f64>, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if x.ncols() != weights.nrows() {
        return Err(Error::shape(format!(
            "design width {} does not match {} weight rows",
            x.ncols(),
            weights.nrows()
        )));
    }
    ensure_sequential_kernels();
    let xf = crate::linalg::to_faer(x);
    let wf = crate::linalg::to_faer(weights);
    Ok(from_faer(mul(xf.as_ref(), wf.as_ref()).as_ref()))
}

pub fn predict(model: &EncodingModel, design: &DelayedDesign) -> Result<Array2<f64>> {
    predict_matrix(model.weights.view(), design.matrix.view())
}

/// Per-voxel prediction accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelScore {
    pub r: Vec<f64>,
    /// `|r| · r`
    pub r_signed_sq: Vec<f64>,
    /// Voxels whose prediction or response was constant (scored as r = 0).
    pub constant: Vec<bool>,
}

pub fn score(pred: ArrayView2<'_, f64>, actual: ArrayView2<'_, f64>) -> Result<VoxelScore> {
    if pred.shape() != actual.shape() {
        return Err(Error::shape(format!(
            "prediction {:?} and response {:?} differ",
            pred.shape(),
            actual.shape()
        )));
    }
    if pred.nrows() < 3 {
        return Err(Error::invalid("scoring needs at least 3 timepoints"));
    }
    let mut out = VoxelScore {
        r: Vec::with_capacity(pred.ncols()),
        r_signed_sq: Vec::with_capacity(pred.ncols()),
        constant: Vec::with_capacity(pred.ncols()),
    };
    for (p, a) in pred.axis_iter(Axis(1)).zip(actual.axis_iter(Axis(1))) {
        let r = pearson(p, a);
        let v = r.unwrap_or(0.0);
        out.r.push(v);
        out.r_signed_sq.push(v.abs() * v);
        out.constant.push(r.is_none());
    }
    Ok(out)
}

/// Mean `r` over the voxels selected by `mask`.
pub fn mean_cortex_score(scores: &VoxelScore, mask: &[bool]) -> Result<f64> {
    if mask.len() != scores.r.len() {
        return Err(Error::shape(format!(
            "mask has {} entries for {} voxels",
            mask.len(),
            scores.r.len()
        )));
    }
    let picked: Vec<f64> = scores.r.iter().zip(mask).filter(|(_, &m)| m).map(|(r, _)| *r).collect();
    if picked.is_empty() {
        return Err(Error::invalid("empty voxel mask"));
    }
    Ok(picked.iter().sum::<f64>() / picked.len() as f64)
}

/// Layer with the highest mean score; ties go to the lower layer index.
pub fn best_layer(per_layer: &BTreeMap<i64, f64>) -> Result<i64> {
    let mut best: Option<(i64, f64)> = None;
    for (&layer, &s) in per_layer {
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((layer, s)),
        }
    }
    best.map(|(l, _)| l).ok_or_else(|| Error::invalid("no layers to compare"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::solve_small;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut rng))
    }

    /// Brute-force oracle: solve (XᵀX + αI) w = Xᵀy by elimination.
    fn normal_equations(x: &Array2<f64>, y: &Array1<f64>, alpha: f64) -> Vec<f64> {
        let p = x.ncols();
        let mut a = vec![vec![0.0; p]; p];
        let mut b = vec![0.0; p];
        for i in 0..p {
            for j in 0..p {
                a[i][j] = x.column(i).dot(&x.column(j)) + if i == j { alpha } else { 0.0 };
            }
            b[i] = x.column(i).dot(y);
        }
        solve_small(a, b).unwrap()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
        num / den.max(1e-300)
    }

    #[test]
    fn splits_partition_rows() {
        let cv = CvConfig::default();
        for split in bootstrap_splits(237, &cv).unwrap() {
            let mut all: Vec<usize> = split.train.iter().chain(&split.validation).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..237).collect::<Vec<_>>());
            // whole chunks only
            for &r in &split.validation {
                let chunk = r / 20;
                assert!((chunk * 20..((chunk + 1) * 20).min(237)).all(|q| split.validation.contains(&q)));
            }
            assert_eq!(split.validation.len().div_ceil(20).max(1), 2);
        }
        assert_eq!(bootstrap_splits(237, &cv).unwrap(), bootstrap_splits(237, &cv).unwrap());
    }

    #[test]
    fn matches_normal_equations_both_regimes() {
        for (n, p, seed) in [(120, 30, 1u64), (40, 90, 2)] {
            let x = gaussian(n, p, seed);
            let y = gaussian(n, 3, seed + 10);
            for alpha in [0.5, 10.0, 1e3] {
                let w = solve_with_alphas(x.view(), y.view(), &[alpha; 3]).unwrap();
                for v in 0..3 {
                    let oracle = normal_equations(&x, &y.column(v).to_owned(), alpha);
                    let got = w.column(v).to_vec();
                    assert!(rel_err(&got, &oracle) < 1e-8, "n={n} p={p} α={alpha}");
                }
            }
        }
    }

    #[test]
    fn orthonormal_columns_closed_form() {
        let raw = gaussian(80, 6, 3);
        let q = crate::linalg::to_faer(raw.view()).qr().compute_thin_Q();
        let x = from_faer(q.as_ref());
        let y = gaussian(80, 1, 4);
        let alpha = 2.5;
        let w = solve_with_alphas(x.view(), y.view(), &[alpha]).unwrap();
        let oracle = normal_equations(&x, &y.column(0).to_owned(), alpha);
        for j in 0..6 {
            let closed = x.column(j).dot(&y.column(0)) / (1.0 + alpha);
            assert!((w[[j, 0]] - closed).abs() < 1e-12);
            assert!((oracle[j] - closed).abs() < 1e-12);
        }
    }

    #[test]
    fn alpha_limits() {
        let x = gaussian(200, 50, 5);
        let y = gaussian(200, 1, 6);
        let ls = normal_equations(&x, &y.column(0).to_owned(), 0.0);
        let w0 = solve_with_alphas(x.view(), y.view(), &[1e-10]).unwrap();
        assert!(rel_err(&w0.column(0).to_vec(), &ls) < 1e-6);
        let mut last = f64::INFINITY;
        for alpha in [1e2, 1e4, 1e6, 1e9] {
            let w = solve_with_alphas(x.view(), y.view(), &[alpha]).unwrap();
            let norm = w.column(0).dot(&w.column(0)).sqrt();
            assert!(norm < last);
            last = norm;
        }
        assert!(last < 1e-5);
    }

    #[test]
    fn rank_deficient_design_is_handled() {
        let base = gaussian(60, 5, 7);
        let mut x = Array2::zeros((60, 10));
        x.slice_mut(ndarray::s![.., 0..5]).assign(&base);
        x.slice_mut(ndarray::s![.., 5..10]).assign(&base);
        let y = gaussian(60, 2, 8);
        let all: Vec<usize> = (0..60).collect();
        let sr = SpectralRidge::new(select_rows(x.view(), &all).as_ref()).unwrap();
        assert_eq!(sr.rank(), 5);
        let w = solve_with_alphas(x.view(), y.view(), &[1.0, 1.0]).unwrap();
        assert!(w.iter().all(|v| v.is_finite()));
        // duplicated columns share weight equally
        for j in 0..5 {
            assert!((w[[j, 0]] - w[[j + 5, 0]]).abs() < 1e-10);
        }
    }

    #[test]
    fn degenerate_inputs_rejected() {
        let x = Array2::<f64>::zeros((50, 4));
        let y = gaussian(50, 2, 1);
        assert!(fit_ridge_matrix(x.view(), y.view(), &CvConfig::fixed_alpha(1.0)).is_err());
        let mut x = gaussian(50, 4, 2);
        x[[3, 1]] = f64::NAN;
        assert!(fit_ridge_matrix(x.view(), y.view(), &CvConfig::fixed_alpha(1.0)).is_err());
        let x = gaussian(49, 4, 2);
        assert!(fit_ridge_matrix(x.view(), y.view(), &CvConfig::fixed_alpha(1.0)).is_err());
    }

    #[test]
    fn realizable_target_recovered() {
        let x = gaussian(600, 20, 11);
        let w = gaussian(20, 5, 12);
        let y = x.dot(&w);
        let cv = CvConfig {
            alpha_grid: logspace(-6.0, 2.0, 5),
            ..Default::default()
        };
        let sol = fit_ridge_matrix(x.slice(ndarray::s![..400, ..]), y.slice(ndarray::s![..400, ..]), &cv).unwrap();
        let train = score(predict_matrix(sol.weights.view(), x.slice(ndarray::s![..400, ..])).unwrap().view(), y.slice(ndarray::s![..400, ..])).unwrap();
        let test = score(predict_matrix(sol.weights.view(), x.slice(ndarray::s![400.., ..])).unwrap().view(), y.slice(ndarray::s![400.., ..])).unwrap();
        assert!(train.r.iter().all(|&r| r >= 0.999));
        assert!(test.r.iter().all(|&r| r >= 0.999));
        assert!(sol.cv_score_per_voxel.iter().all(|&r| r >= 0.999));
    }

    #[test]
    fn predict_shapes() {
        let w = ndarray::arr2(&[[2.0]]);
        let x = ndarray::arr2(&[[1.0], [-3.0], [0.5]]);
        assert_eq!(predict_matrix(w.view(), x.view()).unwrap(), ndarray::arr2(&[[2.0], [-6.0], [1.0]]));
        assert_eq!(predict_matrix(w.view(), Array2::zeros((4, 1)).view()).unwrap(), Array2::<f64>::zeros((4, 1)));
        assert!(predict_matrix(w.view(), Array2::zeros((4, 2)).view()).is_err());
        let w = gaussian(7, 5, 1);
        let x = gaussian(30, 7, 2);
        let got = predict_matrix(w.view(), x.view()).unwrap();
        for i in 0..30 {
            for v in 0..5 {
                let oracle: f64 = (0..7).map(|k| x[[i, k]] * w[[k, v]]).sum();
                assert!((got[[i, v]] - oracle).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn score_examples() {
        let a = gaussian(50, 3, 1);
        let s = score(a.view(), a.view()).unwrap();
        assert!(s.r.iter().all(|&r| (r - 1.0).abs() < 1e-12));
        let s = score((-&a).view(), a.view()).unwrap();
        assert!(s.r.iter().all(|&r| (r + 1.0).abs() < 1e-12));
        assert!(s.r_signed_sq.iter().all(|&r| (r + 1.0).abs() < 1e-12));
        let mut c = a.clone();
        c.column_mut(1).fill(2.0);
        let s = score(c.view(), a.view()).unwrap();
        assert_eq!(s.r[1], 0.0);
        assert_eq!(s.constant, vec![false, true, false]);
        assert!(score(a.view(), a.slice(ndarray::s![..49, ..])).is_err());
        assert!(score(a.slice(ndarray::s![..2, ..]), a.slice(ndarray::s![..2, ..])).is_err());
    }

    #[test]
    fn score_hits_planted_correlation() {
        // pred = a, actual = 0.5 a + sqrt(0.75) e gives ρ = 0.5
        let n = 10_000;
        let a = gaussian(n, 1, 21);
        let e = gaussian(n, 1, 22);
        let actual = &a * 0.5 + &e * 0.75f64.sqrt();
        let s = score(a.view(), actual.view()).unwrap();
        assert!((s.r[0] - 0.5).abs() < 0.03, "{}", s.r[0]);
    }

    #[test]
    fn cortex_mean_and_best_layer() {
        let s = VoxelScore {
            r: vec![0.2, 0.2, 0.4, 0.4],
            r_signed_sq: vec![0.0; 4],
            constant: vec![false; 4],
        };
        assert!((mean_cortex_score(&s, &[true; 4]).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(mean_cortex_score(&s, &[false, false, true, false]).unwrap(), 0.4);
        assert!(mean_cortex_score(&s, &[false; 4]).is_err());

        let m: BTreeMap<i64, f64> = [(1, 0.1), (2, 0.3)].into();
        assert_eq!(best_layer(&m).unwrap(), 2);
        let m: BTreeMap<i64, f64> = [(1, 0.3), (2, 0.3)].into();
        assert_eq!(best_layer(&m).unwrap(), 1);
        let sweep: BTreeMap<i64, f64> = (1..=24).map(|l| (l, 0.3 - 0.001 * ((l - 17) as f64).powi(2))).collect();
        assert_eq!(best_layer(&sweep).unwrap(), 17);
        assert!(best_layer(&BTreeMap::new()).is_err());
    }

    proptest::proptest! {
        #[test]
        fn score_invariant_to_positive_affine(seed in 0u64..500, scale in 0.01f64..100.0, shift in -50.0f64..50.0) {
            let p = gaussian(40, 2, seed);
            let a = gaussian(40, 2, seed + 1000);
            let s0 = score(p.view(), a.view()).unwrap();
            let s1 = score(p.mapv(|v| scale * v + shift).view(), a.view()).unwrap();
            for (x, y) in s0.r.iter().zip(&s1.r) {
                proptest::prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
