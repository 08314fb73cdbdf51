//! Stacked regression: per-voxel convex combinations of encoding models from
//! several feature spaces.
//!
//! Out-of-fold predictions for each space give a residual inner-product matrix
//! per voxel; the weights minimize the residual quadratic form on the simplex.
//! A validation gate keeps the stacked prediction only where it beats the
//! baseline space with bootstrap confidence.

mod qp;

use ndarray::{s, Array2, Array3, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use qp::{kkt_residual, objective, solve_simplex_qp};

use crate::error::{Error, Result};
use crate::ridge::{fit_ridge_matrix, predict_matrix, CvConfig};

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_FOLD_CHUNK_TRS: usize = 20;
pub const DEFAULT_SEMANTIC_LAYER: usize = 18;

/// Even-numbered non-embedding layers `2, 4, …, n_layers`.
pub fn even_layers(n_layers: usize) -> Vec<usize> {
    (2..=n_layers).step_by(2).collect()
}

/// Partition of training rows into folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSpec {
    folds: Vec<Vec<usize>>,
    n_rows: usize,
}

impl FoldSpec {
    /// Validate that `folds` partition `0..n_rows`.
    pub fn new(folds: Vec<Vec<usize>>, n_rows: usize) -> Result<Self> {
        if folds.len() < 2 {
            return Err(Error::invalid("need at least two folds"));
        }
        let mut seen = vec![false; n_rows];
        for (f, rows) in folds.iter().enumerate() {
            if rows.is_empty() {
                return Err(Error::invalid(format!("fold {f} is empty")));
            }
            for &r in rows {
                if r >= n_rows {
                    return Err(Error::invalid(format!("fold {f} references row {r} of {n_rows}")));
                }
                if std::mem::replace(&mut seen[r], true) {
                    return Err(Error::invalid(format!("row {r} appears in more than one fold")));
                }
            }
        }
        if let Some(r) = seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!("folds are not a partition: row {r} is never held out")));
        }
        Ok(Self { folds, n_rows })
    }

    /// Contiguous folds aligned to segment (story) boundaries when there are at
    /// least `n_folds` segments, otherwise to `chunk_trs`-row chunks.
    pub fn aligned(segment_lengths: &[usize], n_folds: usize, chunk_trs: usize) -> Result<Self> {
        let n_rows: usize = segment_lengths.iter().sum();
        let units: Vec<usize> = if segment_lengths.len() >= n_folds {
            segment_lengths.to_vec()
        } else {
            let chunk = chunk_trs.max(1);
            (0..n_rows).step_by(chunk).map(|s| chunk.min(n_rows - s)).collect()
        };
        if units.len() < n_folds {
            return Err(Error::invalid(format!(
                "{n_rows} rows cannot be split into {n_folds} folds"
            )));
        }
        // greedy contiguous grouping toward equal row counts
        let mut folds = vec![Vec::new(); n_folds];
        let (mut row, mut fold, mut filled) = (0usize, 0usize, 0usize);
        for (u, &len) in units.iter().enumerate() {
            let remaining_units = units.len() - u;
            let remaining_folds = n_folds - fold;
            let target = (n_rows * (fold + 1)) as f64 / n_folds as f64;
            if fold + 1 < n_folds
                && filled > 0
                && (remaining_units == remaining_folds
                    || (row as f64 + len as f64 / 2.0) > target)
            {
                fold += 1;
                filled = 0;
            }
            folds[fold].extend(row..row + len);
            row += len;
            filled += 1;
        }
        Self::new(folds, n_rows)
    }

    pub fn folds(&self) -> &[Vec<usize>] {
        &self.folds
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn fold_of_row(&self) -> Vec<usize> {
        let mut out = vec![0; self.n_rows];
        for (f, rows) in self.folds.iter().enumerate() {
            for &r in rows {
                out[r] = f;
            }
        }
        out
    }
}

/// Out-of-fold predictions of each feature space over all training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct HeldoutPredictions {
    /// One `n_rows × n_voxels` matrix per space.
    pub per_space: Vec<Array2<f64>>,
    pub fold_of_row: Vec<usize>,
}

fn take_rows(x: ArrayView2<'_, f64>, rows: &[usize]) -> Array2<f64> {
    x.select(Axis(0), rows)
}

pub fn heldout_predictions(
    spaces: &[ArrayView2<'_, f64>],
    y: ArrayView2<'_, f64>,
    folds: &FoldSpec,
    cv: &CvConfig,
) -> Result<HeldoutPredictions> {
    if spaces.is_empty() {
        return Err(Error::invalid("no feature spaces"));
    }
    for (k, x) in spaces.iter().enumerate() {
        if x.nrows() != y.nrows() {
            return Err(Error::shape(format!(
                "space {k} has {} rows, responses have {}",
                x.nrows(),
                y.nrows()
            )));
        }
    }
    if folds.n_rows() != y.nrows() {
        return Err(Error::invalid(format!(
            "fold spec covers {} rows, data has {}",
            folds.n_rows(),
            y.nrows()
        )));
    }
    let mut per_space = vec![Array2::zeros(y.raw_dim()); spaces.len()];
    for held in folds.folds() {
        let mut is_held = vec![false; y.nrows()];
        held.iter().for_each(|&r| is_held[r] = true);
        let train: Vec<usize> = (0..y.nrows()).filter(|&r| !is_held[r]).collect();
        let ytr = take_rows(y, &train);
        for (k, x) in spaces.iter().enumerate() {
            let sol = fit_ridge_matrix(take_rows(*x, &train).view(), ytr.view(), cv)?;
            let pred = predict_matrix(sol.weights.view(), take_rows(*x, held).view())?;
            for (i, &r) in held.iter().enumerate() {
                per_space[k].row_mut(r).assign(&pred.row(i));
            }
        }
    }
    Ok(HeldoutPredictions {
        per_space,
        fold_of_row: folds.fold_of_row(),
    })
}

/// Per-voxel `k × k` residual inner products, stored as `n_voxels × k × k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualCovariance {
    pub per_voxel: Array3<f64>,
}

impl ResidualCovariance {
    pub fn voxel(&self, v: usize) -> ArrayView2<'_, f64> {
        self.per_voxel.index_axis(Axis(0), v)
    }

    pub fn n_spaces(&self) -> usize {
        self.per_voxel.shape()[1]
    }
}

/// `R[v, p, q] = Σ_t (y - f_p)(y - f_q)`, uncentered and unnormalized.
pub fn residual_covariance(preds: &HeldoutPredictions, y: ArrayView2<'_, f64>) -> Result<ResidualCovariance> {
    let k = preds.per_space.len();
    if k == 0 {
        return Err(Error::invalid("no feature spaces"));
    }
    if preds.per_space.iter().any(|p| p.shape() != y.shape()) {
        return Err(Error::shape("held-out predictions and responses differ in shape"));
    }
    let (n, n_vox) = y.dim();
    let residuals: Vec<Array2<f64>> = preds.per_space.iter().map(|p| &y - p).collect();
    if residuals.iter().any(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(Error::invalid("residuals contain NaN or infinite values"));
    }
    let mut out = Array3::zeros((n_vox, k, k));
    for v in 0..n_vox {
        for p in 0..k {
            for q in p..k {
                let mut acc = 0.0;
                for t in 0..n {
                    acc += residuals[p][[t, v]] * residuals[q][[t, v]];
                }
                out[[v, p, q]] = acc;
                out[[v, q, p]] = acc;
            }
        }
    }
    Ok(ResidualCovariance { per_voxel: out })
}

/// Simplex weights per voxel (`n_voxels × k`), solved in parallel.
pub fn stack_weights(cov: &ResidualCovariance) -> Result<Array2<f64>> {
    let n_vox = cov.per_voxel.shape()[0];
    let k = cov.n_spaces();
    let rows: Vec<Result<ndarray::Array1<f64>>> = (0..n_vox)
        .into_par_iter()
        .map(|v| solve_simplex_qp(cov.voxel(v)))
        .collect();
    let mut out = Array2::zeros((n_vox, k));
    for (v, row) in rows.into_iter().enumerate() {
        out.row_mut(v).assign(&row?);
    }
    Ok(out)
}

fn check_simplex(alpha: ArrayView1<'_, f64>) -> Result<()> {
    if alpha.is_empty() {
        return Err(Error::invalid("empty weight vector"));
    }
    if alpha.iter().any(|&a| !(a >= -1e-10)) {
        return Err(Error::invalid("weights must be non-negative"));
    }
    if (alpha.sum() - 1.0).abs() > 1e-8 {
        return Err(Error::invalid(format!("weights sum to {}, not 1", alpha.sum())));
    }
    Ok(())
}

/// `Σ_i i·α_i` with layers indexed from 1.
pub fn center_of_mass(alpha: ArrayView1<'_, f64>) -> Result<f64> {
    check_simplex(alpha)?;
    Ok(alpha.iter().enumerate().map(|(i, a)| (i + 1) as f64 * a).sum())
}

/// Center of mass over a subset of spaces (e.g. the audio layers), after
/// renormalizing their weights to sum to one. `None` when the subset carries no weight.
pub fn subset_center_of_mass(alpha: ArrayView1<'_, f64>, subset: &[usize]) -> Result<Option<f64>> {
    check_simplex(alpha)?;
    if let Some(&bad) = subset.iter().find(|&&i| i >= alpha.len()) {
        return Err(Error::invalid(format!("space index {bad} out of range")));
    }
    let mass: f64 = subset.iter().map(|&i| alpha[i].max(0.0)).sum();
    if mass <= 1e-12 {
        return Ok(None);
    }
    Ok(Some(
        subset
            .iter()
            .enumerate()
            .map(|(pos, &i)| (pos + 1) as f64 * alpha[i].max(0.0) / mass)
            .sum(),
    ))
}

/// Voxelwise convex combination of per-space predictions.
pub fn stacked_predict(preds: &[ArrayView2<'_, f64>], alphas: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let k = preds.len();
    if k == 0 {
        return Err(Error::invalid("no predictions to stack"));
    }
    let shape = preds[0].shape();
    if preds.iter().any(|p| p.shape() != shape) {
        return Err(Error::shape("per-space predictions differ in shape"));
    }
    if alphas.dim() != (shape[1], k) {
        return Err(Error::shape(format!(
            "weights {:?} do not match {} voxels × {k} spaces",
            alphas.shape(),
            shape[1]
        )));
    }
    for row in alphas.axis_iter(Axis(0)) {
        check_simplex(row)?;
    }
    let mut out = Array2::zeros((shape[0], shape[1]));
    for v in 0..shape[1] {
        let mut col = out.column_mut(v);
        col.assign(&preds[0].column(v));
        col.mapv_inplace(|x| alphas[[v, 0]] * x);
        for (j, p) in preds.iter().enumerate().skip(1) {
            col.scaled_add(alphas[[v, j]], &p.column(v));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gate {
    Stacked,
    Baseline,
}

/// Block-bootstrap test on the validation correlation improvement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateCriterion {
    pub block_trs: usize,
    pub n_resamples: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for GateCriterion {
    fn default() -> Self {
        Self {
            block_trs: 20,
            n_resamples: 1000,
            confidence: 0.95,
            seed: 0,
        }
    }
}

/// Which stories produced the stacked model and which form the validation segment.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SegmentProvenance {
    pub fit_stories: Vec<String>,
    pub validation_stories: Vec<String>,
}

#[derive(Default, Clone, Copy)]
struct Sums {
    n: f64,
    x: f64,
    y: f64,
    xx: f64,
    yy: f64,
    xy: f64,
}

impl Sums {
    fn add(&mut self, o: &Sums) {
        self.n += o.n;
        self.x += o.x;
        self.y += o.y;
        self.xx += o.xx;
        self.yy += o.yy;
        self.xy += o.xy;
    }

    fn corr(&self) -> f64 {
        let cov = self.xy - self.x * self.y / self.n;
        let vx = self.xx - self.x * self.x / self.n;
        let vy = self.yy - self.y * self.y / self.n;
        if vx <= 0.0 || vy <= 0.0 {
            0.0
        } else {
            cov / (vx * vy).sqrt()
        }
    }
}

fn block_sums(pred: ArrayView1<'_, f64>, actual: ArrayView1<'_, f64>, block: usize) -> Vec<Sums> {
    let n = pred.len();
    (0..n)
        .step_by(block)
        .map(|s0| {
            let mut acc = Sums::default();
            for t in s0..(s0 + block).min(n) {
                let (x, y) = (pred[t], actual[t]);
                acc.n += 1.0;
                acc.x += x;
                acc.y += y;
                acc.xx += x * x;
                acc.yy += y * y;
                acc.xy += x * y;
            }
            acc
        })
        .collect()
}

/// Per-voxel choice between the stacked and baseline predictions on a validation segment.
pub fn gate_stacked(
    stacked: ArrayView2<'_, f64>,
    baseline: ArrayView2<'_, f64>,
    actual: ArrayView2<'_, f64>,
    provenance: &SegmentProvenance,
    criterion: &GateCriterion,
) -> Result<Vec<Gate>> {
    if let Some(s) = provenance
        .validation_stories
        .iter()
        .find(|s| provenance.fit_stories.contains(s))
    {
        return Err(Error::invalid(format!(
            "validation story '{s}' was also used for fitting"
        )));
    }
    if stacked.shape() != actual.shape() || baseline.shape() != actual.shape() {
        return Err(Error::shape("stacked, baseline and validation responses differ in shape"));
    }
    if criterion.block_trs == 0 || criterion.n_resamples == 0 {
        return Err(Error::invalid("gate needs a positive block length and resample count"));
    }
    if !(criterion.confidence > 0.0 && criterion.confidence < 1.0) {
        return Err(Error::invalid("confidence must lie in (0, 1)"));
    }
    let n = actual.nrows();
    if n < 3 {
        return Err(Error::invalid("validation segment needs at least 3 timepoints"));
    }
    let n_blocks = n.div_ceil(criterion.block_trs);
    let mut rng = ChaCha8Rng::seed_from_u64(criterion.seed);
    let draws: Vec<Vec<usize>> = (0..criterion.n_resamples)
        .map(|_| (0..n_blocks).map(|_| rng.random_range(0..n_blocks)).collect())
        .collect();
    let lower_index = (((1.0 - criterion.confidence) * criterion.n_resamples as f64).floor() as usize)
        .min(criterion.n_resamples - 1);

    let gates: Vec<Gate> = (0..actual.ncols())
        .into_par_iter()
        .map(|v| {
            let sb = block_sums(stacked.column(v), actual.column(v), criterion.block_trs);
            let bb = block_sums(baseline.column(v), actual.column(v), criterion.block_trs);
            let total = |blocks: &[Sums], pick: &mut dyn Iterator<Item = usize>| {
                let mut acc = Sums::default();
                pick.for_each(|b| acc.add(&blocks[b]));
                acc.corr()
            };
            let observed = total(&sb, &mut (0..n_blocks)) - total(&bb, &mut (0..n_blocks));
            if !(observed > 0.0) {
                return Gate::Baseline;
            }
            let mut deltas: Vec<f64> = draws
                .iter()
                .map(|d| total(&sb, &mut d.iter().copied()) - total(&bb, &mut d.iter().copied()))
                .collect();
            deltas.sort_by(f64::total_cmp);
            if deltas[lower_index] > 0.0 {
                Gate::Stacked
            } else {
                Gate::Baseline
            }
        })
        .collect();
    Ok(gates)
}

/// Stacked weights, attribution summary and gate for every voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct StackAttribution {
    /// `n_voxels × k`
    pub alphas: Array2<f64>,
    pub center_of_mass: Vec<Option<f64>>,
    pub gate: Vec<Gate>,
}

/// Final prediction: stacked where the gate passed, baseline elsewhere.
pub fn gated_prediction(stacked: ArrayView2<'_, f64>, baseline: ArrayView2<'_, f64>, gate: &[Gate]) -> Result<Array2<f64>> {
    if stacked.shape() != baseline.shape() || gate.len() != stacked.ncols() {
        return Err(Error::shape("gate, stacked and baseline predictions disagree"));
    }
    let mut out = baseline.to_owned();
    for (v, g) in gate.iter().enumerate() {
        if *g == Gate::Stacked {
            out.slice_mut(s![.., v]).assign(&stacked.column(v));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2, Array2};
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut rng))
    }

    #[test]
    fn fold_partition_checks() {
        assert!(FoldSpec::new(vec![vec![0, 1], vec![2]], 4).is_err());
        assert!(FoldSpec::new(vec![vec![0, 1], vec![1, 2, 3]], 4).is_err());
        assert!(FoldSpec::new(vec![vec![0, 1], vec![2, 3]], 4).is_ok());
        let f = FoldSpec::aligned(&[30, 40, 35, 50, 45, 20], 5, 20).unwrap();
        assert_eq!(f.folds().len(), 5);
        // story boundaries respected
        let bounds = [0usize, 30, 70, 105, 155, 200, 220];
        for fold in f.folds() {
            assert!(bounds.contains(&fold[0]));
            assert!(bounds.contains(&(fold.last().unwrap() + 1)));
        }
        let f = FoldSpec::aligned(&[500], 5, 20).unwrap();
        for fold in f.folds() {
            assert_eq!(fold[0] % 20, 0);
            assert!((80..=120).contains(&fold.len()), "{}", fold.len());
        }
    }

    #[test]
    fn realizable_heldout() {
        let x = gaussian(300, 8, 1);
        let y = x.dot(&gaussian(8, 4, 2));
        let folds = FoldSpec::aligned(&[300], 5, 20).unwrap();
        let cv = CvConfig::fixed_alpha(1e-6);
        let h = heldout_predictions(&[x.view()], y.view(), &folds, &cv).unwrap();
        let s = crate::ridge::score(h.per_space[0].view(), y.view()).unwrap();
        assert!(s.r.iter().all(|&r| r >= 0.99));
    }

    #[test]
    fn heldout_matches_manual_fold_loop() {
        let xa = gaussian(200, 5, 3);
        let xb = gaussian(200, 7, 4);
        let y = &xa.dot(&gaussian(5, 3, 5)) + &gaussian(200, 3, 6);
        let folds = FoldSpec::aligned(&[60, 50, 40, 30, 20], 5, 20).unwrap();
        let cv = CvConfig {
            alpha_grid: crate::ridge::logspace(-1.0, 3.0, 4),
            n_bootstraps: 3,
            chunk_length_trs: 10,
            ..Default::default()
        };
        let h = heldout_predictions(&[xa.view(), xb.view()], y.view(), &folds, &cv).unwrap();
        for (k, x) in [&xa, &xb].iter().enumerate() {
            let mut manual = Array2::zeros(y.raw_dim());
            for held in folds.folds() {
                let train: Vec<usize> = (0..200).filter(|r| !held.contains(r)).collect();
                let sol = fit_ridge_matrix(x.select(Axis(0), &train).view(), y.select(Axis(0), &train).view(), &cv).unwrap();
                let p = x.select(Axis(0), held).dot(&sol.weights);
                for (i, &r) in held.iter().enumerate() {
                    manual.row_mut(r).assign(&p.row(i));
                }
            }
            let diff = (&manual - &h.per_space[k]).iter().fold(0.0f64, |m, d| m.max(d.abs()));
            assert!(diff < 1e-10, "space {k}: {diff}");
        }
    }

    #[test]
    fn residual_covariance_cases() {
        let y = gaussian(50, 2, 7);
        let other = gaussian(50, 2, 8);
        let h = HeldoutPredictions {
            per_space: vec![y.clone(), other.clone()],
            fold_of_row: vec![0; 50],
        };
        let r = residual_covariance(&h, y.view()).unwrap();
        for v in 0..2 {
            let m = r.voxel(v);
            assert_eq!(m[[0, 0]], 0.0);
            assert_eq!(m[[0, 1]], 0.0);
            assert!(m[[1, 1]] > 0.0);
        }
        let h = HeldoutPredictions {
            per_space: vec![other.clone(), other.clone()],
            fold_of_row: vec![0; 50],
        };
        let r = residual_covariance(&h, y.view()).unwrap();
        let m = r.voxel(0);
        assert!(m.iter().all(|&v| v == m[[0, 0]]));
    }

    #[test]
    fn residual_covariance_brute_force() {
        let y = gaussian(50, 4, 9);
        let preds: Vec<Array2<f64>> = (0..3).map(|k| gaussian(50, 4, 20 + k)).collect();
        let h = HeldoutPredictions {
            per_space: preds.clone(),
            fold_of_row: vec![0; 50],
        };
        let r = residual_covariance(&h, y.view()).unwrap();
        for v in 0..4 {
            for p in 0..3 {
                for q in 0..3 {
                    let mut acc = 0.0;
                    for i in 0..50 {
                        acc += (y[[i, v]] - preds[p][[i, v]]) * (y[[i, v]] - preds[q][[i, v]]);
                    }
                    assert!((r.per_voxel[[v, p, q]] - acc).abs() < 1e-10);
                }
            }
            let m = r.voxel(v);
            assert_eq!(m, m.t());
        }
    }

    #[test]
    fn center_of_mass_cases() {
        let mut one_hot = vec![0.0; 8];
        one_hot[4] = 1.0;
        assert_eq!(center_of_mass(arr1(&one_hot).view()).unwrap(), 5.0);
        assert_eq!(center_of_mass(arr1(&[0.25; 4]).view()).unwrap(), 2.5);
        assert!((center_of_mass(arr1(&[0.8, 0.2]).view()).unwrap() - 1.2).abs() < 1e-15);
        assert_eq!(center_of_mass(arr1(&[0.8, 0.2, 0.0, 0.0]).view()).unwrap(), center_of_mass(arr1(&[0.8, 0.2]).view()).unwrap());
        assert!(center_of_mass(arr1(&[0.5, 0.6]).view()).is_err());
        assert!(center_of_mass(arr1(&[1.5, -0.5]).view()).is_err());
        // audio layers 0..3 renormalized, semantic weight at index 3 ignored
        let a = arr1(&[0.1, 0.0, 0.3, 0.6]);
        assert!((subset_center_of_mass(a.view(), &[0, 1, 2]).unwrap().unwrap() - 2.5).abs() < 1e-12);
        assert_eq!(subset_center_of_mass(arr1(&[0.0, 0.0, 1.0]).view(), &[0, 1]).unwrap(), None);
    }

    #[test]
    fn stacked_predict_cases() {
        let a = gaussian(30, 3, 1);
        let b = gaussian(30, 3, 2);
        let one_hot = arr2(&[[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]);
        let out = stacked_predict(&[a.view(), b.view()], one_hot.view()).unwrap();
        for t in 0..30 {
            assert_eq!(out[[t, 0]].to_bits(), a[[t, 0]].to_bits());
            assert_eq!(out[[t, 1]].to_bits(), b[[t, 1]].to_bits());
        }
        let w = arr2(&[[0.3, 0.7], [0.5, 0.5], [0.9, 0.1]]);
        let same = stacked_predict(&[a.view(), a.view()], w.view()).unwrap();
        assert!((&same - &a).iter().all(|d| d.abs() < 1e-14));
        let out = stacked_predict(&[a.view(), b.view()], w.view()).unwrap();
        for t in 0..30 {
            for v in 0..3 {
                let oracle = w[[v, 0]] * a[[t, v]] + w[[v, 1]] * b[[t, v]];
                assert!((out[[t, v]] - oracle).abs() < 1e-12);
            }
        }
        assert!(stacked_predict(&[a.view(), b.view()], arr2(&[[1.0, 0.0]]).view()).is_err());
    }

    #[test]
    fn qp_weights_beat_single_spaces_on_training_residuals() {
        let y = gaussian(120, 6, 1);
        let preds: Vec<Array2<f64>> = (0..4).map(|k| &y * (0.2 * k as f64) + &gaussian(120, 6, 40 + k)).collect();
        let h = HeldoutPredictions {
            per_space: preds.clone(),
            fold_of_row: vec![0; 120],
        };
        let cov = residual_covariance(&h, y.view()).unwrap();
        let alphas = stack_weights(&cov).unwrap();
        let views: Vec<_> = preds.iter().map(|p| p.view()).collect();
        let stacked = stacked_predict(&views, alphas.view()).unwrap();
        for v in 0..6 {
            let power = |p: ArrayView1<f64>| (&y.column(v) - &p).mapv(|e| e * e).sum();
            let st = power(stacked.column(v));
            for p in &preds {
                assert!(st <= power(p.column(v)) + 1e-8);
            }
        }
    }

    #[test]
    fn gate_cases() {
        let y = gaussian(200, 4, 1);
        let good = &y + &(gaussian(200, 4, 2) * 0.1);
        let bad = gaussian(200, 4, 3);
        let prov = SegmentProvenance {
            fit_stories: vec!["a".into()],
            validation_stories: vec!["v".into()],
        };
        let crit = GateCriterion::default();
        let g = gate_stacked(good.view(), bad.view(), y.view(), &prov, &crit).unwrap();
        assert!(g.iter().all(|&x| x == Gate::Stacked));
        let g = gate_stacked(good.view(), good.view(), y.view(), &prov, &crit).unwrap();
        assert!(g.iter().all(|&x| x == Gate::Baseline));
        let leaky = SegmentProvenance {
            fit_stories: vec!["a".into(), "v".into()],
            validation_stories: vec!["v".into()],
        };
        assert!(gate_stacked(good.view(), bad.view(), y.view(), &leaky, &crit).is_err());
        let out = gated_prediction(good.view(), bad.view(), &[Gate::Stacked, Gate::Baseline, Gate::Baseline, Gate::Stacked]).unwrap();
        assert_eq!(out.column(0), good.column(0));
        assert_eq!(out.column(1), bad.column(1));
    }

    #[test]
    fn composition_layers() {
        assert_eq!(even_layers(12), vec![2, 4, 6, 8, 10, 12]);
        assert_eq!(even_layers(1), Vec::<usize>::new());
    }
}
