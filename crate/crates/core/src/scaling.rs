//! Log-linear scaling fits of encoding performance against model or data size.

use ndarray::{Array1, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::stats::{mean, pearson};

/// Percent change of each score relative to `scores[baseline]`.
pub fn percent_change(scores: &[f64], baseline: usize) -> Result<Vec<f64>> {
    let base = *scores
        .get(baseline)
        .ok_or_else(|| Error::invalid(format!("baseline index {baseline} out of range")))?;
    if base == 0.0 || !base.is_finite() {
        return Err(Error::invalid("baseline score must be finite and non-zero"));
    }
    Ok(scores.iter().map(|s| 100.0 * (s - base) / base.abs()).collect())
}

/// Ordinary least squares `score ≈ intercept + slope · log_base(size)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingFit {
    /// Score change per factor-of-`log_base` increase in size.
    pub slope: f64,
    pub intercept: f64,
    /// Correlation between log size and score; 0 when the scores are flat.
    pub pearson_r: f64,
    /// Scores were constant, so the correlation is undefined.
    pub degenerate: bool,
    pub log_base: f64,
}

impl ScalingFit {
    pub fn predict(&self, size: f64) -> f64 {
        self.intercept + self.slope * size.log(self.log_base)
    }
}

fn log_sizes(sizes: &[f64], log_base: f64) -> Result<Vec<f64>> {
    if !(log_base > 1.0) {
        return Err(Error::invalid(format!("log base must exceed 1, got {log_base}")));
    }
    if sizes.len() < 2 {
        return Err(Error::invalid("scaling fit needs at least two sizes"));
    }
    if let Some(s) = sizes.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(Error::invalid(format!("sizes must be positive and finite, got {s}")));
    }
    if sizes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("sizes must be strictly increasing"));
    }
    Ok(sizes.iter().map(|s| s.log(log_base)).collect())
}

fn ols(x: &[f64], y: &[f64]) -> (f64, f64) {
    let (mx, my) = (mean(ArrayView1::from(x)), mean(ArrayView1::from(y)));
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

pub fn fit_loglinear(sizes: &[f64], scores: &[f64], log_base: f64) -> Result<ScalingFit> {
    let x = log_sizes(sizes, log_base)?;
    if scores.len() != sizes.len() {
        return Err(Error::shape(format!("{} sizes but {} scores", sizes.len(), scores.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("scores must be finite"));
    }
    let (slope, intercept) = ols(&x, scores);
    let r = pearson(ArrayView1::from(&x[..]), ArrayView1::from(scores));
    Ok(ScalingFit {
        slope: if r.is_some() { slope } else { 0.0 },
        intercept,
        pearson_r: r.unwrap_or(0.0),
        degenerate: r.is_none(),
        log_base,
    })
}

/// Per-voxel slopes `m_v` of the score gain over the smallest size against
/// log size, from a `n_sizes × n_voxels` score matrix.
pub fn voxelwise_slopes(sizes: &[f64], scores: ArrayView2<'_, f64>, log_base: f64) -> Result<Array1<f64>> {
    let x = log_sizes(sizes, log_base)?;
    if scores.nrows() != sizes.len() {
        return Err(Error::shape(format!(
            "{} sizes but {} score rows",
            sizes.len(),
            scores.nrows()
        )));
    }
    Ok(scores
        .columns()
        .into_iter()
        .map(|c: ArrayView1<'_, f64>| {
            let gain: Vec<f64> = c.iter().map(|v| v - c[0]).collect();
            ols(&x, &gain).0
        })
        .collect())
}

/// Nested story subsets: the first `n` entries of one seeded permutation for each size.
pub fn story_subsets(stories: &[String], sizes: &[usize], seed: u64) -> Result<Vec<Vec<String>>> {
    if let Some(&n) = sizes.iter().find(|&&n| n == 0 || n > stories.len()) {
        return Err(Error::invalid(format!(
            "subset size {n} outside 1..={}",
            stories.len()
        )));
    }
    let mut order: Vec<String> = stories.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(sizes.iter().map(|&n| order[..n].to_vec()).collect())
}
