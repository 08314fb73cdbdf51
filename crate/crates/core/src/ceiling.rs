//! Repeat-based noise ceiling.
//!
//! With `N` repeated presentations of a test stimulus, the signal power is the
//! variance component shared across repeats and the noise power is what is
//! left. `cc_max` is the best correlation any model could reach against the
//! repeat-averaged response.

use ndarray::{Array1, ArrayView1, ArrayView2, ArrayView3, Axis};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::stats::variance;

/// Lower bound applied to `cc_max` before normalization.
pub const CC_MAX_FLOOR: f64 = 0.25;
/// Voxels with unclamped `cc_max` at or below this are hidden from display maps.
pub const DISPLAY_THRESHOLD: f64 = 0.35;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CeilingEstimate {
    pub signal_power: f64,
    pub noise_power: f64,
    pub cc_max: f64,
    pub cc_max_clamped: f64,
    /// Signal power was not positive.
    pub flagged: bool,
    pub n_repeats: usize,
}

impl CeilingEstimate {
    pub fn display(&self) -> bool {
        self.cc_max > DISPLAY_THRESHOLD
    }

    pub fn normalize(&self, cc_abs: f64) -> f64 {
        cc_abs / self.cc_max_clamped
    }
}

/// `(SP, NP)` for a single voxel from `N × T` repeats.
pub fn signal_noise_power(repeats: ArrayView2<'_, f64>) -> Result<(f64, f64)> {
    let (n, t) = repeats.dim();
    if n < 2 {
        return Err(Error::invalid(format!("noise ceiling needs at least 2 repeats, got {n}")));
    }
    if t < 2 {
        return Err(Error::invalid("noise ceiling needs at least 2 timepoints"));
    }
    if repeats.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("repeats contain NaN or infinite values"));
    }
    let summed = repeats.sum_axis(Axis(0));
    let var_sum = variance(summed.view());
    let sum_var: f64 = repeats.axis_iter(Axis(0)).map(variance).sum();
    let nf = n as f64;
    let sp = (var_sum - sum_var) / (nf * nf - nf);
    let np = sum_var / nf - sp;
    Ok((sp, np))
}

/// `cc_max = 1 / sqrt(1 + (NP/SP)/N)`; zero with a flag when `SP ≤ 0`.
pub fn cc_max(signal_power: f64, noise_power: f64, n_repeats: usize) -> CeilingEstimate {
    let (cc, flagged) = if signal_power > 0.0 {
        let ratio = noise_power.max(0.0) / signal_power;
        (1.0 / (1.0 + ratio / n_repeats as f64).sqrt(), false)
    } else {
        (0.0, true)
    };
    CeilingEstimate {
        signal_power,
        noise_power,
        cc_max: cc,
        cc_max_clamped: cc.max(CC_MAX_FLOOR),
        flagged,
        n_repeats,
    }
}

/// Per-voxel ceilings from repeats shaped `N × T × V`.
pub fn noise_ceiling(repeats: ArrayView3<'_, f64>) -> Result<Vec<CeilingEstimate>> {
    let n = repeats.shape()[0];
    repeats
        .axis_iter(Axis(2))
        .map(|vox| {
            let (sp, np) = signal_noise_power(vox)?;
            Ok(cc_max(sp, np, n))
        })
        .collect()
}

/// `CC_abs / max(cc_max, floor)` per voxel.
pub fn normalized_scores(cc_abs: ArrayView1<'_, f64>, ceilings: &[CeilingEstimate]) -> Result<Array1<f64>> {
    if cc_abs.len() != ceilings.len() {
        return Err(Error::shape(format!(
            "{} scores but {} ceiling estimates",
            cc_abs.len(),
            ceilings.len()
        )));
    }
    Ok(cc_abs.iter().zip(ceilings).map(|(&c, e)| e.normalize(c)).collect())
}

pub fn display_mask(ceilings: &[CeilingEstimate]) -> Vec<bool> {
    ceilings.iter().map(CeilingEstimate::display).collect()
}
