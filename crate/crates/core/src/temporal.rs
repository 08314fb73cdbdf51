//! Temporal alignment of stimulus features to scan times and FIR delay expansion.

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::manifest::check_increasing;

pub const DEFAULT_LOBES: usize = 3;
pub const DEFAULT_DELAYS: [usize; 4] = [1, 2, 3, 4];

/// Features sampled at irregular item times (words, audio windows).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTimeSeries {
    pub timestamps: Vec<f64>,
    /// `n_items × n_features`
    pub values: Array2<f64>,
}

impl FeatureTimeSeries {
    pub fn new(timestamps: Vec<f64>, values: Array2<f64>) -> Result<Self> {
        if timestamps.is_empty() || values.nrows() == 0 {
            return Err(Error::invalid("empty feature series"));
        }
        if timestamps.len() != values.nrows() {
            return Err(Error::shape(format!(
                "{} timestamps for {} feature rows",
                timestamps.len(),
                values.nrows()
            )));
        }
        check_increasing(&timestamps, "feature timestamps")?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature values"));
        }
        Ok(Self { timestamps, values })
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }
}

/// How each resampled row is scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelNormalization {
    /// Divide each row by the sum of its kernel weights, so a constant input
    /// maps to the same constant.
    #[default]
    WeightSum,
    /// Raw weighted sum.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LanczosConfig {
    pub lobes: usize,
    /// Cutoff frequency in Hz. `None` means the TR Nyquist, `1 / (2 TR)`.
    pub cutoff_hz: Option<f64>,
    pub normalization: KernelNormalization,
}

impl Default for LanczosConfig {
    fn default() -> Self {
        Self {
            lobes: DEFAULT_LOBES,
            cutoff_hz: None,
            normalization: KernelNormalization::WeightSum,
        }
    }
}

/// Lanczos kernel in units of cutoff-scaled time. Exactly zero at and beyond `lobes`.
pub fn lanczos_kernel(x: f64, lobes: usize) -> f64 {
    let a = lobes as f64;
    if x == 0.0 {
        return 1.0;
    }
    if x.abs() >= a {
        return 0.0;
    }
    let px = std::f64::consts::PI * x;
    a * px.sin() * (px / a).sin() / (px * px)
}

/// Evenly spaced TR onset times `0, tr, 2 tr, ...`.
pub fn tr_onsets(n_trs: usize, tr_seconds: f64) -> Vec<f64> {
    (0..n_trs).map(|k| k as f64 * tr_seconds).collect()
}

/// Resample `fts` onto `tr_times` with a Lanczos kernel.
pub fn lanczos_resample(fts: &FeatureTimeSeries, tr_times: &[f64], cfg: &LanczosConfig) -> Result<Array2<f64>> {
    if fts.timestamps.is_empty() {
        return Err(Error::invalid("empty feature series"));
    }
    if tr_times.is_empty() {
        return Err(Error::invalid("no TR times"));
    }
    check_increasing(tr_times, "TR times")?;
    if cfg.lobes == 0 {
        return Err(Error::invalid("lobes must be ≥ 1"));
    }
    let cutoff = match cfg.cutoff_hz {
        Some(c) => c,
        None => {
            if tr_times.len() < 2 {
                return Err(Error::invalid("cutoff needs an explicit value with a single TR"));
            }
            let tr = (tr_times[tr_times.len() - 1] - tr_times[0]) / (tr_times.len() - 1) as f64;
            1.0 / (2.0 * tr)
        }
    };
    if !(cutoff > 0.0) {
        return Err(Error::invalid(format!("cutoff must be positive, got {cutoff}")));
    }
    let support = cfg.lobes as f64 / cutoff;
    let ts = &fts.timestamps;
    let mut out = Array2::zeros((tr_times.len(), fts.n_features()));
    let mut lo = 0usize;
    for (row, &t) in tr_times.iter().enumerate() {
        while lo < ts.len() && ts[lo] <= t - support {
            lo += 1;
        }
        let mut wsum = 0.0;
        let mut acc = out.row_mut(row);
        let mut k = lo;
        while k < ts.len() && ts[k] < t + support {
            let w = lanczos_kernel((ts[k] - t) * cutoff, cfg.lobes);
            if w != 0.0 {
                acc.scaled_add(w, &fts.values.row(k));
                wsum += w;
            }
            k += 1;
        }
        if cfg.normalization == KernelNormalization::WeightSum && wsum != 0.0 {
            acc.mapv_inplace(|v| v / wsum);
        }
    }
    Ok(out)
}

/// Base design with time-shifted copies stacked column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayedDesign {
    /// `n_trs × (n_features · n_delays)`, block `d` is the base shifted down by `delays_trs[d]`.
    pub matrix: Array2<f64>,
    pub delays_trs: Vec<usize>,
    pub n_features: usize,
}

impl DelayedDesign {
    pub fn n_trs(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn width(&self) -> usize {
        self.matrix.ncols()
    }
}

pub fn make_delayed(design: ArrayView2<'_, f64>, delays_trs: &[usize]) -> Result<DelayedDesign> {
    if delays_trs.is_empty() {
        return Err(Error::invalid("at least one delay is required"));
    }
    let (n, f) = design.dim();
    if let Some(&d) = delays_trs.iter().find(|&&d| d >= n) {
        return Err(Error::invalid(format!("delay {d} is not shorter than the {n}-TR design")));
    }
    let mut matrix = Array2::zeros((n, f * delays_trs.len()));
    for (b, &d) in delays_trs.iter().enumerate() {
        matrix
            .slice_mut(s![d.., b * f..(b + 1) * f])
            .assign(&design.slice(s![..n - d, ..]));
    }
    Ok(DelayedDesign {
        matrix,
        delays_trs: delays_trs.to_vec(),
        n_features: f,
    })
}
