//! Response preprocessing: Savitzky-Golay drift removal, voxelwise z-scoring and
//! the trimming rules for scan edges and early-story evaluation artifacts.

use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::solve_small;

pub const DEFAULT_DETREND_WINDOW_SECONDS: f64 = 120.0;
pub const DEFAULT_DETREND_ORDER: usize = 2;

/// How the evaluation exclusion relates to volumes already removed upstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionMode {
    /// The exclusion window is measured from story onset; volumes trimmed
    /// upstream count toward it.
    #[default]
    FromOnset,
    /// The exclusion is applied on top of whatever was trimmed upstream.
    Additional,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrimPolicy {
    /// Volumes removed from each end of every story.
    pub train_trim_volumes: usize,
    /// Extra volumes removed from the start of test stories.
    pub test_extra_volumes: usize,
    /// Seconds of each test story, from onset, excluded from scoring.
    pub eval_exclusion_seconds: f64,
    #[serde(default)]
    pub exclusion_mode: ExclusionMode,
}

impl Default for TrimPolicy {
    fn default() -> Self {
        Self {
            train_trim_volumes: 10,
            test_extra_volumes: 40,
            eval_exclusion_seconds: 100.0,
            exclusion_mode: ExclusionMode::FromOnset,
        }
    }
}

impl TrimPolicy {
    pub fn none() -> Self {
        Self {
            train_trim_volumes: 0,
            test_extra_volumes: 0,
            eval_exclusion_seconds: 0.0,
            exclusion_mode: ExclusionMode::FromOnset,
        }
    }

    /// Number of volumes covered by the evaluation exclusion at this TR.
    pub fn exclusion_volumes(&self, tr_seconds: f64) -> Result<usize> {
        if !(tr_seconds > 0.0) {
            return Err(Error::invalid(format!("tr_seconds must be positive, got {tr_seconds}")));
        }
        if !(self.eval_exclusion_seconds >= 0.0) {
            return Err(Error::invalid("eval_exclusion_seconds must be non-negative"));
        }
        let vols = self.eval_exclusion_seconds / tr_seconds;
        if (vols - vols.round()).abs() > 1e-9 * vols.max(1.0) {
            return Err(Error::invalid(format!(
                "eval exclusion of {} s is not a whole number of {} s volumes",
                self.eval_exclusion_seconds, tr_seconds
            )));
        }
        Ok(vols.round() as usize)
    }

    /// Volumes removed from the start of a test story before evaluation trimming.
    pub fn test_start_volumes(&self) -> usize {
        self.train_trim_volumes + self.test_extra_volumes
    }
}

/// Savitzky-Golay window length in samples: `window_seconds / tr` rounded, bumped to odd.
pub fn detrend_window_samples(tr_seconds: f64, window_seconds: f64) -> Result<usize> {
    if !(tr_seconds > 0.0) {
        return Err(Error::invalid(format!("tr_seconds must be positive, got {tr_seconds}")));
    }
    if !(window_seconds > 0.0) {
        return Err(Error::invalid("detrend window must be positive"));
    }
    let n = (window_seconds / tr_seconds).round().max(1.0) as usize;
    Ok(if n.is_multiple_of(2) { n + 1 } else { n })
}

/// Least-squares polynomial weights over offsets `-left..=right`, evaluated at offset 0.
fn local_fit_weights(left: usize, right: usize, order: usize) -> Vec<f64> {
    let scale = left.max(right).max(1) as f64;
    let offsets: Vec<f64> = (-(left as i64)..=right as i64)
        .map(|o| o as f64 / scale)
        .collect();
    let m = order + 1;
    let mut gram = vec![vec![0.0; m]; m];
    for &o in &offsets {
        let powers: Vec<f64> = (0..m).map(|j| o.powi(j as i32)).collect();
        for a in 0..m {
            for b in 0..m {
                gram[a][b] += powers[a] * powers[b];
            }
        }
    }
    let mut e0 = vec![0.0; m];
    e0[0] = 1.0;
    // window always holds more points than coefficients, so the Gram matrix is nonsingular
    let c = solve_small(gram, e0).expect("nonsingular Savitzky-Golay normal equations");
    offsets
        .iter()
        .map(|&o| (0..m).map(|j| c[j] * o.powi(j as i32)).sum())
        .collect()
}

/// Smooth trend estimated by local polynomial fits. Interior samples use the
/// full symmetric window; samples near the ends use the truncated window.
pub fn savgol_trend(
    series: ArrayView2<'_, f64>,
    tr_seconds: f64,
    window_seconds: f64,
    order: usize,
) -> Result<Array2<f64>> {
    let window = detrend_window_samples(tr_seconds, window_seconds)?;
    let n = series.nrows();
    if n <= window {
        return Err(Error::invalid(format!(
            "series of {n} samples is not longer than the {window}-sample detrend window"
        )));
    }
    if order + 1 > window / 2 + 1 {
        return Err(Error::invalid(format!(
            "polynomial order {order} too high for a {window}-sample window"
        )));
    }
    let half = window / 2;
    let interior = local_fit_weights(half, half, order);
    let mut trend = Array2::zeros(series.raw_dim());
    for t in 0..n {
        let left = t.min(half);
        let right = (n - 1 - t).min(half);
        let edge;
        let weights = if left == half && right == half {
            &interior
        } else {
            edge = local_fit_weights(left, right, order);
            &edge
        };
        let mut row = trend.row_mut(t);
        for (k, &w) in weights.iter().enumerate() {
            row.scaled_add(w, &series.row(t - left + k));
        }
    }
    Ok(trend)
}

/// Subtract the Savitzky-Golay trend from every voxel.
pub fn savgol_detrend(
    series: ArrayView2<'_, f64>,
    tr_seconds: f64,
    window_seconds: f64,
    order: usize,
) -> Result<Array2<f64>> {
    let trend = savgol_trend(series, tr_seconds, window_seconds, order)?;
    Ok(&series - &trend)
}

/// Z-scored data plus a per-voxel flag for columns that had zero variance.
#[derive(Debug, Clone, PartialEq)]
pub struct ZScored {
    pub data: Array2<f64>,
    pub zero_variance: Vec<bool>,
}

/// Center each column and scale to unit population variance. Constant columns
/// become zeros and are flagged.
pub fn zscore_voxels(series: ArrayView2<'_, f64>) -> ZScored {
    let n = series.nrows() as f64;
    let mut data = series.to_owned();
    let mut zero_variance = vec![false; series.ncols()];
    for (j, mut col) in data.axis_iter_mut(Axis(1)).enumerate() {
        let mean = col.sum() / n;
        col.mapv_inplace(|v| v - mean);
        let var = col.iter().map(|v| v * v).sum::<f64>() / n;
        let scale = series.column(j).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(var > (1e-13 * scale).powi(2)) {
            col.fill(0.0);
            zero_variance[j] = true;
        } else {
            let sd = var.sqrt();
            col.mapv_inplace(|v| v / sd);
        }
    }
    ZScored { data, zero_variance }
}

/// Drop `train_trim_volumes` rows from both ends.
pub fn trim_for_training(
    series: ArrayView2<'_, f64>,
    policy: &TrimPolicy,
    tr_seconds: f64,
) -> Result<Array2<f64>> {
    policy.exclusion_volumes(tr_seconds)?;
    let k = policy.train_trim_volumes;
    let n = series.nrows();
    if n <= 2 * k {
        return Err(Error::invalid(format!(
            "series of {n} volumes is too short to trim {k} from each end"
        )));
    }
    Ok(series.slice(s![k..n - k, ..]).to_owned())
}

/// Test-story trimming: the training trim at both ends plus `test_extra_volumes`
/// at the start. Returns the trimmed series and the number of volumes removed
/// from onset.
pub fn trim_for_test(
    series: ArrayView2<'_, f64>,
    policy: &TrimPolicy,
    tr_seconds: f64,
) -> Result<(Array2<f64>, usize)> {
    policy.exclusion_volumes(tr_seconds)?;
    let start = policy.test_start_volumes();
    let end = policy.train_trim_volumes;
    let n = series.nrows();
    if n <= start + end {
        return Err(Error::invalid(format!(
            "test series of {n} volumes is too short to trim {start} + {end}"
        )));
    }
    Ok((series.slice(s![start..n - end, ..]).to_owned(), start))
}

/// Remove the early-story evaluation window from paired predictions and
/// responses. `upstream_volumes` is how many volumes were already removed from
/// story onset before these series start.
pub fn trim_for_evaluation(
    pred: ArrayView2<'_, f64>,
    actual: ArrayView2<'_, f64>,
    policy: &TrimPolicy,
    tr_seconds: f64,
    upstream_volumes: usize,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if pred.shape() != actual.shape() {
        return Err(Error::shape(format!(
            "prediction {:?} and response {:?} differ",
            pred.shape(),
            actual.shape()
        )));
    }
    let excl = policy.exclusion_volumes(tr_seconds)?;
    let drop = match policy.exclusion_mode {
        ExclusionMode::FromOnset => excl.saturating_sub(upstream_volumes),
        ExclusionMode::Additional => excl,
    };
    if drop >= pred.nrows() && drop > 0 {
        return Err(Error::invalid(format!(
            "series of {} volumes is shorter than the {drop}-volume exclusion",
            pred.nrows()
        )));
    }
    Ok((
        pred.slice(s![drop.., ..]).to_owned(),
        actual.slice(s![drop.., ..]).to_owned(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array1, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut rng))
    }

    #[test]
    fn window_rounds_up_to_odd() {
        assert_eq!(detrend_window_samples(2.0, 120.0).unwrap(), 61);
        assert_eq!(detrend_window_samples(1.0, 121.0).unwrap(), 121);
        assert!(detrend_window_samples(0.0, 120.0).is_err());
    }

    #[test]
    fn constant_series_detrends_to_zero() {
        let x = Array2::from_elem((200, 3), 7.25);
        let r = savgol_detrend(x.view(), 2.0, 120.0, 2).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-10), "{}", r.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }

    #[test]
    fn quadratic_trend_removed_in_interior() {
        let n = 300;
        let x = Array2::from_shape_fn((n, 1), |(t, _)| {
            let t = t as f64;
            0.003 * t * t - 0.7 * t + 4.0
        });
        let r = savgol_detrend(x.view(), 2.0, 120.0, 2).unwrap();
        let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for t in 30..n - 30 {
            assert!(r[[t, 0]].abs() < 1e-9 * scale, "t={t} res={}", r[[t, 0]]);
        }
    }

    #[test]
    fn short_series_and_bad_tr_rejected() {
        let x = Array2::<f64>::zeros((61, 2));
        assert!(savgol_detrend(x.view(), 2.0, 120.0, 2).is_err());
        assert!(savgol_detrend(noise(100, 2, 1).view(), -2.0, 120.0, 2).is_err());
    }

    /// Oracle: residual = (I - H) e for white noise e, so its expected variance is
    /// mean over t of ||row t of (I - H)||^2. Built directly from explicit
    /// polynomial least squares per sample.
    fn expected_residual_variance(n: usize, half: usize) -> f64 {
        let mut total = 0.0;
        for t in 0..n {
            let lo = t.saturating_sub(half);
            let hi = (t + half).min(n - 1);
            // brute-force fit of [1, u, u^2] on the window via normal equations
            let pts: Vec<f64> = (lo..=hi).map(|k| k as f64 - t as f64).collect();
            let mut g = [[0.0f64; 3]; 3];
            for &u in &pts {
                let p = [1.0, u, u * u];
                for a in 0..3 {
                    for b in 0..3 {
                        g[a][b] += p[a] * p[b];
                    }
                }
            }
            let gv: Vec<Vec<f64>> = g.iter().map(|r| r.to_vec()).collect();
            let c = solve_small(gv, vec![1.0, 0.0, 0.0]).unwrap();
            let w: Vec<f64> = pts.iter().map(|&u| c[0] + c[1] * u + c[2] * u * u).collect();
            let w_t = w[t - lo];
            let sq: f64 = w.iter().map(|v| v * v).sum();
            // ||e_t - w||^2 = 1 - 2 w_t + ||w||^2
            total += 1.0 - 2.0 * w_t + sq;
        }
        total / n as f64
    }

    #[test]
    fn white_noise_variance_preserved() {
        let n = 600;
        let reps = 40;
        let mut acc = 0.0;
        for rep in 0..reps {
            let e = noise(n, 1, 100 + rep);
            let x = Array2::from_shape_fn((n, 1), |(t, _)| {
                let t = t as f64;
                2e-4 * t * t - 0.05 * t + 1.0 + e[[t as usize, 0]]
            });
            let r = savgol_detrend(x.view(), 2.0, 120.0, 2).unwrap();
            acc += r.column(0).iter().map(|v| v * v).sum::<f64>() / n as f64;
        }
        let got = acc / reps as f64;
        let oracle = expected_residual_variance(n, 30);
        assert!((got - 1.0).abs() < 0.05, "residual variance {got}");
        assert!((got - oracle).abs() < 0.02, "residual variance {got} vs oracle {oracle}");
    }

    #[test]
    fn second_pass_changes_little() {
        // Local polynomial smoothing is not a projection, so a second pass is not
        // an exact no-op; it only removes what leaks through the filter passband.
        let n = 400;
        let e = noise(n, 4, 9);
        let x = Array2::from_shape_fn((n, 4), |(t, j)| {
            let tt = t as f64;
            3.0 * (tt / 150.0 + j as f64).sin() + 1e-3 * tt * tt / 10.0 + e[[t, j]]
        });
        let once = savgol_detrend(x.view(), 2.0, 120.0, 2).unwrap();
        let twice = savgol_detrend(once.view(), 2.0, 120.0, 2).unwrap();
        let drift_removed = (&x - &once).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let second = (&once - &twice)
            .slice(s![30..n - 30, ..])
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(second < 0.1 * drift_removed, "second pass {second} vs first {drift_removed}");
    }

    #[test]
    fn zscore_small_column() {
        let x = ndarray::arr2(&[[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]]);
        let z = zscore_voxels(x.view());
        let c0: Array1<f64> = z.data.column(0).to_owned();
        assert!(c0.sum().abs() < 1e-12);
        assert!((c0.mapv(|v| v * v).sum() / 3.0 - 1.0).abs() < 1e-12);
        assert_eq!(z.zero_variance, vec![false, true]);
        assert!(z.data.column(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zscore_random_and_idempotent() {
        let x = noise(1000, 10, 3).mapv(|v| 3.0 * v + 2.0);
        let z = zscore_voxels(x.view());
        for col in z.data.axis_iter(Axis(1)) {
            let m = col.sum() / 1000.0;
            let v = col.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 1000.0;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-9);
        }
        let zz = zscore_voxels(z.data.view());
        assert!((&zz.data - &z.data).iter().all(|d| d.abs() < 1e-9));
    }

    #[test]
    fn training_trim() {
        let p = TrimPolicy::default();
        let x = Array2::<f64>::zeros((300, 2));
        assert_eq!(trim_for_training(x.view(), &p, 2.0).unwrap().nrows(), 280);
        assert_eq!(trim_for_training(x.view(), &TrimPolicy::none(), 2.0).unwrap(), x);
        assert!(trim_for_training(Array2::<f64>::zeros((19, 2)).view(), &p, 2.0).is_err());
    }

    #[test]
    fn evaluation_trim() {
        let p = TrimPolicy::default();
        let a = Array2::from_shape_fn((200, 2), |(t, j)| (t * 2 + j) as f64);
        let (pp, aa) = trim_for_evaluation(a.view(), a.view(), &p, 2.0, 0).unwrap();
        assert_eq!(pp.nrows(), 150);
        assert_eq!(aa[[0, 0]], 100.0);
        // after the 50-volume test trim, nothing more is removed from onset
        let (pp, _) = trim_for_evaluation(a.view(), a.view(), &p, 2.0, 50).unwrap();
        assert_eq!(pp.nrows(), 200);
        let add = TrimPolicy {
            exclusion_mode: ExclusionMode::Additional,
            ..p
        };
        let (pp, _) = trim_for_evaluation(a.view(), a.view(), &add, 2.0, 50).unwrap();
        assert_eq!(pp.nrows(), 150);
        let (pp, _) = trim_for_evaluation(a.view(), a.view(), &TrimPolicy::none(), 2.0, 0).unwrap();
        assert_eq!(pp, a);
        let b = Array2::<f64>::zeros((199, 2));
        assert!(trim_for_evaluation(a.view(), b.view(), &p, 2.0, 0).is_err());
        assert!(trim_for_evaluation(a.view(), a.view(), &p, 3.0, 0).is_err());
    }

    #[test]
    fn test_trim_matches_exclusion_window() {
        let p = TrimPolicy::default();
        let x = Array2::<f64>::zeros((300, 1));
        let (t, removed) = trim_for_test(x.view(), &p, 2.0).unwrap();
        assert_eq!(removed, 50);
        assert_eq!(removed, p.exclusion_volumes(2.0).unwrap());
        assert_eq!(t.nrows(), 240);
    }

    proptest::proptest! {
        #[test]
        fn trimming_commutes_with_voxel_slicing(rows in 25usize..80, cols in 1usize..6, pick in 0usize..6) {
            let pick = pick % cols;
            let x = Array2::from_shape_fn((rows, cols), |(i, j)| (i * 31 + j * 7) as f64);
            let p = TrimPolicy::default();
            let full = trim_for_training(x.view(), &p, 2.0).unwrap();
            let sliced = trim_for_training(x.slice(s![.., pick..pick + 1]), &p, 2.0).unwrap();
            proptest::prop_assert_eq!(full.slice(s![.., pick..pick + 1]).to_owned(), sliced);
        }
    }
}
