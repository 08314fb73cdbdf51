//! Resample word-rate features to TRs and stack FIR delays.

use ndarray::Array2;
use voxscale::temporal::{lanczos_resample, make_delayed, tr_onsets, FeatureTimeSeries, LanczosConfig, DEFAULT_DELAYS};

fn main() -> voxscale::Result<()> {
    let times: Vec<f64> = (0..120).map(|k| 0.3 + 0.5 * k as f64).collect();
    let values = Array2::from_shape_fn((120, 2), |(k, j)| if j == 0 { 1.0 } else { (k as f64 * 0.2).sin() });
    let words = FeatureTimeSeries::new(times, values)?;

    let trs = tr_onsets(30, 2.0);
    let resampled = lanczos_resample(&words, &trs, &LanczosConfig::default())?;
    println!("resampled {:?}; constant column mid-story = {:.4}", resampled.dim(), resampled[[15, 0]]);

    let delayed = make_delayed(resampled.view(), &DEFAULT_DELAYS)?;
    println!("delayed design {} TRs × {} columns", delayed.n_trs(), delayed.width());
    Ok(())
}
