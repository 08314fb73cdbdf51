//! Log-linear scaling fits over model size and over training-set size.

use ndarray::Array2;
use voxscale::scaling::{fit_loglinear, percent_change, story_subsets, voxelwise_slopes};

fn main() -> voxscale::Result<()> {
    let params = [1.25e8, 3.5e8, 1.3e9, 6.7e9, 3.0e10];
    let scores: Vec<f64> = params.iter().map(|p: &f64| 0.05 + 0.012 * p.log10()).collect();
    let pct = percent_change(&scores, 0)?;
    let fit = fit_loglinear(&params, &pct, 10.0)?;
    println!("{:.2}% gain per 10× parameters (r = {:.3})", fit.slope, fit.pearson_r);

    let stories: Vec<String> = (1..=16).map(|i| format!("story{i:02}")).collect();
    let subsets = story_subsets(&stories, &[2, 4, 8, 16], 0)?;
    println!("nested training subsets: {:?}", subsets[1]);

    let sizes = [2.0, 4.0, 8.0, 16.0];
    let per_voxel = Array2::from_shape_fn((4, 3), |(i, v)| 0.1 + 0.02 * v as f64 * (i as f64 + 1.0));
    println!("per-voxel slopes per doubling: {}", voxelwise_slopes(&sizes, per_voxel.view(), 2.0)?);
    Ok(())
}
