//! Combine two feature spaces per voxel and attribute each voxel to a space.

use ndarray::ArrayView2;
use voxscale::io::manifest::StoryRole;
use voxscale::pipeline::{prepare_dataset, PrepConfig};
use voxscale::ridge::CvConfig;
use voxscale::stacker::{heldout_predictions, residual_covariance, solve_simplex_qp, stack_weights, FoldSpec};
use voxscale::synth::{generate, SynthSpec};

fn main() -> voxscale::Result<()> {
    let r = ndarray::arr2(&[[1.0, 0.0], [0.0, 4.0]]);
    println!("weights for residual covariance diag(1, 4): {}", solve_simplex_qp(r.view())?);

    let dir = tempfile::tempdir().expect("temp dir");
    let manifest = generate(&SynthSpec::two_space(5, 10, 0.5))?.write(dir.path())?;
    let spaces = manifest.space_names();
    let data = prepare_dataset(&manifest, &spaces, None, &PrepConfig::default())?;
    let train = data.with_role(StoryRole::Train);
    let xs = spaces.iter().map(|s| data.design(s, &train)).collect::<voxscale::Result<Vec<_>>>()?;
    let views: Vec<ArrayView2<'_, f64>> = xs.iter().map(|x| x.view()).collect();
    let y = data.responses(&train)?;

    let lengths: Vec<usize> = train.iter().map(|s| s.response.nrows()).collect();
    let folds = FoldSpec::aligned(&lengths, 5, 20)?;
    let held = heldout_predictions(&views, y.view(), &folds, &CvConfig::fixed_alpha(10.0))?;
    let alphas = stack_weights(&residual_covariance(&held, y.view())?)?;
    for v in [0, 1, 10, 11] {
        println!("voxel {v:>2}: {} = {:.3}, {} = {:.3}", spaces[0], alphas[[v, 0]], spaces[1], alphas[[v, 1]]);
    }
    Ok(())
}
