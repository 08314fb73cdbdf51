//! Fit and score voxelwise ridge encoding models.

use voxscale::io::manifest::StoryRole;
use voxscale::pipeline::{prepare_dataset, PrepConfig};
use voxscale::ridge::{fit_ridge_matrix, predict_matrix, score, CvConfig};
use voxscale::synth::{generate, SynthSpec};

fn main() -> voxscale::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let manifest = generate(&SynthSpec::two_space(3, 20, 1.0))?.write(dir.path())?;
    let data = prepare_dataset(&manifest, &["audio".to_string()], None, &PrepConfig::default())?;
    let train = data.with_role(StoryRole::Train);
    let test = data.with_role(StoryRole::Test);

    let x = data.design("audio", &train)?;
    let y = data.responses(&train)?;
    let sol = fit_ridge_matrix(x.view(), y.view(), &CvConfig::default())?;
    println!("weights {:?}; alpha of voxel 0 = {}", sol.weights.dim(), sol.alpha_per_voxel[0]);

    let pred = predict_matrix(sol.weights.view(), data.design("audio", &test)?.view())?;
    let s = score(pred.view(), data.responses(&test)?.view())?;
    let audio_mean = s.r[..20].iter().sum::<f64>() / 20.0;
    let other_mean = s.r[20..].iter().sum::<f64>() / 20.0;
    println!("test r: audio-driven voxels {audio_mean:.3}, semantic-driven voxels {other_mean:.3}");
    Ok(())
}
