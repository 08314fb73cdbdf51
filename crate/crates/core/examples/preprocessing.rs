//! Detrend, trim and prepare a whole dataset.

use ndarray::Array2;
use voxscale::io::manifest::StoryRole;
use voxscale::pipeline::{prepare_dataset, PrepConfig};
use voxscale::preprocess::{savgol_detrend, TrimPolicy};
use voxscale::synth::{generate, SynthSpec};

fn main() -> voxscale::Result<()> {
    let drift = Array2::from_shape_fn((200, 1), |(t, _)| 3.0 + 0.01 * t as f64 + 1e-4 * (t * t) as f64);
    let residual = savgol_detrend(drift.view(), 2.0, 120.0, 2)?;
    println!("quadratic drift after detrending: max |x| = {:.2e}", residual.iter().fold(0.0f64, |m, v| m.max(v.abs())));

    let policy = TrimPolicy::default();
    println!("test stories start {} volumes in", policy.test_start_volumes());

    let dir = tempfile::tempdir().expect("temp dir");
    let manifest = generate(&SynthSpec::two_space(1, 5, 0.5))?.write(dir.path())?;
    let spaces = manifest.space_names();
    let data = prepare_dataset(&manifest, &spaces, None, &PrepConfig::default())?;
    for story in data.with_role(StoryRole::Train).iter().take(2).chain(data.with_role(StoryRole::Test).iter()) {
        println!("{}: response {:?}, audio design {:?}", story.name, story.response.dim(), story.design["audio"].dim());
    }
    Ok(())
}
