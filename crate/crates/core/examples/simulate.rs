//! Generate a two-space synthetic dataset and inspect its ground truth.

use voxscale::io::manifest::load_manifest;
use voxscale::synth::{generate, SynthSpec};

fn main() -> voxscale::Result<()> {
    let spec = SynthSpec::two_space(7, 10, 1.0);
    let data = generate(&spec)?;
    let truth = data.truth();
    println!("{} voxels, drivers {:?}..", spec.n_voxels(), &truth.drivers[..3]);
    println!("snr {:?}, analytic cc_max {:.4}", truth.snr[0], truth.cc_max[0]);

    let dir = tempfile::tempdir().expect("temp dir");
    data.write(dir.path())?;
    let manifest = load_manifest(dir.path().join("manifest.toml"))?;
    for story in &manifest.stories {
        println!("{:>8} {:?} {} TRs", story.name, story.role, story.n_trs);
    }
    Ok(())
}
