//! Estimate the explainable-variance ceiling from repeated presentations.

use ndarray::Array3;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use voxscale::ceiling::{cc_max, noise_ceiling, normalized_scores};
use voxscale::synth::analytic_cc_max;

fn main() -> voxscale::Result<()> {
    let (n, t, v) = (10, 5000, 3);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let signal: Vec<f64> = (0..t * v).map(|_| StandardNormal.sample(&mut rng)).collect();
    let repeats = Array3::from_shape_fn((n, t, v), |(_, ti, vi)| {
        let noise: f64 = StandardNormal.sample(&mut rng);
        signal[ti * v + vi] + noise * (vi as f64 + 1.0)
    });

    let est = noise_ceiling(repeats.view())?;
    for (vi, e) in est.iter().enumerate() {
        let snr = 1.0 / ((vi + 1) * (vi + 1)) as f64;
        println!("voxel {vi}: cc_max {:.3} (analytic {:.3}), display {}", e.cc_max, analytic_cc_max(snr, n), e.display());
    }
    let norm = normalized_scores(ndarray::arr1(&[0.5, 0.5, 0.5]).view(), &est)?;
    println!("normalized scores {norm}");
    println!("a weak voxel is clamped: {:?}", cc_max(0.001, 1.0, 10));
    Ok(())
}
