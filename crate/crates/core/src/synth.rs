//! Synthetic datasets with planted linear structure.
//!
//! Each feature space emits Gaussian feature vectors at jittered item times.
//! A voxel's signal is the delayed, TR-resampled features of its driving space
//! times planted weights, scaled so the signal standard deviation over the
//! training stories equals the space's `weight_scale`. Responses add a smooth
//! quadratic drift and independent Gaussian noise; test stories get `n_repeats`
//! presentations sharing the signal, and the stored test response is their mean.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::manifest::{load_manifest, DatasetManifest, FeatureRef, StoryEntry, StoryRole};
use crate::io::tensor::write_f64;
use crate::temporal::{lanczos_resample, make_delayed, tr_onsets, FeatureTimeSeries, LanczosConfig, DEFAULT_DELAYS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceSpec {
    pub name: String,
    pub n_features: usize,
    /// Signal standard deviation contributed to each voxel this space drives.
    pub weight_scale: f64,
    pub items_per_second: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub subject_id: String,
    pub tr_seconds: f64,
    pub n_train_stories: usize,
    /// TRs per training story.
    pub n_train_trs: usize,
    pub n_test_trs: usize,
    pub spaces: Vec<SpaceSpec>,
    /// Index into `spaces` of the space driving each voxel.
    pub drivers: Vec<usize>,
    pub noise_sd: Vec<f64>,
    pub n_repeats: usize,
    pub delays_trs: Vec<usize>,
    /// Peak amplitude of the per-voxel quadratic drift.
    #[serde(default)]
    pub drift_amplitude: f64,
}

impl SynthSpec {
    /// Two spaces, `audio` then `semantic`, each driving `per_space` voxels.
    pub fn two_space(seed: u64, per_space: usize, noise_sd: f64) -> Self {
        Self {
            seed,
            subject_id: "synthetic".into(),
            tr_seconds: 2.0,
            n_train_stories: 6,
            n_train_trs: 300,
            n_test_trs: 300,
            spaces: vec![
                SpaceSpec {
                    name: "audio".into(),
                    n_features: 16,
                    weight_scale: 1.0,
                    items_per_second: 10.0,
                },
                SpaceSpec {
                    name: "semantic".into(),
                    n_features: 16,
                    weight_scale: 1.0,
                    items_per_second: 2.5,
                },
            ],
            drivers: (0..2 * per_space).map(|v| v / per_space).collect(),
            noise_sd: vec![noise_sd; 2 * per_space],
            n_repeats: 10,
            delays_trs: DEFAULT_DELAYS.to_vec(),
            drift_amplitude: 0.5,
        }
    }

    /// One noiseless space (`audio`) driving every voxel; exactly realizable.
    pub fn noiseless(seed: u64, n_voxels: usize) -> Self {
        let mut s = Self::two_space(seed, n_voxels, 0.0);
        s.spaces.truncate(1);
        s.drivers = vec![0; n_voxels];
        s.noise_sd = vec![0.0; n_voxels];
        s
    }

    pub fn n_voxels(&self) -> usize {
        self.drivers.len()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_train_stories", self.n_train_stories),
            ("n_train_trs", self.n_train_trs),
            ("n_test_trs", self.n_test_trs),
            ("n_voxels", self.drivers.len()),
            ("n_repeats", self.n_repeats),
            ("spaces", self.spaces.len()),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
        if !(self.tr_seconds > 0.0) {
            return Err(Error::invalid("tr_seconds must be positive"));
        }
        if self.noise_sd.len() != self.drivers.len() {
            return Err(Error::invalid(format!(
                "{} noise levels for {} voxels",
                self.noise_sd.len(),
                self.drivers.len()
            )));
        }
        if self.noise_sd.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::invalid("noise_sd must be non-negative"));
        }
        if let Some(d) = self.drivers.iter().find(|&&d| d >= self.spaces.len()) {
            return Err(Error::invalid(format!("driver index {d} has no matching space")));
        }
        for s in &self.spaces {
            if s.n_features == 0 || !(s.items_per_second > 0.0) || !(s.weight_scale >= 0.0) {
                return Err(Error::invalid(format!("space '{}' needs features, a positive item rate and a non-negative scale", s.name)));
            }
        }
        if self.delays_trs.is_empty() {
            return Err(Error::invalid("at least one delay is required"));
        }
        Ok(())
    }

    /// Per-voxel ratio of signal variance to single-repeat noise variance.
    pub fn snr(&self) -> Vec<f64> {
        self.drivers
            .iter()
            .zip(&self.noise_sd)
            .map(|(&d, &sd)| {
                let s = self.spaces[d].weight_scale;
                if sd == 0.0 {
                    f64::INFINITY
                } else {
                    s * s / (sd * sd)
                }
            })
            .collect()
    }
}

/// Noise ceiling implied by a known SNR and repeat count.
pub fn analytic_cc_max(snr: f64, n_repeats: usize) -> f64 {
    if snr.is_infinite() {
        1.0
    } else if snr <= 0.0 {
        0.0
    } else {
        1.0 / (1.0 + 1.0 / (n_repeats as f64 * snr)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthStory {
    pub name: String,
    pub role: StoryRole,
    pub n_trs: usize,
    /// Keyed by space name.
    pub features: BTreeMap<String, FeatureTimeSeries>,
    /// Noiseless signal, `n_trs × n_voxels`.
    pub signal: Array2<f64>,
    /// Observed response; for test stories the repeat mean.
    pub response: Array2<f64>,
    /// `n_repeats × n_trs × n_voxels`, test stories only.
    pub repeats: Option<Array3<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruthRecord {
    pub seed: u64,
    pub spaces: Vec<String>,
    pub drivers: Vec<String>,
    pub noise_sd: Vec<f64>,
    pub snr: Vec<Option<f64>>,
    pub cc_max: Vec<f64>,
    pub n_repeats: usize,
    pub delays_trs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub spec: SynthSpec,
    pub stories: Vec<SynthStory>,
    /// Planted weights per space, `(n_features · n_delays) × n_voxels`; columns of
    /// voxels the space does not drive are zero.
    pub weights: Vec<Array2<f64>>,
}

impl SynthDataset {
    pub fn truth(&self) -> GroundTruthRecord {
        let snr = self.spec.snr();
        GroundTruthRecord {
            seed: self.spec.seed,
            spaces: self.spec.spaces.iter().map(|s| s.name.clone()).collect(),
            drivers: self.spec.drivers.iter().map(|&d| self.spec.spaces[d].name.clone()).collect(),
            noise_sd: self.spec.noise_sd.clone(),
            cc_max: snr.iter().map(|&s| analytic_cc_max(s, self.spec.n_repeats)).collect(),
            snr: snr.into_iter().map(|s| s.is_finite().then_some(s)).collect(),
            n_repeats: self.spec.n_repeats,
            delays_trs: self.spec.delays_trs.clone(),
        }
    }

    pub fn story(&self, name: &str) -> Option<&SynthStory> {
        self.stories.iter().find(|s| s.name == name)
    }

    /// Write tensors, `manifest.toml` and a `truth/` directory under `dir`.
    /// Returns the validated manifest.
    pub fn write(&self, dir: &Path) -> Result<DatasetManifest> {
        let mkdir = |p: &Path| std::fs::create_dir_all(p).map_err(|e| Error::io(p, e));
        mkdir(dir)?;
        for sub in ["features", "responses", "repeats", "truth"] {
            mkdir(&dir.join(sub))?;
        }
        let mut manifest = DatasetManifest::new(&self.spec.subject_id, self.spec.tr_seconds);
        for story in &self.stories {
            manifest.stories.push(StoryEntry {
                name: story.name.clone(),
                duration_seconds: story.n_trs as f64 * self.spec.tr_seconds,
                n_trs: story.n_trs,
                role: story.role,
            });
            for (space, fts) in &story.features {
                mkdir(&dir.join("features").join(space))?;
                let values = format!("features/{space}/{}.vxt", story.name);
                let times = format!("features/{space}/{}_times.vxt", story.name);
                write_f64(&fts.values.view(), dir.join(&values))?;
                write_f64(&Array1::from(fts.timestamps.clone()).view(), dir.join(&times))?;
                manifest.feature_spaces.entry(space.clone()).or_default().insert(
                    story.name.clone(),
                    FeatureRef {
                        path: values.into(),
                        timestamps: times.into(),
                    },
                );
            }
            let resp = format!("responses/{}.vxt", story.name);
            write_f64(&story.response.view(), dir.join(&resp))?;
            manifest.responses.insert(story.name.clone(), resp.into());
            if let Some(reps) = &story.repeats {
                let mut paths = Vec::new();
                for (r, rep) in reps.axis_iter(Axis(0)).enumerate() {
                    let p = format!("repeats/{}_r{:02}.vxt", story.name, r);
                    write_f64(&rep, dir.join(&p))?;
                    paths.push(p.into());
                }
                manifest.test_repeats.insert(story.name.clone(), paths);
            }
        }
        for (space, w) in self.spec.spaces.iter().zip(&self.weights) {
            write_f64(&w.view(), dir.join("truth").join(format!("weights_{}.vxt", space.name)))?;
        }
        let truth = serde_json::to_string_pretty(&self.truth()).map_err(|e| Error::invalid(e.to_string()))?;
        let tpath = dir.join("truth").join("truth.json");
        std::fs::write(&tpath, truth).map_err(|e| Error::io(&tpath, e))?;
        let spec = toml::to_string_pretty(&self.spec).map_err(|e| Error::invalid(e.to_string()))?;
        let spath = dir.join("truth").join("spec.toml");
        std::fs::write(&spath, spec).map_err(|e| Error::io(&spath, e))?;
        let mpath = dir.join("manifest.toml");
        manifest.save(&mpath)?;
        load_manifest(&mpath)
    }
}

fn item_times(duration: f64, rate: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = (duration * rate).floor().max(1.0) as usize;
    let spacing = duration / n as f64;
    (0..n)
        .map(|k| (k as f64 + 0.5 + rng.random_range(-0.25..0.25)) * spacing)
        .collect()
}

fn story_features(spec: &SynthSpec, n_trs: usize, rng: &mut ChaCha8Rng) -> Result<Vec<(FeatureTimeSeries, Array2<f64>)>> {
    let duration = n_trs as f64 * spec.tr_seconds;
    let onsets = tr_onsets(n_trs, spec.tr_seconds);
    spec.spaces
        .iter()
        .map(|s| {
            let times = item_times(duration, s.items_per_second, rng);
            let values = Array2::from_shape_simple_fn((times.len(), s.n_features), || StandardNormal.sample(&mut *rng));
            let fts = FeatureTimeSeries::new(times, values)?;
            let resampled = lanczos_resample(&fts, &onsets, &LanczosConfig::default())?;
            let delayed = make_delayed(resampled.view(), &spec.delays_trs)?.matrix;
            Ok((fts, delayed))
        })
        .collect()
}

fn drift(n_trs: usize, amplitude: f64, rng: &mut ChaCha8Rng, n_voxels: usize) -> Array2<f64> {
    let coefs: Vec<(f64, f64)> = (0..n_voxels)
        .map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    Array2::from_shape_fn((n_trs, n_voxels), |(t, v)| {
        let u = t as f64 / n_trs as f64;
        amplitude * (coefs[v].0 * u + coefs[v].1 * u * u)
    })
}

/// Build the dataset in memory. Identical specs give bit-identical output.
pub fn generate(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_vox = spec.n_voxels();
    let n_delays = spec.delays_trs.len();

    let mut layout: Vec<(String, StoryRole, usize)> = (0..spec.n_train_stories)
        .map(|i| (format!("train{:02}", i + 1), StoryRole::Train, spec.n_train_trs))
        .collect();
    layout.push(("test01".into(), StoryRole::Test, spec.n_test_trs));

    let designs: Vec<Vec<(FeatureTimeSeries, Array2<f64>)>> = layout
        .iter()
        .map(|(_, _, n)| story_features(spec, *n, &mut rng))
        .collect::<Result<_>>()?;

    // raw weights, then rescale so each voxel's training signal has SD weight_scale
    let mut weights: Vec<Array2<f64>> = spec
        .spaces
        .iter()
        .map(|s| Array2::zeros((s.n_features * n_delays, n_vox)))
        .collect();
    for (v, &d) in spec.drivers.iter().enumerate() {
        let col: Array1<f64> = (0..weights[d].nrows()).map(|_| StandardNormal.sample(&mut rng)).collect();
        weights[d].column_mut(v).assign(&col);
    }
    for (v, &d) in spec.drivers.iter().enumerate() {
        let w = weights[d].column(v).to_owned();
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut n = 0.0;
        for (story, (_, role, _)) in designs.iter().zip(&layout) {
            if *role != StoryRole::Train {
                continue;
            }
            for s in story[d].1.dot(&w) {
                sum += s;
                sum_sq += s * s;
                n += 1.0;
            }
        }
        let var = sum_sq / n - (sum / n).powi(2);
        let scale = if var > 0.0 { spec.spaces[d].weight_scale / var.sqrt() } else { 0.0 };
        weights[d].column_mut(v).mapv_inplace(|x| x * scale);
    }

    let mut stories = Vec::with_capacity(layout.len());
    for (feats, (name, role, n_trs)) in designs.into_iter().zip(layout) {
        let mut signal = Array2::zeros((n_trs, n_vox));
        for (d, (_, x)) in feats.iter().enumerate() {
            signal += &x.dot(&weights[d]);
        }
        let observe = |rng: &mut ChaCha8Rng| {
            let mut y = &signal + &drift(n_trs, spec.drift_amplitude, rng, n_vox);
            for (v, &sd) in spec.noise_sd.iter().enumerate() {
                if sd > 0.0 {
                    let noise = Normal::new(0.0, sd).map_err(|e| Error::invalid(e.to_string()))?;
                    y.column_mut(v).mapv_inplace(|x| x + noise.sample(&mut *rng));
                }
            }
            Ok::<_, Error>(y)
        };
        let (response, repeats) = match role {
            StoryRole::Train => (observe(&mut rng)?, None),
            StoryRole::Test => {
                let mut reps = Array3::zeros((spec.n_repeats, n_trs, n_vox));
                for r in 0..spec.n_repeats {
                    reps.index_axis_mut(Axis(0), r).assign(&observe(&mut rng)?);
                }
                let mean = reps.mean_axis(Axis(0)).expect("at least one repeat");
                (mean, Some(reps))
            }
        };
        let features = spec
            .spaces
            .iter()
            .zip(feats)
            .map(|(s, (fts, _))| (s.name.clone(), fts))
            .collect();
        stories.push(SynthStory {
            name,
            role,
            n_trs,
            features,
            signal,
            response,
            repeats,
        });
    }
    Ok(SynthDataset {
        spec: spec.clone(),
        stories,
        weights,
    })
}
