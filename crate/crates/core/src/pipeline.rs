//! Manifest-level preparation shared by the subcommands and examples.
//!
//! Per story, each feature space is Lanczos-resampled onto TR onsets, expanded
//! with FIR delays, detrended with the same Savitzky-Golay filter as the
//! responses, trimmed, and centered. Responses are detrended, trimmed and
//! centered per story. Both are then scaled by the per-column standard
//! deviation over all training stories, and the same scale is applied to test
//! stories, so a response that is exactly linear in the raw features stays
//! exactly linear in the prepared design.

use std::collections::BTreeMap;

use ndarray::{concatenate, Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::manifest::{DatasetManifest, StoryRole};
use crate::io::tensor::{read_array1, read_array2};
use crate::preprocess::{
    savgol_detrend, trim_for_test, trim_for_training, TrimPolicy, DEFAULT_DETREND_ORDER,
    DEFAULT_DETREND_WINDOW_SECONDS,
};
use crate::temporal::{lanczos_resample, make_delayed, tr_onsets, FeatureTimeSeries, LanczosConfig, DEFAULT_DELAYS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepConfig {
    pub lanczos: LanczosConfig,
    pub delays_trs: Vec<usize>,
    pub trim: TrimPolicy,
    pub detrend_window_seconds: f64,
    pub detrend_order: usize,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            lanczos: LanczosConfig::default(),
            delays_trs: DEFAULT_DELAYS.to_vec(),
            trim: TrimPolicy::default(),
            detrend_window_seconds: DEFAULT_DETREND_WINDOW_SECONDS,
            detrend_order: DEFAULT_DETREND_ORDER,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedStory {
    pub name: String,
    pub role: StoryRole,
    /// Space name → delayed design, `trimmed_trs × (n_features · n_delays)`.
    pub design: BTreeMap<String, Array2<f64>>,
    pub response: Array2<f64>,
    /// Volumes removed from story onset by trimming.
    pub removed_from_onset: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedDataset {
    pub tr_seconds: f64,
    pub stories: Vec<PreparedStory>,
    /// Space name → per-column training scale that was divided out.
    pub column_scale: BTreeMap<String, Vec<f64>>,
    /// Per-voxel training response scale.
    pub response_scale: Vec<f64>,
    /// Voxels whose training response has zero variance; their columns are zero.
    pub zero_variance: Vec<bool>,
}

impl PreparedDataset {
    pub fn story(&self, name: &str) -> Option<&PreparedStory> {
        self.stories.iter().find(|s| s.name == name)
    }

    pub fn with_role(&self, role: StoryRole) -> Vec<&PreparedStory> {
        self.stories.iter().filter(|s| s.role == role).collect()
    }

    /// Row-concatenated design for `space` over `stories`.
    pub fn design(&self, space: &str, stories: &[&PreparedStory]) -> Result<Array2<f64>> {
        let parts: Vec<ArrayView2<'_, f64>> = stories
            .iter()
            .map(|s| {
                s.design
                    .get(space)
                    .map(|d| d.view())
                    .ok_or_else(|| Error::invalid(format!("feature space '{space}' not prepared")))
            })
            .collect::<Result<_>>()?;
        concat_rows(&parts)
    }

    pub fn responses(&self, stories: &[&PreparedStory]) -> Result<Array2<f64>> {
        let parts: Vec<ArrayView2<'_, f64>> = stories.iter().map(|s| s.response.view()).collect();
        concat_rows(&parts)
    }
}

fn concat_rows(parts: &[ArrayView2<'_, f64>]) -> Result<Array2<f64>> {
    if parts.is_empty() {
        return Err(Error::invalid("no stories selected"));
    }
    concatenate(Axis(0), parts).map_err(|e| Error::shape(e.to_string()))
}

fn trim(series: ArrayView2<'_, f64>, role: StoryRole, cfg: &PrepConfig, tr: f64) -> Result<(Array2<f64>, usize)> {
    match role {
        StoryRole::Train => Ok((trim_for_training(series, &cfg.trim, tr)?, cfg.trim.train_trim_volumes)),
        StoryRole::Test => trim_for_test(series, &cfg.trim, tr),
    }
}

/// Resample, delay, detrend, trim and center one space for one story.
pub fn prepare_design(manifest: &DatasetManifest, space: &str, story: &str, cfg: &PrepConfig) -> Result<Array2<f64>> {
    let entry = manifest
        .story(story)
        .ok_or_else(|| Error::invalid(format!("unknown story '{story}'")))?;
    let fref = manifest
        .feature_spaces
        .get(space)
        .and_then(|m| m.get(story))
        .ok_or_else(|| Error::invalid(format!("no '{space}' features for story '{story}'")))?;
    let values = read_array2(manifest.resolve(&fref.path))?;
    let times = read_array1(manifest.resolve(&fref.timestamps))?.to_vec();
    let fts = FeatureTimeSeries::new(times, values)?;
    let tr = manifest.tr_seconds;
    let resampled = lanczos_resample(&fts, &tr_onsets(entry.n_trs, tr), &cfg.lanczos)?;
    let delayed = make_delayed(resampled.view(), &cfg.delays_trs)?.matrix;
    let detrended = savgol_detrend(delayed.view(), tr, cfg.detrend_window_seconds, cfg.detrend_order)?;
    let (mut trimmed, _) = trim(detrended.view(), entry.role, cfg, tr)?;
    let means = trimmed.mean_axis(Axis(0)).expect("trimmed design has rows");
    trimmed -= &means;
    Ok(trimmed)
}

/// Detrend, trim and center one story's response. Also returns the volumes
/// removed from onset.
pub fn prepare_response(manifest: &DatasetManifest, story: &str, cfg: &PrepConfig) -> Result<(Array2<f64>, usize)> {
    let entry = manifest
        .story(story)
        .ok_or_else(|| Error::invalid(format!("unknown story '{story}'")))?;
    let path = manifest
        .responses
        .get(story)
        .ok_or_else(|| Error::invalid(format!("no response for story '{story}'")))?;
    let raw = read_array2(manifest.resolve(path))?;
    let tr = manifest.tr_seconds;
    let detrended = savgol_detrend(raw.view(), tr, cfg.detrend_window_seconds, cfg.detrend_order)?;
    let (mut trimmed, removed) = trim(detrended.view(), entry.role, cfg, tr)?;
    let means = trimmed.mean_axis(Axis(0)).expect("trimmed response has rows");
    trimmed -= &means;
    Ok((trimmed, removed))
}

/// Detrended and trimmed repeats of a test story, `n_repeats × time × voxels`.
pub fn prepare_repeats(manifest: &DatasetManifest, story: &str, cfg: &PrepConfig) -> Result<Array3<f64>> {
    let paths = manifest
        .test_repeats
        .get(story)
        .ok_or_else(|| Error::invalid(format!("no repeats listed for story '{story}'")))?;
    let tr = manifest.tr_seconds;
    let reps: Vec<Array2<f64>> = paths
        .iter()
        .map(|p| {
            let raw = read_array2(manifest.resolve(p))?;
            let d = savgol_detrend(raw.view(), tr, cfg.detrend_window_seconds, cfg.detrend_order)?;
            Ok(trim_for_test(d.view(), &cfg.trim, tr)?.0)
        })
        .collect::<Result<_>>()?;
    let views: Vec<_> = reps.iter().map(|r| r.view().insert_axis(Axis(0))).collect();
    concatenate(Axis(0), &views).map_err(|e| Error::shape(e.to_string()))
}

/// Prepare `spaces` for every story in the manifest (or only `stories`, when given).
pub fn prepare_dataset(
    manifest: &DatasetManifest,
    spaces: &[String],
    stories: Option<&[String]>,
    cfg: &PrepConfig,
) -> Result<PreparedDataset> {
    for s in spaces {
        if !manifest.feature_spaces.contains_key(s) {
            return Err(Error::invalid(format!(
                "unknown feature space '{s}'; manifest has {:?}",
                manifest.space_names()
            )));
        }
    }
    let selected: Vec<&str> = match stories {
        Some(list) => {
            for name in list {
                if manifest.story(name).is_none() {
                    return Err(Error::invalid(format!("unknown story '{name}'")));
                }
            }
            manifest
                .stories
                .iter()
                .filter(|s| list.contains(&s.name))
                .map(|s| s.name.as_str())
                .collect()
        }
        None => manifest.stories.iter().map(|s| s.name.as_str()).collect(),
    };
    let mut prepared = Vec::with_capacity(selected.len());
    for name in selected {
        let entry = manifest.story(name).expect("story exists");
        let (response, removed) = prepare_response(manifest, name, cfg)?;
        let mut design = BTreeMap::new();
        for space in spaces {
            let d = prepare_design(manifest, space, name, cfg)?;
            if d.nrows() != response.nrows() {
                return Err(Error::shape(format!(
                    "story '{name}': design has {} rows, response {}",
                    d.nrows(),
                    response.nrows()
                )));
            }
            design.insert(space.clone(), d);
        }
        prepared.push(PreparedStory {
            name: name.to_string(),
            role: entry.role,
            design,
            response,
            removed_from_onset: removed,
        });
    }

    if !prepared.iter().any(|s| s.role == StoryRole::Train) {
        return Err(Error::invalid("no training stories selected"));
    }
    let mut column_scale = BTreeMap::new();
    for space in spaces {
        let scale = training_scale(&prepared, |s| s.design[space].view());
        let scale: Vec<f64> = scale.into_iter().map(|s| s.unwrap_or(1.0)).collect();
        for story in prepared.iter_mut() {
            divide_columns(story.design.get_mut(space).expect("space prepared"), &scale);
        }
        column_scale.insert(space.clone(), scale);
    }
    let scale = training_scale(&prepared, |s| s.response.view());
    let zero_variance: Vec<bool> = scale.iter().map(Option::is_none).collect();
    // zero-variance voxels become all-zero columns
    let response_scale: Vec<f64> = scale.into_iter().map(|s| s.unwrap_or(f64::INFINITY)).collect();
    for story in prepared.iter_mut() {
        divide_columns(&mut story.response, &response_scale);
    }
    Ok(PreparedDataset {
        tr_seconds: manifest.tr_seconds,
        stories: prepared,
        column_scale,
        response_scale,
        zero_variance,
    })
}

/// Root-mean-square of each column over the training stories; `None` for
/// columns that are zero up to rounding.
fn training_scale<'a>(
    stories: &'a [PreparedStory],
    pick: impl Fn(&'a PreparedStory) -> ArrayView2<'a, f64>,
) -> Vec<Option<f64>> {
    let train: Vec<ArrayView2<'_, f64>> = stories
        .iter()
        .filter(|s| s.role == StoryRole::Train)
        .map(pick)
        .collect();
    let width = train[0].ncols();
    let mut n = 0usize;
    let mut sum_sq = vec![0.0; width];
    let mut peak = vec![0.0f64; width];
    for d in &train {
        n += d.nrows();
        for row in d.rows() {
            for ((acc, p), v) in sum_sq.iter_mut().zip(peak.iter_mut()).zip(row) {
                *acc += v * v;
                *p = p.max(v.abs());
            }
        }
    }
    sum_sq
        .iter()
        .zip(&peak)
        .map(|(ss, p)| {
            let sd = (ss / n as f64).sqrt();
            (sd > 1e-13 * p && sd > 0.0).then_some(sd)
        })
        .collect()
}

fn divide_columns(m: &mut Array2<f64>, scale: &[f64]) {
    for mut row in m.rows_mut() {
        row.iter_mut().zip(scale).for_each(|(v, s)| *v /= s);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ridge::{fit_ridge_matrix, predict_matrix, score, CvConfig};
    use crate::synth::{generate, SynthSpec};

    #[test]
    fn noiseless_dataset_is_realizable() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = SynthSpec::two_space(9, 4, 0.0);
        spec.n_train_stories = 3;
        spec.n_train_trs = 200;
        spec.n_test_trs = 200;
        spec.n_repeats = 2;
        let m = generate(&spec).unwrap().write(dir.path()).unwrap();
        let data = prepare_dataset(&m, &m.space_names(), None, &PrepConfig::default()).unwrap();
        let train = data.with_role(StoryRole::Train);
        let test = data.with_role(StoryRole::Test);
        assert_eq!(train[0].response.nrows(), 180);
        assert_eq!(test[0].response.nrows(), 140);
        assert_eq!(test[0].removed_from_onset, 50);
        let x = concatenate(
            Axis(1),
            &[data.design("audio", &train).unwrap().view(), data.design("semantic", &train).unwrap().view()],
        )
        .unwrap();
        let y = data.responses(&train).unwrap();
        let sol = fit_ridge_matrix(x.view(), y.view(), &CvConfig::fixed_alpha(1e-6)).unwrap();
        let xt = concatenate(
            Axis(1),
            &[data.design("audio", &test).unwrap().view(), data.design("semantic", &test).unwrap().view()],
        )
        .unwrap();
        let pred = predict_matrix(sol.weights.view(), xt.view()).unwrap();
        let s = score(pred.view(), test[0].response.view()).unwrap();
        assert!(s.r.iter().all(|&r| r > 0.999), "{:?}", s.r);
    }

    #[test]
    fn repeats_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = SynthSpec::two_space(2, 2, 1.0);
        spec.n_train_stories = 1;
        spec.n_train_trs = 150;
        spec.n_test_trs = 150;
        spec.n_repeats = 3;
        let m = generate(&spec).unwrap().write(dir.path()).unwrap();
        let reps = prepare_repeats(&m, "test01", &PrepConfig::default()).unwrap();
        assert_eq!(reps.shape(), &[3, 90, 4]);
        assert!(prepare_dataset(&m, &["vision".to_string()], None, &PrepConfig::default()).is_err());
        assert!(prepare_repeats(&m, "train01", &PrepConfig::default()).is_err());
    }
}
