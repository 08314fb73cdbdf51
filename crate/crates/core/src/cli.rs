//! File-based subcommands over the library.
//!
//! Every subcommand writes its outputs plus a `run.json` sidecar recording the
//! parameters, seed, crate version and SHA-256 digests of its inputs. Failures
//! print one JSON line to stderr; the exit code is 2 for usage and IO errors
//! and 1 for computation errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ceiling::{noise_ceiling, normalized_scores};
use crate::error::{Error, Result};
use crate::io::manifest::{load_manifest, DatasetManifest, StoryRole};
use crate::io::tensor::{read_array1, write_f64};
use crate::pipeline::{prepare_dataset, prepare_repeats, PrepConfig, PreparedDataset, PreparedStory};
use crate::preprocess::{trim_for_evaluation, ExclusionMode, TrimPolicy};
use crate::ridge::{fit_ridge_matrix, logspace, predict_matrix, score, CvConfig, EncodingModel, TrainingMeta};
use crate::scaling::{fit_loglinear, percent_change, story_subsets, voxelwise_slopes};
use crate::schedule::{growth_runs, plan_audio_windows, plan_story_tokens};
use crate::stacker::{
    gate_stacked, gated_prediction, heldout_predictions, residual_covariance, stack_weights, stacked_predict,
    subset_center_of_mass, FoldSpec, Gate, GateCriterion, SegmentProvenance, DEFAULT_FOLD_CHUNK_TRS,
};
use crate::synth::{generate, SynthSpec};

#[derive(Debug, Parser, Serialize)]
#[command(name = "voxscale", version, about = "Voxelwise encoding models from the command line")]
struct Cli {
    /// Worker threads for voxel-parallel stages (results do not depend on it).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
enum Command {
    /// Generate a synthetic dataset with planted weights.
    Simulate(SimulateArgs),
    /// Write token-context and audio-window plans for feature extraction.
    Plan(PlanArgs),
    /// Write prepared (resampled, delayed, detrended, trimmed) tensors.
    Preprocess(PreprocessArgs),
    /// Fit one ridge encoding model per feature space.
    Fit(FitArgs),
    /// Score fitted models on the test stories.
    Score(ScoreArgs),
    /// Stack feature spaces with per-voxel convex weights and gate against a baseline.
    Stack(StackArgs),
    /// Estimate the repeat-based noise ceiling.
    Ceiling(CeilingArgs),
    /// Fit log-linear scaling curves across score runs.
    Scaling(ScalingArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Preset {
    TwoSpace,
    Noiseless,
}

#[derive(Debug, Args, Serialize)]
struct SimulateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Preset::TwoSpace)]
    preset: Preset,
    /// TOML spec overriding the preset entirely.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Voxels driven by each space (the noiseless preset has one space).
    #[arg(long, default_value_t = 50)]
    voxels_per_space: usize,
    #[arg(long)]
    noise_sd: Option<f64>,
    #[arg(long)]
    train_stories: Option<usize>,
    #[arg(long)]
    train_trs: Option<usize>,
    #[arg(long)]
    test_trs: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
struct PlanArgs {
    #[arg(long)]
    out: PathBuf,
    /// Plan token contexts for a story of this many tokens.
    #[arg(long)]
    tokens: Option<usize>,
    /// Plan audio windows for a single story of this duration.
    #[arg(long)]
    audio_seconds: Option<f64>,
    /// Plan audio windows for every story in a manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = crate::schedule::DEFAULT_MAX_CONTEXT)]
    max_context: usize,
    #[arg(long, default_value_t = crate::schedule::DEFAULT_RESET_CONTEXT)]
    reset_context: usize,
    #[arg(long, default_value_t = crate::schedule::DEFAULT_AUDIO_WINDOW_SECONDS)]
    audio_window: f64,
    #[arg(long, default_value_t = crate::schedule::DEFAULT_AUDIO_STRIDE_SECONDS)]
    audio_stride: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum TrimMode {
    FromOnset,
    Additional,
}

#[derive(Debug, Args, Serialize, Clone)]
struct PrepArgs {
    /// Feature spaces to use (default: all in the manifest).
    #[arg(long, value_delimiter = ',')]
    spaces: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = crate::temporal::DEFAULT_DELAYS.to_vec())]
    delays: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    trim_train: usize,
    #[arg(long, default_value_t = 40)]
    trim_test_extra: usize,
    #[arg(long, default_value_t = 100.0)]
    trim_eval_seconds: f64,
    #[arg(long, value_enum, default_value_t = TrimMode::FromOnset)]
    trim_mode: TrimMode,
}

impl PrepArgs {
    fn config(&self) -> PrepConfig {
        PrepConfig {
            delays_trs: self.delays.clone(),
            trim: TrimPolicy {
                train_trim_volumes: self.trim_train,
                test_extra_volumes: self.trim_test_extra,
                eval_exclusion_seconds: self.trim_eval_seconds,
                exclusion_mode: match self.trim_mode {
                    TrimMode::FromOnset => ExclusionMode::FromOnset,
                    TrimMode::Additional => ExclusionMode::Additional,
                },
            },
            ..PrepConfig::default()
        }
    }

    fn spaces(&self, manifest: &DatasetManifest) -> Vec<String> {
        if self.spaces.is_empty() {
            manifest.space_names()
        } else {
            self.spaces.clone()
        }
    }
}

#[derive(Debug, Args, Serialize, Clone)]
struct RidgeArgs {
    /// `lo:hi:n` for n log10-spaced values, or a comma-separated list.
    #[arg(long, default_value = "1:6:10")]
    alphas: String,
    #[arg(long, default_value_t = 15)]
    bootstraps: usize,
    #[arg(long, default_value_t = 20)]
    chunk_trs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl RidgeArgs {
    fn config(&self) -> Result<CvConfig> {
        let grid = parse_alphas(&self.alphas)?;
        Ok(CvConfig {
            n_bootstraps: if grid.len() == 1 { 0 } else { self.bootstraps },
            chunk_length_trs: self.chunk_trs,
            alpha_grid: grid,
            seed: self.seed,
            ..CvConfig::default()
        })
    }
}

fn parse_alphas(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::invalid(format!("cannot parse --alphas '{s}'"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
        if n == 0 {
            return Err(bad());
        }
        return Ok(logspace(lo, hi, n));
    }
    s.split(',').map(|a| a.trim().parse::<f64>().map_err(|_| bad())).collect()
}

#[derive(Debug, Args, Serialize)]
struct PreprocessArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    prep: PrepArgs,
}

#[derive(Debug, Args, Serialize)]
struct FitArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Train on a nested seeded subset of this many training stories.
    #[arg(long)]
    train_stories: Option<usize>,
    #[command(flatten)]
    prep: PrepArgs,
    #[command(flatten)]
    ridge: RidgeArgs,
}

#[derive(Debug, Args, Serialize)]
struct ScoreArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory of a `fit` run.
    #[arg(long)]
    models: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct StackArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = crate::stacker::DEFAULT_FOLDS)]
    folds: usize,
    /// Baseline space for the gate (default: the last space).
    #[arg(long)]
    baseline: Option<String>,
    /// Spaces entering the center of mass (default: all but the baseline).
    #[arg(long, value_delimiter = ',')]
    attribution_spaces: Vec<String>,
    /// Trailing training stories held out to validate the gate.
    #[arg(long, default_value_t = 1)]
    validation_stories: usize,
    #[arg(long, default_value_t = 1000)]
    gate_resamples: usize,
    #[arg(long, default_value_t = 20)]
    gate_block_trs: usize,
    #[arg(long, default_value_t = 0.95)]
    gate_confidence: f64,
    #[command(flatten)]
    prep: PrepArgs,
    #[command(flatten)]
    ridge: RidgeArgs,
}

#[derive(Debug, Args, Serialize)]
struct CeilingArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Per-voxel correlation tensor (e.g. `r_<space>.vxt` from `score`) to normalize.
    #[arg(long)]
    scores: Option<PathBuf>,
    #[command(flatten)]
    prep: PrepArgs,
}

#[derive(Debug, Args, Serialize)]
struct ScalingArgs {
    /// Output directories of `score` runs, ordered by size.
    #[arg(long, value_delimiter = ',', required = true)]
    inputs: Vec<PathBuf>,
    /// Size of each run (parameters, stories, ...), strictly increasing.
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<f64>,
    /// Space whose scores are compared (default: the first in the first run).
    #[arg(long)]
    space: Option<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10.0)]
    log_base: f64,
    #[arg(long, default_value_t = 2.0)]
    voxel_log_base: f64,
}

/// Parse `args` (program name first) and run the subcommand. Returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            report("usage", &first_line(&e.to_string()));
            return 2;
        }
    };
    let result = match cli.workers {
        Some(0) => Err(Error::invalid("--workers must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::invalid(e.to_string()))
            .and_then(|pool| pool.install(|| dispatch(&cli))),
        None => dispatch(&cli),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            report(e.kind(), &e.to_string());
            if e.is_io_or_usage() {
                2
            } else {
                1
            }
        }
    }
}

fn first_line(s: &str) -> String {
    s.lines().next().unwrap_or("").trim_start_matches("error: ").to_string()
}

fn report(kind: &str, message: &str) {
    let line = serde_json::json!({ "error": kind, "message": message });
    eprintln!("{line}");
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(a, cli),
        Command::Plan(a) => plan(a, cli),
        Command::Preprocess(a) => preprocess(a, cli),
        Command::Fit(a) => fit(a, cli),
        Command::Score(a) => score_cmd(a, cli),
        Command::Stack(a) => stack(a, cli),
        Command::Ceiling(a) => ceiling(a, cli),
        Command::Scaling(a) => scaling(a, cli),
    }
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_text(path, &out)
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::invalid(e.to_string()))
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Digest of the manifest and every file it references, in a fixed order.
fn dataset_digest(manifest_path: &Path, m: &DatasetManifest) -> Result<String> {
    let mut files = vec![manifest_path.to_path_buf()];
    for per_story in m.feature_spaces.values() {
        for f in per_story.values() {
            files.push(m.resolve(&f.path));
            files.push(m.resolve(&f.timestamps));
        }
    }
    files.extend(m.responses.values().map(|p| m.resolve(p)));
    for reps in m.test_repeats.values() {
        files.extend(reps.iter().map(|p| m.resolve(p)));
    }
    let mut h = Sha256::new();
    for f in files {
        h.update(sha256_file(&f)?.as_bytes());
    }
    Ok(hex::encode(h.finalize()))
}

#[derive(Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    version: &'a str,
    seed: Option<u64>,
    workers: Option<usize>,
    parameters: serde_json::Value,
    inputs: BTreeMap<String, String>,
}

fn write_run_record<T: Serialize>(
    out: &Path,
    command: &str,
    cli: &Cli,
    params: &T,
    seed: Option<u64>,
    inputs: BTreeMap<String, String>,
) -> Result<()> {
    let rec = RunRecord {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed,
        workers: cli.workers,
        parameters: serde_json::to_value(params).map_err(|e| Error::invalid(e.to_string()))?,
        inputs,
    };
    write_text(&out.join("run.json"), &to_json(&rec)?)
}

fn open_manifest(path: &Path) -> Result<(DatasetManifest, BTreeMap<String, String>)> {
    let m = load_manifest(path)?;
    let mut inputs = BTreeMap::new();
    inputs.insert(path.display().to_string(), dataset_digest(path, &m)?);
    Ok((m, inputs))
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn simulate(a: &SimulateArgs, cli: &Cli) -> Result<()> {
    let spec = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str::<SynthSpec>(&text).map_err(|e| Error::Manifest {
                path: p.clone(),
                message: e.to_string(),
            })?
        }
        None => {
            let mut s = match a.preset {
                Preset::TwoSpace => SynthSpec::two_space(a.seed, a.voxels_per_space, a.noise_sd.unwrap_or(1.0)),
                Preset::Noiseless => SynthSpec::noiseless(a.seed, a.voxels_per_space),
            };
            if let Some(v) = a.train_stories {
                s.n_train_stories = v;
            }
            if let Some(v) = a.train_trs {
                s.n_train_trs = v;
            }
            if let Some(v) = a.test_trs {
                s.n_test_trs = v;
            }
            if let Some(v) = a.repeats {
                s.n_repeats = v;
            }
            s
        }
    };
    let data = generate(&spec)?;
    data.write(&a.out)?;
    let mut inputs = BTreeMap::new();
    if let Some(p) = &a.spec {
        inputs.insert(p.display().to_string(), sha256_file(p)?);
    }
    write_run_record(&a.out, "simulate", cli, a, Some(spec.seed), inputs)
}

fn plan(a: &PlanArgs, cli: &Cli) -> Result<()> {
    if a.tokens.is_none() && a.audio_seconds.is_none() && a.manifest.is_none() {
        return Err(Error::invalid("plan needs --tokens, --audio-seconds or --manifest"));
    }
    mkdir(&a.out)?;
    let mut doc = serde_json::Map::new();
    let mut inputs = BTreeMap::new();
    if let Some(n) = a.tokens {
        let plan = plan_story_tokens(n, a.max_context, a.reset_context)?;
        let rows: Vec<Vec<String>> = plan
            .iter()
            .map(|w| {
                vec![
                    w.target_token.to_string(),
                    w.token_start.to_string(),
                    w.token_end.to_string(),
                    w.len().to_string(),
                ]
            })
            .collect();
        write_csv(&a.out.join("context_plan.csv"), &["target_token", "token_start", "token_end", "length"], &rows)?;
        let runs: Vec<Vec<String>> = growth_runs(&plan)
            .into_iter()
            .map(|(s, f, l)| vec![s.to_string(), f.to_string(), l.to_string()])
            .collect();
        write_csv(&a.out.join("context_runs.csv"), &["token_start", "first_target", "last_target"], &runs)?;
        doc.insert("context_runs".into(), serde_json::to_value(growth_runs(&plan)).expect("serializable"));
    }
    let mut audio: Vec<(String, f64)> = Vec::new();
    if let Some(d) = a.audio_seconds {
        audio.push(("story".into(), d));
    }
    if let Some(p) = &a.manifest {
        let (m, ins) = open_manifest(p)?;
        inputs.extend(ins);
        audio.extend(m.stories.iter().map(|s| (s.name.clone(), s.duration_seconds)));
    }
    if !audio.is_empty() {
        let mut rows = Vec::new();
        let mut per_story = serde_json::Map::new();
        for (story, d) in &audio {
            let windows = plan_audio_windows(*d, a.audio_window, a.audio_stride)?;
            for w in &windows {
                rows.push(vec![story.clone(), fmt(w.t_start), fmt(w.t_end), fmt(w.timestamp())]);
            }
            per_story.insert(story.clone(), serde_json::json!(windows.len()));
        }
        write_csv(&a.out.join("audio_plan.csv"), &["story", "t_start", "t_end", "timestamp"], &rows)?;
        doc.insert("audio_windows_per_story".into(), serde_json::Value::Object(per_story));
    }
    doc.insert(
        "parameters".into(),
        serde_json::json!({
            "max_context": a.max_context,
            "reset_context": a.reset_context,
            "audio_window_seconds": a.audio_window,
            "audio_stride_seconds": a.audio_stride,
            "window_convention": "token_start..=token_end, token_start 0 = story onset",
        }),
    );
    write_text(&a.out.join("plan.json"), &to_json(&serde_json::Value::Object(doc))?)?;
    write_run_record(&a.out, "plan", cli, a, None, inputs)
}

fn prepare(manifest: &DatasetManifest, prep: &PrepArgs, stories: Option<&[String]>) -> Result<(Vec<String>, PrepConfig, PreparedDataset)> {
    let spaces = prep.spaces(manifest);
    let cfg = prep.config();
    let data = prepare_dataset(manifest, &spaces, stories, &cfg)?;
    Ok((spaces, cfg, data))
}

fn preprocess(a: &PreprocessArgs, cli: &Cli) -> Result<()> {
    let (m, inputs) = open_manifest(&a.manifest)?;
    let (spaces, cfg, data) = prepare(&m, &a.prep, None)?;
    for story in &data.stories {
        let dir = a.out.join("prepared").join(&story.name);
        mkdir(&dir)?;
        write_f64(&story.response.view(), dir.join("response.vxt"))?;
        for (space, d) in &story.design {
            write_f64(&d.view(), dir.join(format!("{space}.vxt")))?;
        }
    }
    let summary = serde_json::json!({
        "spaces": spaces,
        "config": cfg,
        "stories": data.stories.iter().map(|s| serde_json::json!({
            "name": s.name, "role": s.role, "n_trs": s.response.nrows(),
            "removed_from_onset": s.removed_from_onset,
        })).collect::<Vec<_>>(),
        "zero_variance_voxels": data.zero_variance.iter().filter(|z| **z).count(),
    });
    write_text(&a.out.join("prep.json"), &to_json(&summary)?)?;
    write_f64(&Array1::from(data.response_scale.clone()).view(), a.out.join("response_scale.vxt"))?;
    write_run_record(&a.out, "preprocess", cli, a, None, inputs)
}

/// What `score` needs to reproduce the preparation used at fit time.
#[derive(Debug, Serialize, Deserialize)]
struct FitRecord {
    spaces: Vec<String>,
    train_stories: Vec<String>,
    prep: PrepConfig,
}

fn train_story_names(m: &DatasetManifest) -> Vec<String> {
    m.stories_with_role(StoryRole::Train).map(|s| s.name.clone()).collect()
}

fn test_story_names(m: &DatasetManifest) -> Vec<String> {
    m.stories_with_role(StoryRole::Test).map(|s| s.name.clone()).collect()
}

fn fit(a: &FitArgs, cli: &Cli) -> Result<()> {
    let (m, inputs) = open_manifest(&a.manifest)?;
    let all_train = train_story_names(&m);
    let train = match a.train_stories {
        Some(n) => story_subsets(&all_train, &[n], a.ridge.seed)?.remove(0),
        None => all_train,
    };
    let cv = a.ridge.config()?;
    let (spaces, cfg, data) = prepare(&m, &a.prep, Some(&train))?;
    let stories: Vec<&PreparedStory> = data.with_role(StoryRole::Train);
    let names: Vec<String> = stories.iter().map(|s| s.name.clone()).collect();
    let y = data.responses(&stories)?;
    mkdir(&a.out)?;
    let mut rows = Vec::new();
    for space in &spaces {
        let x = data.design(space, &stories)?;
        let sol = fit_ridge_matrix(x.view(), y.view(), &cv)?;
        let model = EncodingModel {
            weights: sol.weights,
            alpha_per_voxel: sol.alpha_per_voxel,
            cv_score_per_voxel: sol.cv_score_per_voxel,
            feature_space_id: space.clone(),
            layer_id: 0,
            training_meta: TrainingMeta {
                stories: names.clone(),
                n_timepoints: y.nrows(),
                cv: cv.clone(),
                delays_trs: cfg.delays_trs.clone(),
                n_features: m.feature_width(space).unwrap_or(0),
            },
        };
        model.save(&a.out.join("models").join(space))?;
        for v in 0..model.n_voxels() {
            rows.push(vec![
                v.to_string(),
                space.clone(),
                fmt(model.alpha_per_voxel[v]),
                fmt(model.cv_score_per_voxel[v]),
            ]);
        }
    }
    write_csv(&a.out.join("cv_scores.csv"), &["voxel", "space", "alpha", "cv_r"], &rows)?;
    let record = FitRecord {
        spaces,
        train_stories: names,
        prep: cfg,
    };
    write_text(&a.out.join("fit.json"), &to_json(&record)?)?;
    write_run_record(&a.out, "fit", cli, a, Some(a.ridge.seed), inputs)
}

/// Concatenated predictions, concatenated responses, and untrimmed predictions per story.
type EvaluationRows = (Array2<f64>, Array2<f64>, Vec<(String, Array2<f64>)>);

/// Predictions and responses over the test stories, with the evaluation exclusion applied.
fn evaluation_rows(
    data: &PreparedDataset,
    cfg: &PrepConfig,
    mut predict: impl FnMut(&PreparedStory) -> Result<Array2<f64>>,
) -> Result<EvaluationRows> {
    let mut preds = Vec::new();
    let mut actuals = Vec::new();
    let mut full = Vec::new();
    for story in data.with_role(StoryRole::Test) {
        let pred = predict(story)?;
        let (p, y) = trim_for_evaluation(
            pred.view(),
            story.response.view(),
            &cfg.trim,
            data.tr_seconds,
            story.removed_from_onset,
        )?;
        preds.push(p);
        actuals.push(y);
        full.push((story.name.clone(), pred));
    }
    if preds.is_empty() {
        return Err(Error::invalid("manifest has no test stories"));
    }
    let cat = |parts: &[Array2<f64>]| {
        let views: Vec<ArrayView2<'_, f64>> = parts.iter().map(|p| p.view()).collect();
        concatenate(Axis(0), &views).map_err(|e| Error::shape(e.to_string()))
    };
    Ok((cat(&preds)?, cat(&actuals)?, full))
}

fn score_cmd(a: &ScoreArgs, cli: &Cli) -> Result<()> {
    let (m, mut inputs) = open_manifest(&a.manifest)?;
    let rec_path = a.models.join("fit.json");
    let text = std::fs::read_to_string(&rec_path).map_err(|e| Error::io(&rec_path, e))?;
    let record: FitRecord = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: rec_path.clone(),
        message: e.to_string(),
    })?;
    inputs.insert(rec_path.display().to_string(), sha256_file(&rec_path)?);
    let mut stories = record.train_stories.clone();
    stories.extend(test_story_names(&m));
    let data = prepare_dataset(&m, &record.spaces, Some(&stories), &record.prep)?;
    mkdir(&a.out)?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for space in &record.spaces {
        let dir = a.models.join("models").join(space);
        let model = EncodingModel::load(&dir)?;
        inputs.insert(
            dir.join("weights.vxt").display().to_string(),
            sha256_file(&dir.join("weights.vxt"))?,
        );
        let (pred, actual, full) = evaluation_rows(&data, &record.prep, |s| predict_matrix(model.weights.view(), s.design[space].view()))?;
        let pdir = a.out.join("predictions").join(space);
        mkdir(&pdir)?;
        for (story, p) in &full {
            write_f64(&p.view(), pdir.join(format!("{story}.vxt")))?;
        }
        let s = score(pred.view(), actual.view())?;
        write_f64(&Array1::from(s.r.clone()).view(), a.out.join(format!("r_{space}.vxt")))?;
        for v in 0..s.r.len() {
            rows.push(vec![v.to_string(), space.clone(), fmt(s.r[v]), fmt(s.r_signed_sq[v])]);
        }
        let mean = s.r.iter().sum::<f64>() / s.r.len() as f64;
        summary.push(vec![space.clone(), fmt(mean), s.r.len().to_string()]);
    }
    write_csv(&a.out.join("scores.csv"), &["voxel", "space", "r", "r_signed_sq"], &rows)?;
    write_csv(&a.out.join("summary.csv"), &["space", "mean_r", "n_voxels"], &summary)?;
    write_run_record(&a.out, "score", cli, a, None, inputs)
}

fn stack(a: &StackArgs, cli: &Cli) -> Result<()> {
    let (m, inputs) = open_manifest(&a.manifest)?;
    let cv = a.ridge.config()?;
    let (spaces, cfg, data) = prepare(&m, &a.prep, None)?;
    if spaces.len() < 2 {
        return Err(Error::invalid("stacking needs at least two feature spaces"));
    }
    let baseline = a.baseline.clone().unwrap_or_else(|| spaces[spaces.len() - 1].clone());
    let base_idx = spaces
        .iter()
        .position(|s| *s == baseline)
        .ok_or_else(|| Error::invalid(format!("baseline '{baseline}' is not among {spaces:?}")))?;
    let attribution: Vec<usize> = if a.attribution_spaces.is_empty() {
        (0..spaces.len()).filter(|&i| i != base_idx).collect()
    } else {
        a.attribution_spaces
            .iter()
            .map(|n| {
                spaces
                    .iter()
                    .position(|s| s == n)
                    .ok_or_else(|| Error::invalid(format!("attribution space '{n}' is not stacked")))
            })
            .collect::<Result<_>>()?
    };

    let train = data.with_role(StoryRole::Train);
    if a.validation_stories == 0 || a.validation_stories >= train.len() {
        return Err(Error::invalid(format!(
            "--validation-stories must be in 1..{} for {} training stories",
            train.len(),
            train.len()
        )));
    }
    let (fit_part, val_part) = train.split_at(train.len() - a.validation_stories);
    let provenance = SegmentProvenance {
        fit_stories: fit_part.iter().map(|s| s.name.clone()).collect(),
        validation_stories: val_part.iter().map(|s| s.name.clone()).collect(),
    };
    let y_fit = data.responses(fit_part)?;
    let y_val = data.responses(val_part)?;
    let x_fit: Vec<Array2<f64>> = spaces.iter().map(|s| data.design(s, fit_part)).collect::<Result<_>>()?;
    let x_val: Vec<Array2<f64>> = spaces.iter().map(|s| data.design(s, val_part)).collect::<Result<_>>()?;

    let lengths: Vec<usize> = fit_part.iter().map(|s| s.response.nrows()).collect();
    let folds = FoldSpec::aligned(&lengths, a.folds, DEFAULT_FOLD_CHUNK_TRS)?;
    let views: Vec<ArrayView2<'_, f64>> = x_fit.iter().map(|x| x.view()).collect();
    let held = heldout_predictions(&views, y_fit.view(), &folds, &cv)?;
    let alphas = stack_weights(&residual_covariance(&held, y_fit.view())?)?;

    let models: Vec<Array2<f64>> = x_fit
        .iter()
        .map(|x| Ok(fit_ridge_matrix(x.view(), y_fit.view(), &cv)?.weights))
        .collect::<Result<_>>()?;
    let predict_all = |xs: &[ArrayView2<'_, f64>]| -> Result<Vec<Array2<f64>>> {
        models.iter().zip(xs).map(|(w, x)| predict_matrix(w.view(), *x)).collect()
    };
    let val_views: Vec<ArrayView2<'_, f64>> = x_val.iter().map(|x| x.view()).collect();
    let val_preds = predict_all(&val_views)?;
    let val_pred_views: Vec<ArrayView2<'_, f64>> = val_preds.iter().map(|p| p.view()).collect();
    let val_stacked = stacked_predict(&val_pred_views, alphas.view())?;
    let criterion = GateCriterion {
        block_trs: a.gate_block_trs,
        n_resamples: a.gate_resamples,
        confidence: a.gate_confidence,
        seed: a.ridge.seed,
    };
    let gate = gate_stacked(val_stacked.view(), val_preds[base_idx].view(), y_val.view(), &provenance, &criterion)?;

    // test-story predictions per space, stacked, and gated
    let mut per_space_eval: Vec<(Array2<f64>, Array2<f64>)> = Vec::new();
    for (k, space) in spaces.iter().enumerate() {
        let (p, y, _) = evaluation_rows(&data, &cfg, |s| predict_matrix(models[k].view(), s.design[space].view()))?;
        per_space_eval.push((p, y));
    }
    let stacked_of = |s: &PreparedStory| -> Result<Array2<f64>> {
        let xs: Vec<ArrayView2<'_, f64>> = spaces.iter().map(|sp| s.design[sp].view()).collect();
        let preds = predict_all(&xs)?;
        let pv: Vec<ArrayView2<'_, f64>> = preds.iter().map(|p| p.view()).collect();
        stacked_predict(&pv, alphas.view())
    };
    let (stacked_eval, actual_eval, _) = evaluation_rows(&data, &cfg, stacked_of)?;
    let (final_eval, _, final_full) = evaluation_rows(&data, &cfg, |s| {
        let st = stacked_of(s)?;
        let base = predict_matrix(models[base_idx].view(), s.design[&baseline].view())?;
        gated_prediction(st.view(), base.view(), &gate)
    })?;

    mkdir(&a.out)?;
    let pdir = a.out.join("predictions");
    mkdir(&pdir)?;
    for (story, p) in &final_full {
        write_f64(&p.view(), pdir.join(format!("{story}.vxt")))?;
    }
    write_f64(&alphas.view(), a.out.join("alphas.vxt"))?;
    let gate_vec: Array1<f64> = gate.iter().map(|g| if *g == Gate::Stacked { 1.0 } else { 0.0 }).collect();
    write_f64(&gate_vec.view(), a.out.join("gate.vxt"))?;

    let per_space_scores: Vec<Vec<f64>> = per_space_eval
        .iter()
        .map(|(p, y)| Ok(score(p.view(), y.view())?.r))
        .collect::<Result<_>>()?;
    let stacked_r = score(stacked_eval.view(), actual_eval.view())?.r;
    let final_r = score(final_eval.view(), actual_eval.view())?.r;
    write_f64(&Array1::from(stacked_r.clone()).view(), a.out.join("r_stacked.vxt"))?;
    write_f64(&Array1::from(final_r.clone()).view(), a.out.join("r_final.vxt"))?;

    let mut com_header = vec!["voxel".to_string(), "center_of_mass".into(), "gate".into()];
    com_header.extend(spaces.iter().map(|s| format!("alpha_{s}")));
    let mut com_rows = Vec::new();
    let mut score_rows = Vec::new();
    for v in 0..alphas.nrows() {
        let com = subset_center_of_mass(alphas.row(v), &attribution)?;
        let mut row = vec![
            v.to_string(),
            com.map(fmt).unwrap_or_default(),
            match gate[v] {
                Gate::Stacked => "stacked".into(),
                Gate::Baseline => "baseline".into(),
            },
        ];
        row.extend(alphas.row(v).iter().map(|x| fmt(*x)));
        com_rows.push(row);
        let mut srow = vec![v.to_string(), fmt(stacked_r[v]), fmt(final_r[v])];
        srow.extend(per_space_scores.iter().map(|r| fmt(r[v])));
        score_rows.push(srow);
    }
    let header: Vec<&str> = com_header.iter().map(String::as_str).collect();
    write_csv(&a.out.join("center_of_mass.csv"), &header, &com_rows)?;
    let mut s_header = vec!["voxel".to_string(), "stacked_r".into(), "final_r".into()];
    s_header.extend(spaces.iter().map(|s| format!("{s}_r")));
    let header: Vec<&str> = s_header.iter().map(String::as_str).collect();
    write_csv(&a.out.join("stack_scores.csv"), &header, &score_rows)?;
    let meta = serde_json::json!({
        "spaces": spaces,
        "baseline": baseline,
        "attribution_spaces": attribution.iter().map(|&i| spaces[i].clone()).collect::<Vec<_>>(),
        "provenance": provenance,
        "folds": folds.folds().len(),
        "gate": criterion,
        "n_gated_stacked": gate.iter().filter(|g| **g == Gate::Stacked).count(),
    });
    write_text(&a.out.join("stack.json"), &to_json(&meta)?)?;
    write_run_record(&a.out, "stack", cli, a, Some(a.ridge.seed), inputs)
}

fn ceiling(a: &CeilingArgs, cli: &Cli) -> Result<()> {
    let (m, mut inputs) = open_manifest(&a.manifest)?;
    let cfg = a.prep.config();
    let tests = test_story_names(&m);
    let reps: Vec<_> = tests
        .iter()
        .filter(|s| m.test_repeats.contains_key(*s))
        .map(|s| prepare_repeats(&m, s, &cfg))
        .collect::<Result<_>>()?;
    if reps.is_empty() {
        return Err(Error::invalid("no test story lists repeats"));
    }
    let views: Vec<_> = reps.iter().map(|r| r.view()).collect();
    let all = concatenate(Axis(1), &views).map_err(|_| Error::shape("test stories have different repeat counts"))?;
    let est = noise_ceiling(all.view())?;
    let norm = match &a.scores {
        Some(p) => {
            inputs.insert(p.display().to_string(), sha256_file(p)?);
            Some(normalized_scores(read_array1(p)?.view(), &est)?)
        }
        None => None,
    };
    mkdir(&a.out)?;
    let cc: Array1<f64> = est.iter().map(|e| e.cc_max).collect();
    write_f64(&cc.view(), a.out.join("cc_max.vxt"))?;
    let mut header = vec!["voxel", "signal_power", "noise_power", "cc_max", "cc_max_clamped", "flagged", "display"];
    if norm.is_some() {
        header.push("cc_norm");
    }
    let rows: Vec<Vec<String>> = est
        .iter()
        .enumerate()
        .map(|(v, e)| {
            let mut row = vec![
                v.to_string(),
                fmt(e.signal_power),
                fmt(e.noise_power),
                fmt(e.cc_max),
                fmt(e.cc_max_clamped),
                e.flagged.to_string(),
                e.display().to_string(),
            ];
            if let Some(n) = &norm {
                row.push(fmt(n[v]));
            }
            row
        })
        .collect();
    write_csv(&a.out.join("ceiling.csv"), &header, &rows)?;
    if let Some(n) = &norm {
        write_f64(&n.view(), a.out.join("cc_norm.vxt"))?;
    }
    write_run_record(&a.out, "ceiling", cli, a, None, inputs)
}

fn scaling(a: &ScalingArgs, cli: &Cli) -> Result<()> {
    if a.inputs.len() != a.sizes.len() {
        return Err(Error::invalid(format!(
            "{} inputs but {} sizes",
            a.inputs.len(),
            a.sizes.len()
        )));
    }
    let space = match &a.space {
        Some(s) => s.clone(),
        None => first_scored_space(&a.inputs[0])?,
    };
    let mut inputs = BTreeMap::new();
    let mut columns = Vec::new();
    for dir in &a.inputs {
        let p = dir.join(format!("r_{space}.vxt"));
        inputs.insert(p.display().to_string(), sha256_file(&p)?);
        columns.push(read_array1(&p)?);
    }
    let n_vox = columns[0].len();
    if columns.iter().any(|c| c.len() != n_vox) {
        return Err(Error::shape("score runs cover different voxel counts"));
    }
    let matrix = Array2::from_shape_fn((columns.len(), n_vox), |(i, v)| columns[i][v]);
    let means: Vec<f64> = columns.iter().map(|c| c.mean().unwrap_or(0.0)).collect();
    let mean_fit = fit_loglinear(&a.sizes, &means, a.log_base)?;
    let pct_fit = fit_loglinear(&a.sizes, &percent_change(&means, 0)?, a.log_base)?;
    let slopes = voxelwise_slopes(&a.sizes, matrix.view(), a.voxel_log_base)?;
    mkdir(&a.out)?;
    let row = |kind: &str, f: &crate::scaling::ScalingFit| {
        vec![
            kind.to_string(),
            space.clone(),
            fmt(f.slope),
            fmt(f.intercept),
            fmt(f.pearson_r),
            f.degenerate.to_string(),
            fmt(f.log_base),
        ]
    };
    write_csv(
        &a.out.join("scaling_fit.csv"),
        &["series", "space", "slope", "intercept", "pearson_r", "degenerate", "log_base"],
        &[row("mean_r", &mean_fit), row("percent_change", &pct_fit)],
    )?;
    let mut series = String::from("size,mean_r,percent_change\n");
    for ((s, mr), pc) in a.sizes.iter().zip(&means).zip(percent_change(&means, 0)?) {
        let _ = writeln!(series, "{},{},{}", fmt(*s), fmt(*mr), fmt(pc));
    }
    write_text(&a.out.join("scaling_series.csv"), &series)?;
    write_f64(&slopes.view(), a.out.join("voxel_slopes.vxt"))?;
    let rows: Vec<Vec<String>> = slopes.iter().enumerate().map(|(v, s)| vec![v.to_string(), fmt(*s)]).collect();
    write_csv(&a.out.join("voxel_slopes.csv"), &["voxel", "slope"], &rows)?;
    write_run_record(&a.out, "scaling", cli, a, None, inputs)
}

fn first_scored_space(dir: &Path) -> Result<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let n = e.file_name().to_string_lossy().to_string();
            n.strip_prefix("r_").and_then(|s| s.strip_suffix(".vxt")).map(str::to_string)
        })
        .collect();
    names.sort();
    names
        .into_iter()
        .next()
        .ok_or_else(|| Error::invalid(format!("no r_<space>.vxt files in {}", dir.display())))
}
