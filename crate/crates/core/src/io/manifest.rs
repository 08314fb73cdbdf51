//! Dataset manifest: a TOML document describing stories, timing, feature-space
//! tensors and response tensors. Relative paths resolve against the manifest's
//! directory.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::tensor::{read_array1, read_tensor_header};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StoryRole {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoryEntry {
    pub name: String,
    pub duration_seconds: f64,
    pub n_trs: usize,
    pub role: StoryRole,
}

/// Per-story feature tensor (`items × features`) and its item timestamps (1-d, seconds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRef {
    pub path: PathBuf,
    pub timestamps: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub subject_id: String,
    pub tr_seconds: f64,
    pub stories: Vec<StoryEntry>,
    /// space name → story name → feature reference
    #[serde(default)]
    pub feature_spaces: BTreeMap<String, BTreeMap<String, FeatureRef>>,
    /// story name → `time × voxels` response tensor
    pub responses: BTreeMap<String, PathBuf>,
    /// test story name → repeat tensors, each `time × voxels`
    #[serde(default)]
    pub test_repeats: BTreeMap<String, Vec<PathBuf>>,

    #[serde(skip)]
    root: PathBuf,
    #[serde(skip)]
    n_voxels: usize,
    #[serde(skip)]
    feature_widths: BTreeMap<String, usize>,
}

impl DatasetManifest {
    pub fn new(subject_id: impl Into<String>, tr_seconds: f64) -> Self {
        Self {
            subject_id: subject_id.into(),
            tr_seconds,
            stories: Vec::new(),
            feature_spaces: BTreeMap::new(),
            responses: BTreeMap::new(),
            test_repeats: BTreeMap::new(),
            root: PathBuf::new(),
            n_voxels: 0,
            feature_widths: BTreeMap::new(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Voxel count shared by every response tensor. Only meaningful after validation.
    pub fn n_voxels(&self) -> usize {
        self.n_voxels
    }

    pub fn feature_width(&self, space: &str) -> Option<usize> {
        self.feature_widths.get(space).copied()
    }

    pub fn story(&self, name: &str) -> Option<&StoryEntry> {
        self.stories.iter().find(|s| s.name == name)
    }

    pub fn stories_with_role(&self, role: StoryRole) -> impl Iterator<Item = &StoryEntry> {
        self.stories.iter().filter(move |s| s.role == role)
    }

    pub fn space_names(&self) -> Vec<String> {
        self.feature_spaces.keys().cloned().collect()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    /// Validate every invariant against the files on disk. `root` is the directory
    /// relative paths resolve against.
    pub fn validate(mut self, root: &Path, source: &Path) -> Result<Self> {
        self.root = root.to_path_buf();
        let bad = |message: String| Error::Manifest {
            path: source.to_path_buf(),
            message,
        };

        if !(self.tr_seconds > 0.0 && self.tr_seconds.is_finite()) {
            return Err(bad(format!("tr_seconds must be positive, got {}", self.tr_seconds)));
        }
        if self.stories.is_empty() {
            return Err(bad("no stories listed".into()));
        }
        let mut names = HashSet::new();
        for s in &self.stories {
            if !names.insert(s.name.as_str()) {
                return Err(bad(format!("duplicate story '{}'", s.name)));
            }
            if !(s.duration_seconds > 0.0) || s.n_trs == 0 {
                return Err(bad(format!("story '{}' needs positive duration and n_trs", s.name)));
            }
            let implied = s.duration_seconds / self.tr_seconds;
            if (implied - s.n_trs as f64).abs() > 1.0 {
                return Err(bad(format!(
                    "story '{}': n_trs {} inconsistent with duration {} s at TR {} s",
                    s.name, s.n_trs, s.duration_seconds, self.tr_seconds
                )));
            }
        }

        for key in self.responses.keys() {
            if !names.contains(key.as_str()) {
                return Err(bad(format!("response for unknown story '{key}'")));
            }
        }
        let mut n_voxels: Option<usize> = None;
        for s in &self.stories {
            let rel = self
                .responses
                .get(&s.name)
                .ok_or_else(|| bad(format!("story '{}' has no response tensor", s.name)))?;
            let header = self.header_of(rel, source)?;
            check_response_shape(&header.shape, s, &mut n_voxels)?;
        }
        self.n_voxels = n_voxels.unwrap_or(0);

        for (story, repeats) in &self.test_repeats {
            let entry = self
                .story(story)
                .ok_or_else(|| bad(format!("repeats for unknown story '{story}'")))?;
            if entry.role != StoryRole::Test {
                return Err(bad(format!("repeats listed for non-test story '{story}'")));
            }
            if repeats.len() < 2 {
                return Err(bad(format!(
                    "test story '{story}' has {} repeat(s); at least 2 are required",
                    repeats.len()
                )));
            }
            for rel in repeats {
                let header = self.header_of(rel, source)?;
                check_response_shape(&header.shape, entry, &mut n_voxels)?;
            }
        }

        let mut widths = BTreeMap::new();
        for (space, per_story) in &self.feature_spaces {
            let mut width: Option<usize> = None;
            for s in &self.stories {
                let fref = per_story.get(&s.name).ok_or_else(|| {
                    bad(format!("feature space '{space}' lacks story '{}'", s.name))
                })?;
                let header = self.header_of(&fref.path, source)?;
                if header.shape.len() != 2 {
                    return Err(bad(format!(
                        "feature tensor {} must be 2-d, found shape {:?}",
                        fref.path.display(),
                        header.shape
                    )));
                }
                match width {
                    None => width = Some(header.shape[1]),
                    Some(w) if w != header.shape[1] => {
                        return Err(bad(format!(
                            "feature space '{space}': story '{}' has width {}, expected {w}",
                            s.name, header.shape[1]
                        )))
                    }
                    _ => {}
                }
                let ts_path = self.resolve(&fref.timestamps);
                if !ts_path.exists() {
                    return Err(bad(format!("missing file {}", ts_path.display())));
                }
                let ts = read_array1(&ts_path)?;
                if ts.len() != header.shape[0] {
                    return Err(bad(format!(
                        "feature space '{space}', story '{}': {} timestamps for {} items",
                        s.name,
                        ts.len(),
                        header.shape[0]
                    )));
                }
                check_increasing(ts.as_slice().unwrap(), &format!("{space}/{}", s.name))?;
            }
            for key in per_story.keys() {
                if !names.contains(key.as_str()) {
                    return Err(bad(format!("feature space '{space}' references unknown story '{key}'")));
                }
            }
            widths.insert(space.clone(), width.unwrap_or(0));
        }
        self.feature_widths = widths;
        Ok(self)
    }

    fn header_of(&self, rel: &Path, source: &Path) -> Result<super::tensor::TensorHeader> {
        let p = self.resolve(rel);
        if !p.exists() {
            return Err(Error::Manifest {
                path: source.to_path_buf(),
                message: format!("missing file {}", p.display()),
            });
        }
        read_tensor_header(&p)
    }
}

fn check_response_shape(shape: &[usize], story: &StoryEntry, n_voxels: &mut Option<usize>) -> Result<()> {
    if shape.len() != 2 {
        return Err(Error::shape(format!(
            "response for story '{}' must be 2-d (time × voxels), found {shape:?}",
            story.name
        )));
    }
    if shape[0] != story.n_trs {
        return Err(Error::shape(format!(
            "response for story '{}' has {} rows, n_trs is {}",
            story.name, shape[0], story.n_trs
        )));
    }
    match *n_voxels {
        None => *n_voxels = Some(shape[1]),
        Some(expected) if expected != shape[1] => {
            return Err(Error::VoxelMismatch {
                story: story.name.clone(),
                expected,
                found: shape[1],
            })
        }
        _ => {}
    }
    Ok(())
}

pub(crate) fn check_increasing(ts: &[f64], context: &str) -> Result<()> {
    for (i, w) in ts.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err(Error::NonMonotone {
                context: context.to_string(),
                index: i + 1,
            });
        }
    }
    if let Some(i) = ts.iter().position(|t| !t.is_finite()) {
        return Err(Error::NonMonotone {
            context: context.to_string(),
            index: i,
        });
    }
    Ok(())
}

/// Parse and eagerly validate a manifest.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: DatasetManifest = toml::from_str(&text).map_err(|e| Error::Manifest {
        path: path.to_path_buf(),
        message: e.to_string().replace('\n', " "),
    })?;
    let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    manifest.validate(&root, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::tensor::write_f64;
    use ndarray::{Array1, Array2};

    fn story(name: &str, n: usize, role: StoryRole) -> StoryEntry {
        StoryEntry {
            name: name.into(),
            duration_seconds: n as f64 * 2.0,
            n_trs: n,
            role,
        }
    }

    fn write_resp(dir: &Path, name: &str, rows: usize, vox: usize) -> PathBuf {
        let rel = PathBuf::from(format!("{name}.vxt"));
        write_f64(&Array2::<f64>::ones((rows, vox)).view(), dir.join(&rel)).unwrap();
        rel
    }

    fn minimal(dir: &Path) -> DatasetManifest {
        let mut m = DatasetManifest::new("S01", 2.0);
        m.stories.push(story("a", 20, StoryRole::Train));
        m.responses.insert("a".into(), write_resp(dir, "a", 20, 5));
        write_f64(&Array2::<f64>::ones((6, 3)).view(), dir.join("fa.vxt")).unwrap();
        let ts = Array1::from_iter((0..6).map(|i| i as f64 * 5.0));
        write_f64(&ts.view(), dir.join("fa_t.vxt")).unwrap();
        let mut per = BTreeMap::new();
        per.insert(
            "a".to_string(),
            FeatureRef {
                path: "fa.vxt".into(),
                timestamps: "fa_t.vxt".into(),
            },
        );
        m.feature_spaces.insert("sem".into(), per);
        m
    }

    #[test]
    fn minimal_manifest_loads() {
        let dir = tempfile::tempdir().unwrap();
        let m = minimal(dir.path());
        let p = dir.path().join("manifest.toml");
        m.save(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        for field in ["subject_id", "tr_seconds", "stories", "feature_spaces", "responses"] {
            assert!(text.contains(field), "missing {field} in\n{text}");
        }
        let loaded = load_manifest(&p).unwrap();
        assert_eq!(loaded.n_voxels(), 5);
        assert_eq!(loaded.feature_width("sem"), Some(3));
        assert_eq!(loaded.stories.len(), 1);
    }

    #[test]
    fn voxel_mismatch_names_story() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = DatasetManifest::new("S01", 2.0);
        m.stories.push(story("one", 10, StoryRole::Train));
        m.stories.push(story("two", 10, StoryRole::Train));
        m.responses.insert("one".into(), write_resp(dir.path(), "one", 10, 9000));
        m.responses.insert("two".into(), write_resp(dir.path(), "two", 10, 9001));
        let p = dir.path().join("manifest.toml");
        m.save(&p).unwrap();
        match load_manifest(&p).unwrap_err() {
            Error::VoxelMismatch { story, expected, found } => {
                assert_eq!(story, "two");
                assert_eq!((expected, found), (9000, 9001));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn ten_repeats_listed() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = minimal(dir.path());
        m.stories.push(story("t", 20, StoryRole::Test));
        m.responses.insert("t".into(), write_resp(dir.path(), "t", 20, 5));
        let reps: Vec<PathBuf> = (0..10)
            .map(|r| write_resp(dir.path(), &format!("t_r{r}"), 20, 5))
            .collect();
        m.test_repeats.insert("t".into(), reps);
        write_f64(&Array2::<f64>::ones((4, 3)).view(), dir.path().join("ft.vxt")).unwrap();
        write_f64(&ndarray::arr1(&[1.0, 2.0, 3.0, 4.0]).view(), dir.path().join("ft_t.vxt")).unwrap();
        m.feature_spaces.get_mut("sem").unwrap().insert(
            "t".into(),
            FeatureRef {
                path: "ft.vxt".into(),
                timestamps: "ft_t.vxt".into(),
            },
        );
        let p = dir.path().join("manifest.toml");
        m.save(&p).unwrap();
        let loaded = load_manifest(&p).unwrap();
        assert_eq!(loaded.test_repeats["t"].len(), 10);
    }

    #[test]
    fn missing_reference_and_non_monotone_timestamps() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = minimal(dir.path());
        m.responses.insert("a".into(), "nope.vxt".into());
        let p = dir.path().join("manifest.toml");
        m.save(&p).unwrap();
        let err = load_manifest(&p).unwrap_err();
        assert!(err.to_string().contains("nope.vxt"), "{err}");

        let m = minimal(dir.path());
        write_f64(&ndarray::arr1(&[0.0, 1.0, 1.0, 2.0, 3.0, 4.0]).view(), dir.path().join("fa_t.vxt")).unwrap();
        m.save(&p).unwrap();
        assert!(matches!(load_manifest(&p).unwrap_err(), Error::NonMonotone { index: 2, .. }));
    }

    #[test]
    fn single_repeat_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = minimal(dir.path());
        m.stories.push(story("t", 20, StoryRole::Test));
        m.responses.insert("t".into(), write_resp(dir.path(), "t", 20, 5));
        m.test_repeats.insert("t".into(), vec![write_resp(dir.path(), "r0", 20, 5)]);
        let p = dir.path().join("manifest.toml");
        m.save(&p).unwrap();
        assert!(load_manifest(&p).is_err());
    }
}
