//! Corpus manifest: which files hold each video's inputs and which split it belongs to.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus_io::{frames_from_intervals, AnnotationSet, BinaryMatrix, load_events, load_feature_table, load_json, load_probability_matrix, store_json, EventSet, FeatureTable, ProbabilityMatrix};
use crate::error::{bail, Result};
use crate::taxonomy::LabelTaxonomy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneEntry {
    pub name: String,
    /// Names of the precomputed heads, in the order of `VideoEntry::head_probs`.
    #[serde(default)]
    pub heads: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoEntry {
    pub video_id: String,
    pub frames: usize,
    pub split: Split,
    /// Feature file per backbone.
    #[serde(default)]
    pub features: BTreeMap<String, PathBuf>,
    /// Precomputed head probability files per backbone.
    #[serde(default)]
    pub head_probs: BTreeMap<String, Vec<PathBuf>>,
}

/// Relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub taxonomy: PathBuf,
    pub ground_truth: PathBuf,
    pub backbones: Vec<BackboneEntry>,
    pub videos: Vec<VideoEntry>,
}

/// Loads a manifest and everything it references, resolving paths against its directory.
pub fn load_manifest_corpus(path: impl AsRef<Path>) -> Result<LoadedCorpus> {
    let path = path.as_ref();
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    CorpusManifest::load(path)?.load_corpus(&base)
}

/// Manifest contents loaded into memory.
#[derive(Debug, Clone)]
pub struct LoadedCorpus {
    pub taxonomy: LabelTaxonomy,
    pub backbones: Vec<BackboneEntry>,
    pub videos: Vec<LoadedVideo>,
}

impl LoadedCorpus {
    /// Ground truth rasterised to per-frame labels, one matrix per video.
    pub fn frame_labels(&self) -> Result<Vec<BinaryMatrix>> {
        self.videos
            .iter()
            .map(|v| frames_from_intervals(&AnnotationSet::from_events(&v.gt, v.frames), &self.taxonomy))
            .collect()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.videos.len()).filter(|&v| self.videos[v].split == split).collect()
    }
}

#[derive(Debug, Clone)]
pub struct LoadedVideo {
    pub video_id: String,
    pub frames: usize,
    pub split: Split,
    pub gt: EventSet,
    /// Per backbone, `None` when the manifest lists no feature file.
    pub features: Vec<Option<FeatureTable>>,
    /// Per backbone, empty when no precomputed heads are listed.
    pub head_probs: Vec<Vec<ProbabilityMatrix>>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl CorpusManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        load_json(path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        store_json(self, path)
    }

    /// Fails on the first referenced file that does not exist.
    pub fn check_files(&self, base: &Path) -> Result<()> {
        let mut paths = vec![&self.taxonomy, &self.ground_truth];
        for v in &self.videos {
            paths.extend(v.features.values());
            paths.extend(v.head_probs.values().flatten());
        }
        for p in paths {
            let full = resolve(base, p);
            if !full.is_file() {
                bail!(Reference, "manifest references missing file {}", full.display());
            }
        }
        Ok(())
    }

    /// Rewrites every relative path as `base.join(path)`.
    pub fn absolutize(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| *p = resolve(base, p);
        fix(&mut self.taxonomy);
        fix(&mut self.ground_truth);
        for v in &mut self.videos {
            v.features.values_mut().for_each(fix);
            v.head_probs.values_mut().flatten().for_each(fix);
        }
    }

    pub fn load_corpus(&self, base: &Path) -> Result<LoadedCorpus> {
        self.check_files(base)?;
        let taxonomy = LabelTaxonomy::load(resolve(base, &self.taxonomy))?;
        let mut gt: BTreeMap<String, EventSet> = load_events(resolve(base, &self.ground_truth))?
            .into_iter()
            .map(|s| (s.video_id.clone(), s))
            .collect();
        let mut seen = std::collections::BTreeSet::new();
        let mut videos = Vec::with_capacity(self.videos.len());
        for v in &self.videos {
            if !seen.insert(v.video_id.as_str()) {
                bail!(Validation, "video `{}` is listed twice", v.video_id);
            }
            for name in v.features.keys().chain(v.head_probs.keys()) {
                if !self.backbones.iter().any(|b| &b.name == name) {
                    bail!(Reference, "video `{}` references unknown backbone `{name}`", v.video_id);
                }
            }
            let set = gt.remove(&v.video_id).unwrap_or_else(|| EventSet::empty(v.video_id.clone()));
            for e in set.events() {
                taxonomy.class_index(&e.label)?;
                if e.end > v.frames {
                    bail!(Bounds, "ground-truth event ends at {} past {} frames of `{}`", e.end, v.frames, v.video_id);
                }
            }
            let mut features = Vec::new();
            let mut head_probs = Vec::new();
            for b in &self.backbones {
                let table = match v.features.get(&b.name) {
                    Some(p) => {
                        let mut f = load_feature_table(resolve(base, p), &b.name)?;
                        f.video_id = v.video_id.clone();
                        Some(f)
                    }
                    None => None,
                };
                if let Some(f) = &table {
                    if f.frames() != v.frames {
                        bail!(Shape, "features of `{}` have {} frames, expected {}", v.video_id, f.frames(), v.frames);
                    }
                }
                features.push(table);
                let heads = match v.head_probs.get(&b.name) {
                    Some(paths) => {
                        if paths.len() != b.heads.len() {
                            bail!(Shape, "video `{}` lists {} heads for `{}`, expected {}", v.video_id, paths.len(), b.name, b.heads.len());
                        }
                        paths
                            .iter()
                            .map(|p| {
                                let mut m = load_probability_matrix(resolve(base, p), taxonomy.classes())?;
                                if m.frames() != v.frames {
                                    bail!(Shape, "head file {} has {} frames, expected {}", p.display(), m.frames(), v.frames);
                                }
                                m.video_id = v.video_id.clone();
                                Ok(m)
                            })
                            .collect::<Result<Vec<_>>>()?
                    }
                    None => Vec::new(),
                };
                head_probs.push(heads);
            }
            videos.push(LoadedVideo {
                video_id: v.video_id.clone(),
                frames: v.frames,
                split: v.split,
                gt: set,
                features,
                head_probs,
            });
        }
        if let Some(extra) = gt.keys().next() {
            bail!(Reference, "ground truth mentions video `{extra}` missing from the manifest");
        }
        Ok(LoadedCorpus {
            taxonomy,
            backbones: self.backbones.clone(),
            videos,
        })
    }
}
