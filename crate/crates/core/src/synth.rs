//! Seeded synthetic corpora with known ground truth.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus_io::{
    frames_from_intervals, store_events, store_feature_table, store_probability_matrix, AnnotationSet, BinaryMatrix,
    Event, EventSet, FeatureTable, ProbabilityMatrix,
};
use crate::error::{bail, Error, Result};
use crate::manifest::{BackboneEntry, CorpusManifest, Split, VideoEntry};
use crate::taxonomy::{ClassRole, LabelTaxonomy};
use crate::vgwf::sigmoid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthBackbone {
    pub name: String,
    /// Std of the Gaussian noise on every feature dimension.
    pub feature_noise: f64,
    /// One noise scale per simulated head; its logits get `N(0, scale^2)` added.
    pub head_noise: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub videos: usize,
    pub frames: usize,
    /// `None` selects the built-in taxonomy.
    pub taxonomy: Option<crate::taxonomy::TaxonomyDocument>,
    /// Expected pathology events per class per 1000 frames.
    pub event_rate: f64,
    pub event_len_min: usize,
    pub event_len_max: usize,
    /// Minimum number of frames between two events of the same class.
    pub event_gap_min: usize,
    pub landmark_len: usize,
    /// Maximum offset of a landmark window's centre from its region boundary.
    pub landmark_jitter: usize,
    /// Logit magnitude of a clean positive or negative frame.
    pub signal: f64,
    /// Feature dimension per backbone; the first `classes` dims carry signal.
    pub feature_dim: usize,
    pub backbones: Vec<SynthBackbone>,
    /// Per-frame, per-class probability of flipping the label seen by features and heads.
    pub flip_rate: f64,
    /// Videos per split as `[train, val, test]` fractions.
    pub split: [f64; 3],
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            videos: 20,
            frames: 10_000,
            taxonomy: None,
            event_rate: 0.3,
            event_len_min: 20,
            event_len_max: 200,
            event_gap_min: 10,
            landmark_len: 20,
            landmark_jitter: 5,
            signal: 4.0,
            feature_dim: 32,
            backbones: vec![
                SynthBackbone {
                    name: "temporal".into(),
                    feature_noise: 1.0,
                    head_noise: vec![1.5, 2.0, 2.5, 3.0, 3.5],
                },
                SynthBackbone {
                    name: "frame".into(),
                    feature_noise: 0.8,
                    head_noise: vec![1.0, 1.5, 2.0, 2.5, 3.0],
                },
            ],
            flip_rate: 0.05,
            split: [0.6, 0.2, 0.2],
            seed: 7,
        }
    }
}

impl SynthParams {
    /// Every noise source off.
    pub fn noise_free() -> Self {
        let mut p = Self {
            flip_rate: 0.0,
            ..Self::default()
        };
        for b in &mut p.backbones {
            b.feature_noise = 0.0;
            b.head_noise.iter_mut().for_each(|s| *s = 0.0);
        }
        p
    }

    /// Noise 0.25 on features and heads of every backbone, flip rate 0.01.
    pub fn low_noise() -> Self {
        let mut p = Self {
            flip_rate: 0.01,
            ..Self::default()
        };
        for b in &mut p.backbones {
            b.feature_noise = 0.25;
            b.head_noise.iter_mut().for_each(|s| *s = 0.25);
        }
        p
    }

    pub fn taxonomy(&self) -> Result<LabelTaxonomy> {
        match &self.taxonomy {
            Some(doc) => LabelTaxonomy::from_document(doc.clone()),
            None => Ok(LabelTaxonomy::bundled()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let tax = self.taxonomy()?;
        if self.videos == 0 || self.backbones.is_empty() {
            bail!(Validation, "need at least one video and one backbone");
        }
        let r = tax.num_regions();
        if self.frames < r * 4 * self.landmark_len.max(8) {
            bail!(Validation, "{} frames are too few for {r} regions", self.frames);
        }
        if !(0.0..=1.0).contains(&self.flip_rate) || !(self.event_rate >= 0.0) {
            bail!(Validation, "rates must be non-negative and flip_rate at most 1");
        }
        if self.event_len_min == 0 || self.event_len_min > self.event_len_max || self.landmark_len == 0 {
            bail!(Validation, "event lengths must satisfy 1 <= min <= max");
        }
        if !(self.signal > 0.0) || self.feature_dim < tax.num_classes() {
            bail!(Validation, "signal must be positive and feature_dim at least the class count");
        }
        for b in &self.backbones {
            if b.head_noise.is_empty() || !(b.feature_noise >= 0.0) || b.head_noise.iter().any(|s| !(*s >= 0.0)) {
                bail!(Validation, "backbone `{}` needs >= 1 head and non-negative noise scales", b.name);
            }
        }
        if self.split.iter().any(|f| !(*f >= 0.0)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            bail!(Validation, "split fractions must be non-negative and sum to 1");
        }
        Ok(())
    }

    fn split_of(&self, v: usize) -> Split {
        let n = self.videos as f64;
        let train = (self.split[0] * n).round() as usize;
        let val = (self.split[1] * n).round() as usize;
        if v < train {
            Split::Train
        } else if v < train + val {
            Split::Val
        } else {
            Split::Test
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthVideo {
    pub video_id: String,
    pub split: Split,
    pub gt: EventSet,
    pub labels: BinaryMatrix,
    /// One table per backbone.
    pub features: Vec<FeatureTable>,
    /// `head_probs[b][h]`.
    pub head_probs: Vec<Vec<ProbabilityMatrix>>,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub taxonomy: LabelTaxonomy,
    /// Backbone names with their head names.
    pub backbones: Vec<(String, Vec<String>)>,
    pub videos: Vec<SynthVideo>,
}

/// Independent generator for `(video, purpose)` derived from one seed.
fn stream(seed: u64, video: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((video as u64) << 20) | purpose);
    rng
}

const GT_STREAM: u64 = 0;
const FEATURE_STREAM: u64 = 1 << 8;
const HEAD_STREAM: u64 = 1 << 12;

fn sample_ground_truth(params: &SynthParams, tax: &LabelTaxonomy, video_id: &str, rng: &mut ChaCha8Rng) -> Result<EventSet> {
    let t_len = params.frames;
    let r_len = tax.num_regions();
    let mut events = Vec::new();

    // monotone partition: R - 1 sorted cut points with a minimum region length
    let min_len = (t_len / (4 * r_len)).max(1);
    let slack = t_len - min_len * r_len;
    let mut cuts: Vec<usize> = (0..r_len - 1).map(|_| rng.random_range(0..=slack)).collect();
    cuts.sort_unstable();
    let mut bounds = vec![0usize];
    for (i, c) in cuts.iter().enumerate() {
        bounds.push(c + min_len * (i + 1));
    }
    bounds.push(t_len);
    for (r, name) in tax.regions().iter().enumerate() {
        events.push(Event::new(name.clone(), bounds[r], bounds[r + 1], None));
    }

    // landmark windows straddling the boundary between their valid regions
    for (c, name) in tax.classes().iter().enumerate() {
        if tax.role(c) != ClassRole::Landmark {
            continue;
        }
        let valid = tax.landmark_valid_regions(c);
        let (Some(&lo), Some(&hi)) = (valid.iter().min(), valid.iter().max()) else {
            continue;
        };
        if hi != lo + 1 {
            continue;
        }
        let boundary = bounds[hi] as i64;
        let jitter = params.landmark_jitter as i64;
        let centre = boundary + rng.random_range(-jitter..=jitter);
        let half = (params.landmark_len / 2) as i64;
        let start = (centre - half).clamp(bounds[lo] as i64, t_len as i64 - 1) as usize;
        let end = (start + params.landmark_len).min(bounds[hi + 1]);
        if end > start {
            events.push(Event::new(name.clone(), start, end, None));
        }
    }

    // pathology events: alternating gaps and events without same-class overlap
    let mean_len = (params.event_len_min + params.event_len_max) as f64 / 2.0;
    for name in tax.pathologies() {
        if params.event_rate <= 0.0 {
            break;
        }
        let mean_gap = (1000.0 / params.event_rate - mean_len).max(params.event_gap_min as f64);
        let gap_max = (2.0 * mean_gap) as usize - params.event_gap_min;
        let mut t = 0usize;
        loop {
            let gap = rng.random_range(params.event_gap_min..=gap_max.max(params.event_gap_min));
            let len = rng.random_range(params.event_len_min..=params.event_len_max);
            let start = t + gap;
            if start + len + params.event_gap_min > t_len {
                break;
            }
            events.push(Event::new(name.clone(), start, start + len, None));
            t = start + len;
        }
    }
    EventSet::new(video_id, events)
}

fn noisy_targets(labels: &BinaryMatrix, flip_rate: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    labels
        .values()
        .iter()
        .map(|&y| {
            let flipped = flip_rate > 0.0 && rng.random::<f64>() < flip_rate;
            if y != flipped {
                1.0
            } else {
                -1.0
            }
        })
        .collect()
}

fn gaussian(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    if scale == 0.0 {
        0.0
    } else {
        scale * rng.sample::<f64, _>(StandardNormal)
    }
}

fn synth_video(params: &SynthParams, tax: &LabelTaxonomy, v: usize) -> Result<SynthVideo> {
    let video_id = format!("video_{v:03}");
    let gt = sample_ground_truth(params, tax, &video_id, &mut stream(params.seed, v, GT_STREAM))?;
    let labels = frames_from_intervals(&AnnotationSet::from_events(&gt, params.frames), tax)?;
    let c_len = tax.num_classes();
    let mut features = Vec::new();
    let mut head_probs = Vec::new();
    for (b, bb) in params.backbones.iter().enumerate() {
        let mut rng = stream(params.seed, v, FEATURE_STREAM + b as u64);
        let signs = noisy_targets(&labels, params.flip_rate, &mut rng);
        let mut values = Vec::with_capacity(params.frames * params.feature_dim);
        for t in 0..params.frames {
            for d in 0..params.feature_dim {
                let clean = if d < c_len { signs[t * c_len + d] } else { 0.0 };
                values.push((clean + gaussian(&mut rng, bb.feature_noise)) as f32);
            }
        }
        features.push(FeatureTable::new(video_id.clone(), bb.name.clone(), params.feature_dim, values)?);

        let heads = bb
            .head_noise
            .iter()
            .enumerate()
            .map(|(h, &noise)| {
                let mut rng = stream(params.seed, v, HEAD_STREAM + ((b as u64) << 6) + h as u64);
                let signs = noisy_targets(&labels, params.flip_rate, &mut rng);
                let probs = signs
                    .iter()
                    .map(|s| sigmoid(params.signal * s + gaussian(&mut rng, noise)))
                    .collect();
                ProbabilityMatrix::new(video_id.clone(), tax.classes().to_vec(), probs)
            })
            .collect::<Result<Vec<_>>>()?;
        head_probs.push(heads);
    }
    Ok(SynthVideo {
        video_id,
        split: params.split_of(v),
        gt,
        labels,
        features,
        head_probs,
    })
}

/// Generates the corpus; bit-identical for equal parameters.
pub fn synth_corpus(params: &SynthParams) -> Result<SynthCorpus> {
    params.validate()?;
    let tax = params.taxonomy()?;
    let videos = (0..params.videos)
        .into_par_iter()
        .map(|v| synth_video(params, &tax, v))
        .collect::<Result<Vec<_>>>()?;
    let backbones = params
        .backbones
        .iter()
        .map(|b| (b.name.clone(), (0..b.head_noise.len()).map(|h| format!("head{h}")).collect()))
        .collect();
    Ok(SynthCorpus {
        taxonomy: tax,
        backbones,
        videos,
    })
}

impl SynthCorpus {
    /// Writes taxonomy, ground truth, features and head probabilities under
    /// `dir` and returns the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.taxonomy.save(dir.join("taxonomy.json"))?;
        let gt: Vec<EventSet> = self.videos.iter().map(|v| v.gt.clone()).collect();
        store_events(&gt, dir.join("ground_truth.json"))?;
        let entries = self
            .videos
            .par_iter()
            .map(|v| {
                let mut entry = VideoEntry {
                    video_id: v.video_id.clone(),
                    frames: v.labels.frames(),
                    split: v.split,
                    features: Default::default(),
                    head_probs: Default::default(),
                };
                for (b, (name, heads)) in self.backbones.iter().enumerate() {
                    let rel = format!("features/{name}/{}.vsta", v.video_id);
                    store_feature_table(&v.features[b], dir.join(&rel))?;
                    entry.features.insert(name.clone(), PathBuf::from(rel));
                    let mut paths = Vec::new();
                    for (h, head) in heads.iter().enumerate() {
                        let rel = format!("head_probs/{name}/{head}/{}.vsta", v.video_id);
                        store_probability_matrix(&v.head_probs[b][h], dir.join(&rel))?;
                        paths.push(PathBuf::from(rel));
                    }
                    entry.head_probs.insert(name.clone(), paths);
                }
                Ok(entry)
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = CorpusManifest {
            taxonomy: PathBuf::from("taxonomy.json"),
            ground_truth: PathBuf::from("ground_truth.json"),
            backbones: self
                .backbones
                .iter()
                .map(|(name, heads)| BackboneEntry {
                    name: name.clone(),
                    heads: heads.clone(),
                })
                .collect(),
            videos: entries,
        };
        let path = dir.join("manifest.json");
        manifest.save(&path)?;
        Ok(path)
    }
}

/// Validation corpus whose F1-optimal frame threshold (about 0.3) sits far
/// below the threshold that maximises event mAP (about 0.9).
///
/// Pairs of strong 20-frame events are separated by 10 negative frames at
/// probability 0.88, so any threshold under 0.88 merges each pair into one
/// event that matches neither. Two long, weak events at 0.3 pull the F1 cut down.
pub fn skew_corpus() -> Result<(LabelTaxonomy, Vec<ProbabilityMatrix>, Vec<EventSet>)> {
    let tax = LabelTaxonomy::from_json(
        r#"{
            "classes": ["body", "lesion"],
            "regions": ["body"],
            "landmarks": {},
            "pathologies": ["lesion"],
            "smoothing_window": {"body": 1, "lesion": 1}
        }"#,
    )?;
    let mut lesion = Vec::new();
    let mut events = Vec::new();
    let mut push = |lesion: &mut Vec<f64>, len: usize, p: f64, event: bool| {
        if event {
            events.push(Event::new("lesion", lesion.len(), lesion.len() + len, None));
        }
        lesion.extend(std::iter::repeat_n(p, len));
    };
    push(&mut lesion, 30, 0.05, false);
    for _ in 0..10 {
        push(&mut lesion, 20, 0.95, true);
        push(&mut lesion, 10, 0.88, false);
        push(&mut lesion, 20, 0.95, true);
        push(&mut lesion, 30, 0.05, false);
    }
    for _ in 0..2 {
        push(&mut lesion, 200, 0.3, true);
        push(&mut lesion, 30, 0.05, false);
    }
    let frames = lesion.len();
    events.push(Event::new("body", 0, frames, None));
    let values = lesion.iter().flat_map(|&p| [0.9, p]).collect();
    let probs = ProbabilityMatrix::new("skew", tax.classes().to_vec(), values)?;
    let gt = EventSet::new("skew", events)?;
    Ok((tax, vec![probs], vec![gt]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthParams {
        SynthParams {
            videos: 3,
            frames: 2000,
            ..SynthParams::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = synth_corpus(&small()).unwrap();
        let b = synth_corpus(&small()).unwrap();
        for (x, y) in a.videos.iter().zip(&b.videos) {
            assert_eq!(x.gt, y.gt);
            assert_eq!(x.features, y.features);
            assert_eq!(x.head_probs, y.head_probs);
        }
    }

    #[test]
    fn regions_partition_and_landmarks_sit_on_boundaries() {
        let c = synth_corpus(&small()).unwrap();
        let tax = &c.taxonomy;
        for v in &c.videos {
            let regions: Vec<&Event> = tax.regions().iter().flat_map(|r| v.gt.of_label(r)).collect();
            assert_eq!(regions.len(), tax.num_regions());
            assert_eq!(regions[0].start, 0);
            for w in regions.windows(2) {
                assert_eq!(w[0].end, w[1].start);
            }
            assert_eq!(regions.last().unwrap().end, 2000);
            for (name, valid) in tax.landmarks() {
                let e: Vec<&Event> = v.gt.of_label(name).collect();
                assert_eq!(e.len(), 1);
                let span = v.gt.of_label(&valid[0]).next().unwrap().start..v.gt.of_label(&valid[1]).next().unwrap().end;
                assert!(span.start <= e[0].start && e[0].end <= span.end);
            }
        }
    }

    #[test]
    fn pathology_events_keep_their_gap() {
        let c = synth_corpus(&small()).unwrap();
        for v in &c.videos {
            for p in c.taxonomy.pathologies() {
                let e: Vec<&Event> = v.gt.of_label(p).collect();
                for w in e.windows(2) {
                    assert!(w[1].start >= w[0].end + 10);
                }
                assert!(e.iter().all(|x| (20..=200).contains(&x.len())));
            }
        }
    }

    #[test]
    fn noise_free_heads_follow_labels() {
        let mut p = SynthParams::noise_free();
        p.videos = 1;
        p.frames = 1000;
        let c = synth_corpus(&p).unwrap();
        let v = &c.videos[0];
        for (&y, &q) in v.labels.values().iter().zip(v.head_probs[0][0].values()) {
            assert_eq!(q > 0.5, y);
        }
    }

    #[test]
    fn invalid_params_are_rejected() {
        let mut p = small();
        p.flip_rate = 1.5;
        assert!(synth_corpus(&p).is_err());
        let mut p = small();
        p.frames = 10;
        assert!(synth_corpus(&p).is_err());
    }
}
