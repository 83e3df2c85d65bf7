//! End-to-end runs: load or synthesise a corpus, obtain head predictions,
//! calibrate fusion, search thresholds, decode and evaluate, plus the
//! ablation matrix over backbones, fusion weighting and decoding.

use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ated::{self, DecodeConfig, DecodeSettings, EventMode};
use crate::corpus_io::{
    store_events, store_json, store_probability_matrix, BinaryMatrix, EventSet,
    FeatureTable, ProbabilityMatrix,
};
use crate::dhe::{self, HeadConfig};
use crate::error::{bail, Error, Result};
use crate::manifest::{load_manifest_corpus, LoadedCorpus, Split};
use crate::metrics::{frame_ap_report, temporal_map, TemporalMapReport, DEFAULT_IOU_THRESHOLDS};
use crate::synth::{synth_corpus, SynthParams};
use crate::taxonomy::LabelTaxonomy;
use crate::threshold_opt::{self, SearchData, SearchSettings, ThresholdProfile};
use crate::vgwf::{self, BackboneValidation, FusionProfile, Weighting, DEFAULT_TEMPERATURE_GRID};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Load,
    Train,
    Calibrate,
    Fuse,
    Search,
    Decode,
    Evaluate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Load => "load",
            Stage::Train => "train",
            Stage::Calibrate => "calibrate",
            Stage::Fuse => "fuse",
            Stage::Search => "search",
            Stage::Decode => "decode",
            Stage::Evaluate => "evaluate",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("[{stage}] {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

pub trait StageContext<T> {
    fn stage(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HeadSource {
    /// Train the head ensemble on the train split's features.
    #[default]
    Train,
    /// Use the head probability files listed in the manifest.
    Precomputed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TemperatureObjective {
    /// Frame-level binary cross-entropy on validation.
    #[default]
    Nll,
    /// Validation temporal mAP at the search IoU after decoding with F1-initialised thresholds.
    TemporalMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Corpus manifest; when absent a corpus is synthesised from `synth`.
    pub manifest: Option<PathBuf>,
    pub synth: SynthParams,
    pub head_source: HeadSource,
    /// Heads trained per backbone; defaults to the standard five-head ensemble.
    pub heads: Option<Vec<HeadConfig>>,
    pub temperature_grid: Vec<f64>,
    pub temperature_objective: TemperatureObjective,
    pub decode: DecodeSettings,
    pub search: SearchSettings,
    pub iou_thresholds: Vec<f64>,
    pub ablation: bool,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            synth: SynthParams::default(),
            head_source: HeadSource::Train,
            heads: None,
            temperature_grid: DEFAULT_TEMPERATURE_GRID.to_vec(),
            temperature_objective: TemperatureObjective::Nll,
            decode: DecodeSettings::default(),
            search: SearchSettings::default(),
            iou_thresholds: DEFAULT_IOU_THRESHOLDS.to_vec(),
            ablation: true,
            output_dir: PathBuf::from("vista_out"),
            seed: 7,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperature_grid.is_empty() || self.temperature_grid.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            bail!(Validation, "temperature grid must be non-empty and positive");
        }
        if self.iou_thresholds.is_empty() || self.iou_thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            bail!(Validation, "IoU thresholds must lie in (0, 1]");
        }
        if !(self.search.iou_threshold > 0.0 && self.search.iou_threshold <= 1.0) {
            bail!(Validation, "search IoU must lie in (0, 1]");
        }
        if let Some(heads) = &self.heads {
            if heads.is_empty() {
                bail!(Validation, "head list is empty");
            }
            heads.iter().try_for_each(HeadConfig::validate)?;
        }
        Ok(())
    }

    pub fn head_configs(&self, backbone: usize) -> Vec<HeadConfig> {
        match &self.heads {
            Some(h) => h.clone(),
            None => dhe::default_ensemble(self.seed.wrapping_add(1000 * backbone as u64)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decoding {
    FullAtedPerLabel,
    FullAtedTuple,
    PerLabelOnly,
}

impl Decoding {
    fn apply(self, settings: &DecodeSettings) -> DecodeSettings {
        let mut s = settings.clone();
        match self {
            Decoding::FullAtedPerLabel => {
                s.full_ated = true;
                s.event_mode = EventMode::PerLabel;
            }
            Decoding::FullAtedTuple => {
                s.full_ated = true;
                s.event_mode = EventMode::Tuple;
            }
            Decoding::PerLabelOnly => {
                s.full_ated = false;
                s.event_mode = EventMode::PerLabel;
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub videos: usize,
    pub frames: usize,
    pub classes: usize,
    pub backbones: Vec<String>,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Split the final scores are reported on.
    pub evaluation_split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSummary {
    pub backbone: String,
    pub head: String,
    pub val_frame_map: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub backbones: Vec<String>,
    pub head_fusion: Weighting,
    pub backbone_fusion: Weighting,
    pub decoding: Decoding,
    pub val_map_at_05: f64,
    pub map_at_05: f64,
    pub map_at_095: f64,
    /// Per-class temporal AP at IoU 0.5 on the evaluation split.
    pub per_class_at_05: std::collections::BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub schema_version: u32,
    pub corpus: CorpusSummary,
    pub heads: Vec<HeadSummary>,
    pub fusion: FusionProfile,
    pub eval_frame_map: Option<f64>,
    pub thresholds: ThresholdProfile,
    pub validation: TemporalMapReport,
    pub evaluation: TemporalMapReport,
    pub ablation: Vec<AblationRow>,
}

impl PipelineReport {
    pub fn map_at(&self, iou: f64) -> Option<f64> {
        self.evaluation.map_at(iou)
    }
}

/// Fused-stage inputs shared by every variant.
struct Prepared {
    taxonomy: LabelTaxonomy,
    backbone_names: Vec<String>,
    head_names: Vec<Vec<String>>,
    /// `preds[v][b][m]`
    preds: Vec<Vec<Vec<ProbabilityMatrix>>>,
    labels: Vec<BinaryMatrix>,
    gt: Vec<EventSet>,
    splits: Vec<Split>,
    eval_split: Split,
}

impl Prepared {
    fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.splits.len()).filter(|&v| self.splits[v] == split).collect()
    }
}

#[derive(Debug, Clone)]
pub struct VariantOutcome {
    pub fusion: FusionProfile,
    pub thresholds: ThresholdProfile,
    pub val_events: Vec<EventSet>,
    pub eval_events: Vec<EventSet>,
    pub val_report: TemporalMapReport,
    pub eval_report: TemporalMapReport,
    pub eval_frame_map: Option<f64>,
}

struct Variant {
    backbones: Vec<usize>,
    head: Weighting,
    backbone: Weighting,
    decode: DecodeSettings,
}

fn pick<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

fn run_variant(data: &Prepared, config: &PipelineConfig, variant: &Variant) -> std::result::Result<VariantOutcome, StageError> {
    let val = data.indices(Split::Val);
    let eval = data.indices(data.eval_split);
    let val_labels = pick(&data.labels, &val);
    let val_gt = pick(&data.gt, &val);
    let eval_gt = pick(&data.gt, &eval);

    // calibrate
    let per_backbone: Vec<Vec<Vec<ProbabilityMatrix>>> = variant
        .backbones
        .iter()
        .map(|&b| val.iter().map(|&v| data.preds[v][b].clone()).collect())
        .collect();
    let inputs: Vec<BackboneValidation> = variant
        .backbones
        .iter()
        .zip(&per_backbone)
        .map(|(&b, per_video)| BackboneValidation {
            name: data.backbone_names[b].clone(),
            heads: data.head_names[b].clone(),
            per_video,
        })
        .collect();
    let mut fusion = vgwf::fit_weights(&inputs, &val_labels, variant.head, variant.backbone).stage(Stage::Calibrate)?;
    let fuse_video = |fusion: &FusionProfile, v: usize| {
        let subset: Vec<Vec<ProbabilityMatrix>> = variant.backbones.iter().map(|&b| data.preds[v][b].clone()).collect();
        fusion.apply(&subset)
    };
    let unscaled_val: Vec<ProbabilityMatrix> = val
        .par_iter()
        .map(|&v| fuse_video(&fusion, v))
        .collect::<Result<_>>()
        .stage(Stage::Fuse)?;
    let base_decode = DecodeConfig::new(
        data.taxonomy.clone(),
        &variant.decode,
        vec![0.5; data.taxonomy.num_classes()],
    )
    .stage(Stage::Config)?;
    fusion.temperature = match config.temperature_objective {
        TemperatureObjective::Nll => vgwf::fit_temperature(&unscaled_val, &val_labels, &config.temperature_grid),
        TemperatureObjective::TemporalMap => vgwf::select_from_grid(&config.temperature_grid, |t| {
            let scaled: Vec<ProbabilityMatrix> =
                unscaled_val.iter().map(|p| vgwf::temperature_scale(p, t)).collect::<Result<_>>()?;
            let init = initial_thresholds(&scaled, &val_labels, &base_decode)?;
            SearchData::new(&scaled, &val_gt, &base_decode, config.search.iou_threshold)?
                .objective(&init)
                .map(|m| -m)
        }),
    }
    .stage(Stage::Calibrate)?;

    // fuse
    let scaled_val: Vec<ProbabilityMatrix> = unscaled_val
        .iter()
        .map(|p| vgwf::temperature_scale(p, fusion.temperature))
        .collect::<Result<_>>()
        .stage(Stage::Fuse)?;
    let scaled_eval: Vec<ProbabilityMatrix> = eval
        .par_iter()
        .map(|&v| fuse_video(&fusion, v))
        .collect::<Result<_>>()
        .stage(Stage::Fuse)?;

    // search
    let init = initial_thresholds(&scaled_val, &val_labels, &base_decode).stage(Stage::Search)?;
    let thresholds = threshold_opt::optimize(&scaled_val, &val_gt, &base_decode, &init, &config.search).stage(Stage::Search)?;
    let mut decode_cfg = base_decode;
    decode_cfg.thresholds = thresholds.final_thresholds.clone();

    // decode
    let decode_all = |probs: &[ProbabilityMatrix]| -> Result<Vec<EventSet>> {
        probs.par_iter().map(|p| ated::decode(p, &decode_cfg)).collect()
    };
    let val_events = decode_all(&scaled_val).stage(Stage::Decode)?;
    let eval_events = decode_all(&scaled_eval).stage(Stage::Decode)?;

    // evaluate
    let classes = data.taxonomy.classes();
    let val_report = temporal_map(&val_events, &val_gt, &config.iou_thresholds, classes).stage(Stage::Evaluate)?;
    let eval_report = temporal_map(&eval_events, &eval_gt, &config.iou_thresholds, classes).stage(Stage::Evaluate)?;
    let eval_frame_map = frame_ap_report(&scaled_eval, &pick(&data.labels, &eval))
        .stage(Stage::Evaluate)?
        .map;
    Ok(VariantOutcome {
        fusion,
        thresholds,
        val_events,
        eval_events,
        val_report,
        eval_report,
        eval_frame_map,
    })
}

/// F1-optimal thresholds on the probabilities that decoding actually binarises.
pub fn initial_thresholds(val_probs: &[ProbabilityMatrix], val_labels: &[BinaryMatrix], config: &DecodeConfig) -> Result<Vec<f64>> {
    let scores: Vec<ProbabilityMatrix> = val_probs
        .par_iter()
        .map(|p| ated::prepare(p, config).map(|prep| prep.scores))
        .collect::<Result<_>>()?;
    threshold_opt::init_thresholds(&scores, val_labels)
}

fn load_or_synthesise(config: &PipelineConfig) -> Result<(LoadedCorpus, PathBuf)> {
    let manifest_path = match &config.manifest {
        Some(p) => p.clone(),
        None => {
            let mut params = config.synth.clone();
            params.seed = config.seed;
            synth_corpus(&params)?.write(&config.output_dir.join("corpus"))?
        }
    };
    Ok((load_manifest_corpus(&manifest_path)?, manifest_path))
}

/// Head names per backbone, predictions `[video][backbone][head]`, and per-head summaries.
pub type HeadOutputs = (Vec<Vec<String>>, Vec<Vec<Vec<ProbabilityMatrix>>>, Vec<HeadSummary>);

/// Trains `head_configs(b)` on the train split of every backbone `b`, saves each
/// head under `head_dir/<backbone>/<head>.vhed` and predicts every video.
pub fn train_heads(
    corpus: &LoadedCorpus,
    labels: &[BinaryMatrix],
    head_configs: &(dyn Fn(usize) -> Vec<HeadConfig> + Sync),
    head_dir: &Path,
) -> Result<HeadOutputs> {
    let train: Vec<usize> = (0..corpus.videos.len()).filter(|&v| corpus.videos[v].split == Split::Train).collect();
    if train.is_empty() {
        bail!(Validation, "training heads needs at least one train video");
    }
    let n_b = corpus.backbones.len();
    let features: Vec<Vec<&FeatureTable>> = (0..n_b)
        .map(|b| {
            corpus
                .videos
                .iter()
                .map(|v| {
                    v.features[b]
                        .as_ref()
                        .ok_or_else(|| Error::Reference(format!("video `{}` has no `{}` features", v.video_id, corpus.backbones[b].name)))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, HeadConfig)> = (0..n_b).flat_map(|b| head_configs(b).into_iter().map(move |h| (b, h))).collect();
    for b in 0..n_b {
        let mut names: Vec<String> = jobs.iter().filter(|(j, _)| *j == b).map(|(_, h)| h.display_name()).collect();
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            bail!(Validation, "head names must be unique per backbone");
        }
    }
    let trained = jobs
        .par_iter()
        .map(|(b, cfg)| {
            let feats: Vec<FeatureTable> = train.iter().map(|&v| features[*b][v].clone()).collect();
            let labs = pick(labels, &train);
            let (head, stats) = dhe::train_head_with_stats(&feats, &labs, cfg)?;
            let name = cfg.display_name();
            head.save(head_dir.join(&corpus.backbones[*b].name).join(format!("{name}.vhed")))?;
            let preds = features[*b].iter().map(|f| dhe::predict(&head, f)).collect::<Result<Vec<_>>>()?;
            Ok((*b, name, preds, stats))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut names = vec![Vec::new(); n_b];
    let mut preds: Vec<Vec<Vec<ProbabilityMatrix>>> = vec![vec![Vec::new(); n_b]; corpus.videos.len()];
    let mut summaries = Vec::new();
    for (b, name, per_video, stats) in trained {
        names[b].push(name.clone());
        for (v, p) in per_video.into_iter().enumerate() {
            preds[v][b].push(p);
        }
        summaries.push(HeadSummary {
            backbone: corpus.backbones[b].name.clone(),
            head: name,
            val_frame_map: None,
            initial_loss: Some(stats.initial_loss),
            final_loss: Some(stats.final_loss),
        });
    }
    Ok((names, preds, summaries))
}

/// Writes `preds[v][b][m]` to `dir/<backbone>/<head>/<video>.vsta`, returning
/// the paths relative to `dir` as `[v][b][m]`.
pub fn store_head_predictions(
    dir: &Path,
    backbone_names: &[String],
    head_names: &[Vec<String>],
    preds: &[Vec<Vec<ProbabilityMatrix>>],
) -> Result<Vec<Vec<Vec<PathBuf>>>> {
    preds
        .par_iter()
        .map(|per_b| {
            per_b
                .iter()
                .enumerate()
                .map(|(b, heads)| {
                    heads
                        .iter()
                        .enumerate()
                        .map(|(m, p)| {
                            let rel = Path::new(&backbone_names[b]).join(&head_names[b][m]).join(format!("{}.vsta", p.video_id));
                            store_probability_matrix(p, dir.join(&rel))?;
                            Ok(rel)
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn ablation_variants(n_backbones: usize, decode: &DecodeSettings) -> Vec<Variant> {
    use Weighting::{Uniform, Validation};
    let all: Vec<usize> = (0..n_backbones).collect();
    let mut out = Vec::new();
    if n_backbones > 1 {
        for b in 0..n_backbones {
            out.push(Variant {
                backbones: vec![b],
                head: Validation,
                backbone: Validation,
                decode: Decoding::FullAtedPerLabel.apply(decode),
            });
        }
    }
    for d in [Decoding::PerLabelOnly, Decoding::FullAtedTuple] {
        out.push(Variant {
            backbones: all.clone(),
            head: Validation,
            backbone: Validation,
            decode: d.apply(decode),
        });
    }
    for (h, b) in [(Uniform, Uniform), (Uniform, Validation), (Validation, Uniform), (Validation, Validation)] {
        out.push(Variant {
            backbones: all.clone(),
            head: h,
            backbone: b,
            decode: Decoding::FullAtedPerLabel.apply(decode),
        });
    }
    out
}

fn decoding_of(settings: &DecodeSettings) -> Decoding {
    match (settings.full_ated, settings.event_mode) {
        (false, _) => Decoding::PerLabelOnly,
        (true, EventMode::Tuple) => Decoding::FullAtedTuple,
        (true, EventMode::PerLabel) => Decoding::FullAtedPerLabel,
    }
}

/// Runs every stage and writes all artifacts plus `report.json` to the output directory.
pub fn run_pipeline(config: &PipelineConfig) -> std::result::Result<PipelineReport, StageError> {
    config.validate().stage(Stage::Config)?;
    let out = &config.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e)).stage(Stage::Config)?;

    let (corpus, _) = load_or_synthesise(config).stage(Stage::Load)?;
    let taxonomy = corpus.taxonomy.clone();
    let labels = corpus.frame_labels().stage(Stage::Load)?;
    let splits: Vec<Split> = corpus.videos.iter().map(|v| v.split).collect();
    let counts: [usize; 3] = [Split::Train, Split::Val, Split::Test].map(|s| splits.iter().filter(|&&x| x == s).count());
    let count = |s: Split| counts[s as usize];
    if count(Split::Val) == 0 {
        return Err(Error::Validation("the corpus has no validation videos".into())).stage(Stage::Load);
    }
    let eval_split = if count(Split::Test) > 0 { Split::Test } else { Split::Val };

    let (head_names, preds, mut head_summaries) = match config.head_source {
        HeadSource::Train => {
            train_heads(&corpus, &labels, &|b| config.head_configs(b), &out.join("heads")).stage(Stage::Train)?
        }
        HeadSource::Precomputed => {
            let names: Vec<Vec<String>> = corpus.backbones.iter().map(|b| b.heads.clone()).collect();
            if let Some(v) = corpus.videos.iter().find(|v| v.head_probs.iter().zip(&names).any(|(p, n)| p.len() != n.len() || p.is_empty())) {
                return Err(Error::Reference(format!("video `{}` lacks precomputed head probabilities", v.video_id))).stage(Stage::Load);
            }
            let preds = corpus.videos.iter().map(|v| v.head_probs.clone()).collect();
            let summaries = corpus
                .backbones
                .iter()
                .flat_map(|b| {
                    b.heads.iter().map(|h| HeadSummary {
                        backbone: b.name.clone(),
                        head: h.clone(),
                        val_frame_map: None,
                        initial_loss: None,
                        final_loss: None,
                    })
                })
                .collect();
            (names, preds, summaries)
        }
    };
    let data = Prepared {
        taxonomy,
        backbone_names: corpus.backbones.iter().map(|b| b.name.clone()).collect(),
        head_names,
        preds,
        labels,
        gt: corpus.videos.iter().map(|v| v.gt.clone()).collect(),
        splits,
        eval_split,
    };
    drop(corpus);
    if config.head_source == HeadSource::Train {
        store_head_predictions(&out.join("head_predictions"), &data.backbone_names, &data.head_names, &data.preds)
            .stage(Stage::Train)?;
    }

    let val = data.indices(Split::Val);
    let val_labels = pick(&data.labels, &val);
    let mut k = 0;
    for (b, names) in data.head_names.iter().enumerate() {
        for m in 0..names.len() {
            let probs: Vec<ProbabilityMatrix> = val.iter().map(|&v| data.preds[v][b][m].clone()).collect();
            head_summaries[k].val_frame_map = frame_ap_report(&probs, &val_labels).stage(Stage::Calibrate)?.map;
            k += 1;
        }
    }

    let main = Variant {
        backbones: (0..data.backbone_names.len()).collect(),
        head: Weighting::Validation,
        backbone: Weighting::Validation,
        decode: config.decode.clone(),
    };
    let outcome = run_variant(&data, config, &main)?;
    store_json(&outcome.fusion, out.join("fusion_profile.json")).stage(Stage::Calibrate)?;
    store_json(&outcome.thresholds, out.join("threshold_profile.json")).stage(Stage::Search)?;
    store_events(&outcome.val_events, out.join("events").join("val.json")).stage(Stage::Decode)?;
    let eval_name = if eval_split == Split::Test { "test" } else { "val" };
    store_events(&outcome.eval_events, out.join("events").join(format!("{eval_name}.json"))).stage(Stage::Decode)?;
    store_json(&outcome.val_report, out.join("temporal_map_val.json")).stage(Stage::Evaluate)?;
    store_json(&outcome.eval_report, out.join(format!("temporal_map_{eval_name}.json"))).stage(Stage::Evaluate)?;

    let ablation = if config.ablation {
        ablation_variants(data.backbone_names.len(), &config.decode)
            .iter()
            .map(|variant| {
                let o = run_variant(&data, config, variant)?;
                Ok(AblationRow {
                    backbones: variant.backbones.iter().map(|&b| data.backbone_names[b].clone()).collect(),
                    head_fusion: variant.head,
                    backbone_fusion: variant.backbone,
                    decoding: decoding_of(&variant.decode),
                    val_map_at_05: o.val_report.map_at(0.5).unwrap_or(0.0),
                    map_at_05: o.eval_report.map_at(0.5).unwrap_or(0.0),
                    map_at_095: o.eval_report.map_at(0.95).unwrap_or(0.0),
                    per_class_at_05: o
                        .eval_report
                        .per_threshold
                        .iter()
                        .find(|r| (r.iou_threshold - 0.5).abs() < 1e-12)
                        .map(|r| r.per_class.clone())
                        .unwrap_or_default(),
                })
            })
            .collect::<std::result::Result<Vec<_>, StageError>>()?
    } else {
        Vec::new()
    };

    let report = PipelineReport {
        schema_version: REPORT_SCHEMA_VERSION,
        corpus: CorpusSummary {
            videos: data.splits.len(),
            frames: data.labels.iter().map(BinaryMatrix::frames).sum(),
            classes: data.taxonomy.num_classes(),
            backbones: data.backbone_names.clone(),
            train: count(Split::Train),
            val: count(Split::Val),
            test: count(Split::Test),
            evaluation_split: eval_split,
        },
        heads: head_summaries,
        fusion: outcome.fusion,
        eval_frame_map: outcome.eval_frame_map,
        thresholds: outcome.thresholds,
        validation: outcome.val_report,
        evaluation: outcome.eval_report,
        ablation,
    };
    store_json(&report, out.join("report.json")).stage(Stage::Evaluate)?;
    Ok(report)
}
