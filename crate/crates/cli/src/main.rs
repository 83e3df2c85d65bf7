//! `vista`: command-line front end for the inference stack.
//!
//! Every subcommand reads an optional JSON `--config`, applies flag overrides
//! on top, and writes its JSON report to stdout or `--out`. Failures exit with
//! status 1 and a `[stage]` tag on stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use vista_core::corpus_io::{events_to_json, load_events, load_json, store_probability_matrix};
use vista_core::dhe::{self, HeadConfig};
use vista_core::manifest::{load_manifest_corpus, BackboneEntry, LoadedCorpus};
use vista_core::metrics::{frame_ap_report, temporal_map, DEFAULT_IOU_THRESHOLDS};
use vista_core::pipeline::{self, HeadSource, HeadSummary, StageContext};
use vista_core::vgwf::{self, BackboneValidation, Weighting, DEFAULT_TEMPERATURE_GRID};
use vista_core::{
    threshold_opt, ated, CorpusManifest, DecodeConfig, DecodeSettings, Error, EventSet, FusionProfile, LabelTaxonomy,
    PipelineConfig, ProbabilityMatrix, SearchMode, SearchSettings, Split, Stage, StageError, SynthParams,
    ThresholdProfile,
};

type CliResult<T> = std::result::Result<T, StageError>;

#[derive(Parser)]
#[command(name = "vista", version, about = "Capsule endoscopy video inference: heads, fusion, decoding, thresholds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config for this subcommand; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus and its manifest.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        videos: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train head ensembles on the train split and predict every video.
    TrainHeads {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit head weights, backbone weights and temperature on the val split.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Comma-separated temperature grid.
        #[arg(long, value_delimiter = ',')]
        temperature_grid: Option<Vec<f64>>,
        #[arg(long, value_parser = parse_weighting)]
        head_weighting: Option<Weighting>,
        #[arg(long, value_parser = parse_weighting)]
        backbone_weighting: Option<Weighting>,
    },
    /// Apply a fusion profile and write a single-series manifest.
    Fuse {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Search per-class decoding thresholds on the val split.
    SearchThresholds {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Fusion profile applied before searching; without it the manifest must hold one series.
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long)]
        mode: Option<SearchMode>,
        #[arg(long)]
        sweeps: Option<usize>,
        #[arg(long)]
        iou: Option<f64>,
    },
    /// Decode probabilities into events.
    Decode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Threshold profile; all thresholds are 0.5 without it.
        #[arg(long)]
        thresholds: Option<PathBuf>,
        /// Only decode videos of this split.
        #[arg(long, value_parser = parse_split)]
        split: Option<Split>,
    },
    /// Temporal mAP of predicted events against ground truth.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        ground_truth: Option<PathBuf>,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        /// Comma-separated IoU thresholds.
        #[arg(long, value_delimiter = ',')]
        iou: Option<Vec<f64>>,
    },
    /// Run every stage end to end.
    RunPipeline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        mode: Option<SearchMode>,
        /// Use the head probabilities listed in the manifest instead of training.
        #[arg(long)]
        precomputed_heads: bool,
        #[arg(long)]
        no_ablation: bool,
    },
}

fn parse_weighting(s: &str) -> Result<Weighting, String> {
    match s {
        "validation" => Ok(Weighting::Validation),
        "uniform" => Ok(Weighting::Uniform),
        _ => Err(format!("unknown weighting `{s}` (expected validation or uniform)")),
    }
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        _ => Err(format!("unknown split `{s}` (expected train, val or test)")),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SynthCommand {
    params: SynthParams,
    output_dir: PathBuf,
}

impl Default for SynthCommand {
    fn default() -> Self {
        Self {
            params: SynthParams::default(),
            output_dir: PathBuf::from("corpus"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainCommand {
    manifest: Option<PathBuf>,
    heads: Option<Vec<HeadConfig>>,
    output_dir: PathBuf,
    seed: u64,
}

impl Default for TrainCommand {
    fn default() -> Self {
        Self {
            manifest: None,
            heads: None,
            output_dir: PathBuf::from("heads_out"),
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CalibrateCommand {
    manifest: Option<PathBuf>,
    temperature_grid: Vec<f64>,
    head_weighting: Weighting,
    backbone_weighting: Weighting,
}

impl Default for CalibrateCommand {
    fn default() -> Self {
        Self {
            manifest: None,
            temperature_grid: DEFAULT_TEMPERATURE_GRID.to_vec(),
            head_weighting: Weighting::Validation,
            backbone_weighting: Weighting::Validation,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FuseCommand {
    manifest: Option<PathBuf>,
    profile: Option<PathBuf>,
    output_dir: PathBuf,
}

impl Default for FuseCommand {
    fn default() -> Self {
        Self {
            manifest: None,
            profile: None,
            output_dir: PathBuf::from("fused"),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SearchCommand {
    manifest: Option<PathBuf>,
    profile: Option<PathBuf>,
    decode: DecodeSettings,
    search: SearchSettings,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DecodeCommand {
    manifest: Option<PathBuf>,
    profile: Option<PathBuf>,
    thresholds: Option<PathBuf>,
    decode: DecodeSettings,
    split: Option<Split>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvaluateCommand {
    predictions: Option<PathBuf>,
    ground_truth: Option<PathBuf>,
    taxonomy: Option<PathBuf>,
    iou_thresholds: Vec<f64>,
}

impl Default for EvaluateCommand {
    fn default() -> Self {
        Self {
            predictions: None,
            ground_truth: None,
            taxonomy: None,
            iou_thresholds: DEFAULT_IOU_THRESHOLDS.to_vec(),
        }
    }
}

fn config_error(msg: impl Into<String>) -> StageError {
    StageError {
        stage: Stage::Config,
        source: Error::Validation(msg.into()),
    }
}

fn load_config<T: Default + for<'de> Deserialize<'de>>(path: &Option<PathBuf>) -> CliResult<T> {
    match path {
        Some(p) => load_json(p).stage(Stage::Config),
        None => Ok(T::default()),
    }
}

fn required(value: Option<PathBuf>, flag: &str) -> CliResult<PathBuf> {
    value.ok_or_else(|| config_error(format!("missing --{flag} (or `{}` in the config)", flag.replace('-', "_"))))
}

fn emit(common: &Common, body: &str) -> CliResult<()> {
    match &common.out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e)).stage(Stage::Config)?;
            }
            std::fs::write(path, format!("{body}\n")).map_err(|e| io_error(path, e)).stage(Stage::Config)
        }
        None => {
            println!("{body}");
            Ok(())
        }
    }
}

fn emit_json<T: Serialize>(common: &Common, value: &T) -> CliResult<()> {
    let body = serde_json::to_string_pretty(value).map_err(Error::from).stage(Stage::Config)?;
    emit(common, &body)
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn absolute(path: &Path) -> vista_core::Result<PathBuf> {
    std::path::absolute(path).map_err(|e| io_error(path, e))
}

fn load_manifest(path: &Path) -> CliResult<(CorpusManifest, LoadedCorpus)> {
    let manifest = CorpusManifest::load(path).stage(Stage::Load)?;
    let corpus = load_manifest_corpus(path).stage(Stage::Load)?;
    Ok((manifest, corpus))
}

/// Copy of `manifest` whose paths no longer depend on where it was loaded from.
fn detached(mut manifest: CorpusManifest, manifest_path: &Path) -> vista_core::Result<CorpusManifest> {
    let base = absolute(manifest_path.parent().unwrap_or(Path::new("")))?;
    manifest.absolutize(&base);
    Ok(manifest)
}

/// One probability series per video: the fused profile output, or the manifest's only series.
fn series(corpus: &LoadedCorpus, profile: Option<&FusionProfile>) -> vista_core::Result<Vec<ProbabilityMatrix>> {
    match profile {
        Some(profile) => {
            profile.validate()?;
            let order: Vec<(usize, Vec<usize>)> = profile
                .backbones
                .iter()
                .map(|w| {
                    let b = corpus
                        .backbones
                        .iter()
                        .position(|e| e.name == w.name)
                        .ok_or_else(|| Error::Reference(format!("profile backbone `{}` is not in the manifest", w.name)))?;
                    let heads = w
                        .heads
                        .iter()
                        .map(|h| {
                            corpus.backbones[b].heads.iter().position(|x| x == h).ok_or_else(|| {
                                Error::Reference(format!("profile head `{h}` is not listed for backbone `{}`", w.name))
                            })
                        })
                        .collect::<vista_core::Result<_>>()?;
                    Ok((b, heads))
                })
                .collect::<vista_core::Result<_>>()?;
            corpus
                .videos
                .par_iter()
                .map(|v| {
                    let inputs: Vec<Vec<ProbabilityMatrix>> = order
                        .iter()
                        .map(|(b, heads)| {
                            let available = &v.head_probs[*b];
                            if available.is_empty() {
                                return Err(Error::Reference(format!(
                                    "video `{}` has no head probabilities for `{}`",
                                    v.video_id, corpus.backbones[*b].name
                                )));
                            }
                            Ok(heads.iter().map(|&m| available[m].clone()).collect())
                        })
                        .collect::<vista_core::Result<_>>()?;
                    profile.apply(&inputs)
                })
                .collect()
        }
        None => corpus
            .videos
            .iter()
            .map(|v| {
                let mut all = v.head_probs.iter().flatten();
                match (all.next(), all.next()) {
                    (Some(p), None) => Ok(p.clone()),
                    _ => Err(Error::Validation(format!(
                        "video `{}` must have exactly one probability series without a fusion profile",
                        v.video_id
                    ))),
                }
            })
            .collect(),
    }
}

fn load_profile(path: &Option<PathBuf>) -> CliResult<Option<FusionProfile>> {
    path.as_ref().map(|p| load_json(p).stage(Stage::Load)).transpose()
}

fn check_taxonomy_classes(taxonomy: &LabelTaxonomy, names: &[String], what: &str) -> CliResult<()> {
    taxonomy
        .check_columns(names)
        .map_err(|e| Error::Taxonomy(format!("{what}: {e}")))
        .stage(Stage::Load)
}

#[derive(Serialize)]
struct CorpusWritten {
    manifest: PathBuf,
    videos: usize,
    frames: usize,
    splits: [usize; 3],
}

fn cmd_synth(common: &Common, output_dir: Option<PathBuf>, videos: Option<usize>, frames: Option<usize>, seed: Option<u64>) -> CliResult<()> {
    let mut cfg: SynthCommand = load_config(&common.config)?;
    cfg.output_dir = output_dir.unwrap_or(cfg.output_dir);
    cfg.params.videos = videos.unwrap_or(cfg.params.videos);
    cfg.params.frames = frames.unwrap_or(cfg.params.frames);
    cfg.params.seed = seed.unwrap_or(cfg.params.seed);
    let corpus = vista_core::synth_corpus(&cfg.params).stage(Stage::Config)?;
    let manifest = corpus.write(&cfg.output_dir).stage(Stage::Load)?;
    let mut splits = [0; 3];
    for v in &corpus.videos {
        splits[v.split as usize] += 1;
    }
    emit_json(
        common,
        &CorpusWritten {
            manifest,
            videos: corpus.videos.len(),
            frames: cfg.params.frames,
            splits,
        },
    )
}

#[derive(Serialize)]
struct HeadsTrained {
    manifest: PathBuf,
    heads: Vec<HeadSummary>,
}

fn cmd_train(common: &Common, manifest: Option<PathBuf>, output_dir: Option<PathBuf>, seed: Option<u64>) -> CliResult<()> {
    let mut cfg: TrainCommand = load_config(&common.config)?;
    cfg.manifest = manifest.or(cfg.manifest);
    cfg.output_dir = output_dir.unwrap_or(cfg.output_dir);
    cfg.seed = seed.unwrap_or(cfg.seed);
    if let Some(heads) = &cfg.heads {
        if heads.is_empty() {
            return Err(config_error("head list is empty"));
        }
        heads.iter().try_for_each(HeadConfig::validate).stage(Stage::Config)?;
    }
    let manifest_path = required(cfg.manifest.clone(), "manifest")?;
    let (manifest, corpus) = load_manifest(&manifest_path)?;
    let labels = corpus.frame_labels().stage(Stage::Load)?;
    let head_configs = |b: usize| match &cfg.heads {
        Some(h) => h.clone(),
        None => dhe::default_ensemble(cfg.seed.wrapping_add(1000 * b as u64)),
    };
    let out = &cfg.output_dir;
    let (head_names, preds, mut summaries) =
        pipeline::train_heads(&corpus, &labels, &head_configs, &out.join("heads")).stage(Stage::Train)?;
    let val = corpus.indices(Split::Val);
    if !val.is_empty() {
        let val_labels: Vec<_> = val.iter().map(|&v| labels[v].clone()).collect();
        let mut k = 0;
        for (b, names) in head_names.iter().enumerate() {
            for (m, _) in names.iter().enumerate() {
                let probs: Vec<ProbabilityMatrix> = val.iter().map(|&v| preds[v][b][m].clone()).collect();
                summaries[k].val_frame_map = frame_ap_report(&probs, &val_labels).stage(Stage::Train)?.map;
                k += 1;
            }
        }
    }
    let backbone_names: Vec<String> = corpus.backbones.iter().map(|b| b.name.clone()).collect();
    let paths = pipeline::store_head_predictions(&out.join("head_predictions"), &backbone_names, &head_names, &preds)
        .stage(Stage::Train)?;

    let mut derived = detached(manifest, &manifest_path).stage(Stage::Load)?;
    for (entry, heads) in derived.backbones.iter_mut().zip(&head_names) {
        entry.heads = heads.clone();
    }
    for (v, entry) in derived.videos.iter_mut().enumerate() {
        entry.head_probs = backbone_names
            .iter()
            .zip(&paths[v])
            .map(|(b, ps)| (b.clone(), ps.iter().map(|p| Path::new("head_predictions").join(p)).collect()))
            .collect();
    }
    let derived_path = out.join("manifest.json");
    derived.save(&derived_path).stage(Stage::Train)?;
    emit_json(
        common,
        &HeadsTrained {
            manifest: derived_path,
            heads: summaries,
        },
    )
}

fn cmd_calibrate(
    common: &Common,
    manifest: Option<PathBuf>,
    grid: Option<Vec<f64>>,
    head_weighting: Option<Weighting>,
    backbone_weighting: Option<Weighting>,
) -> CliResult<()> {
    let mut cfg: CalibrateCommand = load_config(&common.config)?;
    cfg.manifest = manifest.or(cfg.manifest);
    cfg.temperature_grid = grid.unwrap_or(cfg.temperature_grid);
    cfg.head_weighting = head_weighting.unwrap_or(cfg.head_weighting);
    cfg.backbone_weighting = backbone_weighting.unwrap_or(cfg.backbone_weighting);
    if cfg.temperature_grid.is_empty() {
        return Err(config_error("temperature grid is empty"));
    }
    let (_, corpus) = load_manifest(&required(cfg.manifest.clone(), "manifest")?)?;
    let val = corpus.indices(Split::Val);
    if val.is_empty() {
        return Err(StageError {
            stage: Stage::Calibrate,
            source: Error::Validation("calibration needs videos in the val split".into()),
        });
    }
    let labels = corpus.frame_labels().stage(Stage::Load)?;
    let val_labels: Vec<_> = val.iter().map(|&v| labels[v].clone()).collect();
    let per_backbone: Vec<Vec<Vec<ProbabilityMatrix>>> = (0..corpus.backbones.len())
        .map(|b| val.iter().map(|&v| corpus.videos[v].head_probs[b].clone()).collect())
        .collect();
    let inputs: Vec<BackboneValidation> = corpus
        .backbones
        .iter()
        .zip(&per_backbone)
        .filter(|(_, per_video)| per_video.iter().all(|h| !h.is_empty()))
        .map(|(entry, per_video)| BackboneValidation {
            name: entry.name.clone(),
            heads: entry.heads.clone(),
            per_video,
        })
        .collect();
    if inputs.is_empty() {
        return Err(StageError {
            stage: Stage::Calibrate,
            source: Error::Validation("no backbone has head probabilities for every val video".into()),
        });
    }
    let mut profile =
        vgwf::fit_weights(&inputs, &val_labels, cfg.head_weighting, cfg.backbone_weighting).stage(Stage::Calibrate)?;
    let unscaled: Vec<ProbabilityMatrix> = (0..val.len())
        .into_par_iter()
        .map(|i| {
            let heads: Vec<Vec<ProbabilityMatrix>> = inputs.iter().map(|b| b.per_video[i].clone()).collect();
            profile.apply(&heads)
        })
        .collect::<vista_core::Result<_>>()
        .stage(Stage::Fuse)?;
    profile.temperature = vgwf::fit_temperature(&unscaled, &val_labels, &cfg.temperature_grid).stage(Stage::Calibrate)?;
    emit_json(common, &profile)
}

#[derive(Serialize)]
struct Fused {
    manifest: PathBuf,
    videos: usize,
}

fn cmd_fuse(common: &Common, manifest: Option<PathBuf>, profile: Option<PathBuf>, output_dir: Option<PathBuf>) -> CliResult<()> {
    let mut cfg: FuseCommand = load_config(&common.config)?;
    cfg.manifest = manifest.or(cfg.manifest);
    cfg.profile = profile.or(cfg.profile);
    cfg.output_dir = output_dir.unwrap_or(cfg.output_dir);
    let manifest_path = required(cfg.manifest.clone(), "manifest")?;
    let profile = load_profile(&Some(required(cfg.profile.clone(), "profile")?))?.expect("profile path given");
    let (manifest, corpus) = load_manifest(&manifest_path)?;
    check_taxonomy_classes(&corpus.taxonomy, &profile.class_names, "fusion profile")?;
    let fused = series(&corpus, Some(&profile)).stage(Stage::Fuse)?;
    let out = &cfg.output_dir;
    fused
        .par_iter()
        .try_for_each(|p| store_probability_matrix(p, out.join("fused").join(format!("{}.vsta", p.video_id))))
        .stage(Stage::Fuse)?;

    let mut derived = detached(manifest, &manifest_path).stage(Stage::Load)?;
    derived.backbones = vec![BackboneEntry {
        name: "fused".into(),
        heads: vec!["fused".into()],
    }];
    for entry in &mut derived.videos {
        entry.features.clear();
        entry.head_probs = [("fused".to_string(), vec![Path::new("fused").join(format!("{}.vsta", entry.video_id))])]
            .into_iter()
            .collect();
    }
    let derived_path = out.join("manifest.json");
    derived.save(&derived_path).stage(Stage::Fuse)?;
    emit_json(
        common,
        &Fused {
            manifest: derived_path,
            videos: fused.len(),
        },
    )
}

fn cmd_search(
    common: &Common,
    manifest: Option<PathBuf>,
    profile: Option<PathBuf>,
    mode: Option<SearchMode>,
    sweeps: Option<usize>,
    iou: Option<f64>,
) -> CliResult<()> {
    let mut cfg: SearchCommand = load_config(&common.config)?;
    cfg.manifest = manifest.or(cfg.manifest);
    cfg.profile = profile.or(cfg.profile);
    cfg.search.mode = mode.unwrap_or(cfg.search.mode);
    cfg.search.sweeps = sweeps.unwrap_or(cfg.search.sweeps);
    cfg.search.iou_threshold = iou.unwrap_or(cfg.search.iou_threshold);
    if !(cfg.search.iou_threshold > 0.0 && cfg.search.iou_threshold <= 1.0) {
        return Err(config_error("search IoU must lie in (0, 1]"));
    }
    let profile = load_profile(&cfg.profile)?;
    let (_, corpus) = load_manifest(&required(cfg.manifest.clone(), "manifest")?)?;
    let val = corpus.indices(Split::Val);
    let probs = series(&corpus, profile.as_ref()).stage(Stage::Fuse)?;
    let labels = corpus.frame_labels().stage(Stage::Load)?;
    let val_probs: Vec<_> = val.iter().map(|&v| probs[v].clone()).collect();
    let val_labels: Vec<_> = val.iter().map(|&v| labels[v].clone()).collect();
    let val_gt: Vec<EventSet> = val.iter().map(|&v| corpus.videos[v].gt.clone()).collect();
    let n = corpus.taxonomy.num_classes();
    let decode = DecodeConfig::new(corpus.taxonomy.clone(), &cfg.decode, vec![0.5; n]).stage(Stage::Config)?;
    let init = pipeline::initial_thresholds(&val_probs, &val_labels, &decode).stage(Stage::Search)?;
    let result = threshold_opt::optimize(&val_probs, &val_gt, &decode, &init, &cfg.search).stage(Stage::Search)?;
    emit_json(common, &result)
}

fn cmd_decode(
    common: &Common,
    manifest: Option<PathBuf>,
    profile: Option<PathBuf>,
    thresholds: Option<PathBuf>,
    split: Option<Split>,
) -> CliResult<()> {
    let mut cfg: DecodeCommand = load_config(&common.config)?;
    cfg.manifest = manifest.or(cfg.manifest);
    cfg.profile = profile.or(cfg.profile);
    cfg.thresholds = thresholds.or(cfg.thresholds);
    cfg.split = split.or(cfg.split);
    let profile = load_profile(&cfg.profile)?;
    let (_, corpus) = load_manifest(&required(cfg.manifest.clone(), "manifest")?)?;
    let n = corpus.taxonomy.num_classes();
    let values = match &cfg.thresholds {
        Some(p) => {
            let t: ThresholdProfile = load_json(p).stage(Stage::Load)?;
            check_taxonomy_classes(&corpus.taxonomy, &t.class_names, "threshold profile")?;
            t.final_thresholds
        }
        None => vec![0.5; n],
    };
    let decode = DecodeConfig::new(corpus.taxonomy.clone(), &cfg.decode, values).stage(Stage::Config)?;
    let probs = series(&corpus, profile.as_ref()).stage(Stage::Fuse)?;
    let events: Vec<EventSet> = probs
        .par_iter()
        .zip(&corpus.videos)
        .filter(|(_, v)| cfg.split.is_none_or(|s| v.split == s))
        .map(|(p, _)| ated::decode(p, &decode))
        .collect::<vista_core::Result<_>>()
        .stage(Stage::Decode)?;
    emit(common, &events_to_json(&events))
}

fn cmd_evaluate(
    common: &Common,
    predictions: Option<PathBuf>,
    ground_truth: Option<PathBuf>,
    taxonomy: Option<PathBuf>,
    iou: Option<Vec<f64>>,
) -> CliResult<()> {
    let mut cfg: EvaluateCommand = load_config(&common.config)?;
    cfg.predictions = predictions.or(cfg.predictions);
    cfg.ground_truth = ground_truth.or(cfg.ground_truth);
    cfg.taxonomy = taxonomy.or(cfg.taxonomy);
    cfg.iou_thresholds = iou.unwrap_or(cfg.iou_thresholds);
    if cfg.iou_thresholds.is_empty() || cfg.iou_thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
        return Err(config_error("IoU thresholds must lie in (0, 1]"));
    }
    let taxonomy = LabelTaxonomy::load(required(cfg.taxonomy.clone(), "taxonomy")?).stage(Stage::Load)?;
    let preds = load_events(required(cfg.predictions.clone(), "predictions")?).stage(Stage::Load)?;
    let gt = load_events(required(cfg.ground_truth.clone(), "ground-truth")?).stage(Stage::Load)?;
    for e in preds.iter().chain(&gt).flat_map(|s| s.events()) {
        taxonomy.class_index(&e.label).stage(Stage::Load)?;
    }
    // Score only the videos that were decoded; predictions list every decoded video.
    let decoded: std::collections::BTreeSet<&str> = preds.iter().map(|s| s.video_id.as_str()).collect();
    let gt: Vec<EventSet> = gt.into_iter().filter(|s| decoded.contains(s.video_id.as_str())).collect();
    let report = temporal_map(&preds, &gt, &cfg.iou_thresholds, taxonomy.classes()).stage(Stage::Evaluate)?;
    emit_json(common, &report)
}

fn cmd_pipeline(
    common: &Common,
    manifest: Option<PathBuf>,
    output_dir: Option<PathBuf>,
    seed: Option<u64>,
    mode: Option<SearchMode>,
    precomputed_heads: bool,
    no_ablation: bool,
) -> CliResult<()> {
    let mut cfg: PipelineConfig = load_config(&common.config)?;
    cfg.manifest = manifest.or(cfg.manifest);
    cfg.output_dir = output_dir.unwrap_or(cfg.output_dir);
    cfg.seed = seed.unwrap_or(cfg.seed);
    cfg.search.mode = mode.unwrap_or(cfg.search.mode);
    if precomputed_heads {
        cfg.head_source = HeadSource::Precomputed;
    }
    if no_ablation {
        cfg.ablation = false;
    }
    let report = vista_core::run_pipeline(&cfg)?;
    emit_json(common, &report)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth {
            common,
            output_dir,
            videos,
            frames,
            seed,
        } => cmd_synth(&common, output_dir, videos, frames, seed),
        Command::TrainHeads {
            common,
            manifest,
            output_dir,
            seed,
        } => cmd_train(&common, manifest, output_dir, seed),
        Command::Calibrate {
            common,
            manifest,
            temperature_grid,
            head_weighting,
            backbone_weighting,
        } => cmd_calibrate(&common, manifest, temperature_grid, head_weighting, backbone_weighting),
        Command::Fuse {
            common,
            manifest,
            profile,
            output_dir,
        } => cmd_fuse(&common, manifest, profile, output_dir),
        Command::SearchThresholds {
            common,
            manifest,
            profile,
            mode,
            sweeps,
            iou,
        } => cmd_search(&common, manifest, profile, mode, sweeps, iou),
        Command::Decode {
            common,
            manifest,
            profile,
            thresholds,
            split,
        } => cmd_decode(&common, manifest, profile, thresholds, split),
        Command::Evaluate {
            common,
            predictions,
            ground_truth,
            taxonomy,
            iou,
        } => cmd_evaluate(&common, predictions, ground_truth, taxonomy, iou),
        Command::RunPipeline {
            common,
            manifest,
            output_dir,
            seed,
            mode,
            precomputed_heads,
            no_ablation,
        } => cmd_pipeline(&common, manifest, output_dir, seed, mode, precomputed_heads, no_ablation),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
