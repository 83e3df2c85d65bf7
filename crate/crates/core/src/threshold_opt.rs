//! Per-class operating point search against event-level mAP on validation data.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ated::{self, DecodeConfig, PreparedVideo};
use crate::corpus_io::{BinaryMatrix, EventSet, ProbabilityMatrix};
use crate::error::{bail, Result};
use crate::metrics::{f1_threshold, temporal_map};

const DEDUP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    Local,
    #[default]
    #[serde(rename = "local+global")]
    LocalPlusGlobal,
}

impl std::str::FromStr for SearchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "local" => Ok(Self::Local),
            "local+global" | "local_plus_global" => Ok(Self::LocalPlusGlobal),
            other => Err(format!("unknown search mode `{other}` (expected `local` or `local+global`)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSettings {
    pub mode: SearchMode,
    pub sweeps: usize,
    /// IoU at which the objective mAP is measured.
    pub iou_threshold: f64,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            mode: SearchMode::LocalPlusGlobal,
            sweeps: 1,
            iou_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub sweep: usize,
    pub class: String,
    pub threshold: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdProfile {
    pub class_names: Vec<String>,
    pub mode: SearchMode,
    pub init: Vec<f64>,
    #[serde(rename = "final")]
    pub final_thresholds: Vec<f64>,
    pub initial_objective: f64,
    pub objective_value: f64,
    pub trace: Vec<TraceStep>,
}

impl ThresholdProfile {
    /// Profile that leaves `thresholds` as they are.
    pub fn fixed(class_names: Vec<String>, thresholds: Vec<f64>) -> Self {
        Self {
            class_names,
            mode: SearchMode::Local,
            init: thresholds.clone(),
            final_thresholds: thresholds,
            initial_objective: 0.0,
            objective_value: 0.0,
            trace: Vec::new(),
        }
    }
}

/// F1-optimal frame threshold per class over the pooled validation frames,
/// clamped to `[0.01, 0.99]`.
pub fn init_thresholds(val_probs: &[ProbabilityMatrix], val_gt: &[BinaryMatrix]) -> Result<Vec<f64>> {
    if val_probs.len() != val_gt.len() || val_probs.is_empty() {
        bail!(Shape, "need matching, non-empty validation probabilities and labels");
    }
    let c_len = val_probs[0].num_classes();
    for (p, g) in val_probs.iter().zip(val_gt) {
        if p.class_names() != val_probs[0].class_names() || g.class_names() != p.class_names() || g.frames() != p.frames() {
            bail!(Shape, "validation video `{}` does not match the others", p.video_id);
        }
    }
    (0..c_len)
        .map(|c| {
            let scores: Vec<f64> = val_probs.iter().flat_map(|p| p.column(c)).collect();
            let labels: Vec<bool> = val_gt.iter().flat_map(|g| g.column(c)).collect();
            Ok(f1_threshold(&scores, &labels)?.clamp(0.01, 0.99))
        })
        .collect()
}

/// Local grid `clamp(b + k * 0.01)` for `k` in `-15..=15`, plus the global grid
/// `0.05, 0.10, ..., 0.95` in `LocalPlusGlobal` mode. Sorted, duplicates removed.
pub fn candidate_set(base: f64, mode: SearchMode) -> Vec<f64> {
    let mut out: Vec<f64> = (-15..=15).map(|k| (base + k as f64 * 0.01).clamp(0.01, 0.99)).collect();
    if mode == SearchMode::LocalPlusGlobal {
        out.extend((0..=18).map(|k| (5 + 5 * k) as f64 / 100.0));
    }
    out.sort_by(f64::total_cmp);
    out.dedup_by(|a, b| (*a - *b).abs() < DEDUP_TOL);
    out
}

/// Validation data prepared once for repeated decoding.
pub struct SearchData<'a> {
    prepared: Vec<PreparedVideo>,
    gt: &'a [EventSet],
    config: &'a DecodeConfig,
    iou_threshold: f64,
}

impl<'a> SearchData<'a> {
    pub fn new(val_probs: &[ProbabilityMatrix], val_gt: &'a [EventSet], config: &'a DecodeConfig, iou_threshold: f64) -> Result<Self> {
        let prepared = val_probs
            .par_iter()
            .map(|p| ated::prepare(p, config))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            prepared,
            gt: val_gt,
            config,
            iou_threshold,
        })
    }

    /// Temporal mAP of the decoded validation set under `thresholds`.
    pub fn objective(&self, thresholds: &[f64]) -> Result<f64> {
        let preds = self
            .prepared
            .iter()
            .map(|p| ated::finish(p, self.config, thresholds))
            .collect::<Result<Vec<_>>>()?;
        let report = temporal_map(&preds, self.gt, &[self.iou_threshold], self.config.taxonomy.classes())?;
        Ok(report.per_threshold[0].map)
    }
}

/// Coordinate search over classes in taxonomy order.
///
/// For each class every candidate is scored with the other thresholds held
/// fixed; the best one is kept, ties going to the candidate nearest the
/// class's initial threshold.
pub fn optimize(
    val_probs: &[ProbabilityMatrix],
    val_gt: &[EventSet],
    config: &DecodeConfig,
    init: &[f64],
    settings: &SearchSettings,
) -> Result<ThresholdProfile> {
    let candidates: Vec<Vec<f64>> = init.iter().map(|&b| candidate_set(b, settings.mode)).collect();
    optimize_with_candidates(val_probs, val_gt, config, init, settings, &candidates)
}

/// [`optimize`] over explicit per-class candidate lists.
pub fn optimize_with_candidates(
    val_probs: &[ProbabilityMatrix],
    val_gt: &[EventSet],
    config: &DecodeConfig,
    init: &[f64],
    settings: &SearchSettings,
    candidates: &[Vec<f64>],
) -> Result<ThresholdProfile> {
    let classes = config.taxonomy.classes();
    if init.len() != classes.len() || candidates.len() != classes.len() {
        bail!(Shape, "{} initial thresholds and {} candidate lists for {} classes", init.len(), candidates.len(), classes.len());
    }
    if init.iter().any(|b| !(0.0..=1.0).contains(b)) {
        bail!(Validation, "initial thresholds must lie in [0, 1]");
    }
    let data = SearchData::new(val_probs, val_gt, config, settings.iou_threshold)?;
    let mut current = init.to_vec();
    let initial_objective = data.objective(&current)?;
    let mut best_value = initial_objective;
    let mut trace = Vec::new();

    for sweep in 0..settings.sweeps {
        for c in 0..classes.len() {
            let scored = candidates[c]
                .par_iter()
                .map(|&v| {
                    let mut th = current.clone();
                    th[c] = v;
                    data.objective(&th).map(|o| (v, o))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut pick = (current[c], best_value);
            for (v, o) in scored {
                let closer = (v - init[c]).abs() < (pick.0 - init[c]).abs() - DEDUP_TOL;
                if o > pick.1 + 1e-12 || ((o - pick.1).abs() <= 1e-12 && closer) {
                    pick = (v, o);
                }
            }
            current[c] = pick.0;
            best_value = pick.1;
            trace.push(TraceStep {
                sweep,
                class: classes[c].clone(),
                threshold: pick.0,
                objective: pick.1,
            });
        }
    }

    Ok(ThresholdProfile {
        class_names: classes.to_vec(),
        mode: settings.mode,
        init: init.to_vec(),
        final_thresholds: current,
        initial_objective,
        objective_value: best_value,
        trace,
    })
}
