//! Frame-level AP/mAP, F1 operating points, temporal IoU and temporal mAP.
//!
//! All AP values use all-points interpolation: precision is replaced by its
//! running maximum from the high-recall end, and the area under that envelope
//! is summed over recall increments.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::corpus_io::{BinaryMatrix, EventSet, ProbabilityMatrix};
use crate::error::{bail, Result};

/// Default IoU thresholds of the official metric.
pub const DEFAULT_IOU_THRESHOLDS: [f64; 2] = [0.5, 0.95];

/// Area under the interpolated precision envelope of `(recall, precision)` points
/// ordered by increasing recall.
fn interpolated_area(points: &[(f64, f64)]) -> f64 {
    let mut area = 0.0;
    let mut envelope = 0.0f64;
    let mut prev_recall = 0.0;
    // Walk from the high-recall end keeping the running max of precision,
    // then accumulate in forward order.
    let mut env: Vec<f64> = vec![0.0; points.len()];
    for (i, &(_, p)) in points.iter().enumerate().rev() {
        envelope = envelope.max(p);
        env[i] = envelope;
    }
    for (&(r, _), &p) in points.iter().zip(&env) {
        area += (r - prev_recall) * p;
        prev_recall = r;
    }
    area
}

fn descending(a: f64, b: f64) -> Ordering {
    b.total_cmp(&a)
}

/// Ranked-retrieval AP of `scores` against binary `labels`; `None` without positives.
///
/// Tied scores form a single cut point.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<Option<f64>> {
    if scores.len() != labels.len() {
        bail!(Shape, "{} scores vs {} labels", scores.len(), labels.len());
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| descending(scores[a], scores[b]));

    let mut points = Vec::new();
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            tp += labels[order[i]] as usize;
            seen += 1;
            i += 1;
        }
        points.push((tp as f64 / positives as f64, tp as f64 / seen as f64));
    }
    Ok(Some(interpolated_area(&points)))
}

/// Per-class frame AP pooled over videos.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    pub class_names: Vec<String>,
    pub per_class_ap: Vec<Option<f64>>,
    /// Mean over classes with a defined AP; `None` if no class has positives.
    pub map: Option<f64>,
}

pub fn frame_ap_report(probs: &[ProbabilityMatrix], gt: &[BinaryMatrix]) -> Result<ApReport> {
    if probs.len() != gt.len() {
        bail!(Shape, "{} probability matrices vs {} label matrices", probs.len(), gt.len());
    }
    let Some(first) = probs.first() else {
        bail!(Shape, "frame AP needs at least one video");
    };
    let classes = first.class_names().to_vec();
    for (p, g) in probs.iter().zip(gt) {
        if p.class_names() != classes.as_slice() || g.class_names() != classes.as_slice() {
            bail!(Taxonomy, "class columns differ for video `{}`", p.video_id);
        }
        if p.frames() != g.frames() {
            bail!(Shape, "video `{}`: {} probability frames vs {} label frames", p.video_id, p.frames(), g.frames());
        }
    }
    let per_class_ap = (0..classes.len())
        .map(|c| {
            let scores: Vec<f64> = probs.iter().flat_map(|p| p.column(c)).collect();
            let labels: Vec<bool> = gt.iter().flat_map(|g| g.column(c)).collect();
            average_precision(&scores, &labels)
        })
        .collect::<Result<Vec<_>>>()?;
    let defined: Vec<f64> = per_class_ap.iter().flatten().copied().collect();
    let map = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(ApReport {
        class_names: classes,
        per_class_ap,
        map,
    })
}

/// Score cut maximising F1 for the rule "positive iff score >= cut".
///
/// Ties go to the larger cut; 0.5 when there are no positives.
pub fn f1_threshold(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        bail!(Shape, "{} scores vs {} labels", scores.len(), labels.len());
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Ok(0.5);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| descending(scores[a], scores[b]));

    let (mut tp, mut fp) = (0usize, 0usize);
    let mut best = (f64::NEG_INFINITY, 0.5);
    let mut i = 0;
    while i < order.len() {
        let cut = scores[order[i]];
        while i < order.len() && scores[order[i]] == cut {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let fnc = positives - tp;
        let f1 = 2.0 * tp as f64 / (2 * tp + fp + fnc) as f64;
        if f1 > best.0 {
            best = (f1, cut);
        }
    }
    Ok(best.1)
}

/// Frame-count IoU of two half-open intervals.
pub fn temporal_iou(a: &Range<usize>, b: &Range<usize>) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        bail!(Validation, "temporal IoU of an empty interval ({a:?}, {b:?})");
    }
    Ok(iou_unchecked(a.start, a.end, b.start, b.end))
}

#[inline]
fn iou_unchecked(a0: usize, a1: usize, b0: usize, b1: usize) -> f64 {
    let inter = a1.min(b1).saturating_sub(a0.max(b0));
    if inter == 0 {
        return 0.0;
    }
    let union = (a1 - a0) + (b1 - b0) - inter;
    inter as f64 / union as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalThresholdResult {
    pub iou_threshold: f64,
    /// AP for every class with at least one ground-truth event in the corpus.
    pub per_class: BTreeMap<String, f64>,
    pub map: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalMapReport {
    pub per_threshold: Vec<TemporalThresholdResult>,
}

impl TemporalMapReport {
    pub fn map_at(&self, iou_threshold: f64) -> Option<f64> {
        self.per_threshold
            .iter()
            .find(|r| (r.iou_threshold - iou_threshold).abs() < 1e-12)
            .map(|r| r.map)
    }
}

struct ScoredPrediction {
    video: usize,
    start: usize,
    end: usize,
    score: f64,
}

/// Event-level mAP at each IoU threshold.
///
/// Per class, predictions are ranked by descending score and each is matched
/// one-to-one to the still-unmatched ground-truth event of the same video with
/// the highest IoU; it is a true positive iff that IoU reaches the threshold.
/// Classes with no ground truth anywhere in the corpus are left out of the mean.
pub fn temporal_map(
    preds: &[EventSet],
    gt: &[EventSet],
    iou_thresholds: &[f64],
    classes: &[String],
) -> Result<TemporalMapReport> {
    let class_index: HashMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let mut video_index: HashMap<&str, usize> = HashMap::new();
    for set in gt.iter().chain(preds) {
        let next = video_index.len();
        video_index.entry(set.video_id.as_str()).or_insert(next);
    }
    let n_videos = video_index.len();

    // gt_spans[class][video] = list of (start, end)
    let mut gt_spans: Vec<Vec<Vec<(usize, usize)>>> = vec![vec![Vec::new(); n_videos]; classes.len()];
    for set in gt {
        let v = video_index[set.video_id.as_str()];
        for e in set.events() {
            let Some(&c) = class_index.get(e.label.as_str()) else {
                bail!(Taxonomy, "ground-truth label `{}` is not a known class", e.label);
            };
            gt_spans[c][v].push((e.start, e.end));
        }
    }
    let mut pred_lists: Vec<Vec<ScoredPrediction>> = (0..classes.len()).map(|_| Vec::new()).collect();
    for set in preds {
        let v = video_index[set.video_id.as_str()];
        for e in set.events() {
            let Some(&c) = class_index.get(e.label.as_str()) else {
                bail!(Taxonomy, "predicted label `{}` is not a known class", e.label);
            };
            let Some(score) = e.score else {
                bail!(Validation, "prediction `{}` [{}, {}) in `{}` has no score", e.label, e.start, e.end, set.video_id);
            };
            pred_lists[c].push(ScoredPrediction { video: v, start: e.start, end: e.end, score });
        }
    }
    for list in &mut pred_lists {
        list.sort_by(|a, b| {
            descending(a.score, b.score)
                .then(a.video.cmp(&b.video))
                .then(a.start.cmp(&b.start))
        });
    }

    let per_threshold = iou_thresholds
        .iter()
        .map(|&theta| {
            let mut per_class = BTreeMap::new();
            for (c, name) in classes.iter().enumerate() {
                let n_gt: usize = gt_spans[c].iter().map(Vec::len).sum();
                if n_gt == 0 {
                    continue;
                }
                per_class.insert(name.clone(), class_ap(&pred_lists[c], &gt_spans[c], n_gt, theta));
            }
            let map = if per_class.is_empty() {
                0.0
            } else {
                per_class.values().sum::<f64>() / per_class.len() as f64
            };
            TemporalThresholdResult { iou_threshold: theta, per_class, map }
        })
        .collect();
    Ok(TemporalMapReport { per_threshold })
}

fn class_ap(preds: &[ScoredPrediction], gt: &[Vec<(usize, usize)>], n_gt: usize, theta: f64) -> f64 {
    let mut matched: Vec<Vec<bool>> = gt.iter().map(|g| vec![false; g.len()]).collect();
    let mut points = Vec::with_capacity(preds.len());
    let mut tp = 0usize;
    for (k, p) in preds.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (j, &(s, e)) in gt[p.video].iter().enumerate() {
            if matched[p.video][j] {
                continue;
            }
            let iou = iou_unchecked(p.start, p.end, s, e);
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((j, iou));
            }
        }
        if let Some((j, iou)) = best {
            if iou > 0.0 && iou >= theta {
                matched[p.video][j] = true;
                tp += 1;
            }
        }
        points.push((tp as f64 / n_gt as f64, tp as f64 / (k + 1) as f64));
    }
    interpolated_area(&points)
}
