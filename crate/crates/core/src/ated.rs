//! Anatomy-aware temporal event decoding.
//!
//! Pipeline per video, in order: class-wise smoothing, monotone region
//! resolution, thresholding (region columns replaced by the resolved path),
//! landmark gating, closing then opening, region coverage repair, and event
//! extraction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus_io::{BinaryMatrix, Event, EventSet, ProbabilityMatrix};
use crate::error::{bail, Result};
use crate::taxonomy::{ClassRole, LabelTaxonomy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TransitMode {
    /// Globally optimal non-decreasing region path.
    #[default]
    Dp,
    /// Frame-wise argmax that may never move backwards.
    Ratchet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EventMode {
    #[default]
    PerLabel,
    Tuple,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MorphLengths {
    pub open: usize,
    pub close: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoleMorphology {
    pub region: MorphLengths,
    pub landmark: MorphLengths,
    pub pathology: MorphLengths,
}

impl Default for RoleMorphology {
    fn default() -> Self {
        Self {
            region: MorphLengths { open: 5, close: 15 },
            landmark: MorphLengths { open: 3, close: 9 },
            pathology: MorphLengths { open: 3, close: 5 },
        }
    }
}

/// Serializable decode parameters; combined with a taxonomy and thresholds
/// into a [`DecodeConfig`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSettings {
    pub morphology: RoleMorphology,
    /// Per-class morphology lengths that replace the role default.
    pub overrides: BTreeMap<String, MorphLengths>,
    pub landmark_margin: usize,
    pub transit_mode: TransitMode,
    pub event_mode: EventMode,
    /// When false, raw probabilities are thresholded and split into per-label
    /// runs with no smoothing, constraints or morphology.
    pub full_ated: bool,
}

impl Default for DecodeSettings {
    fn default() -> Self {
        Self {
            morphology: RoleMorphology::default(),
            overrides: BTreeMap::new(),
            landmark_margin: 10,
            transit_mode: TransitMode::Dp,
            event_mode: EventMode::PerLabel,
            full_ated: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    pub taxonomy: LabelTaxonomy,
    /// Operating threshold per class column.
    pub thresholds: Vec<f64>,
    pub open_len: Vec<usize>,
    pub close_len: Vec<usize>,
    pub landmark_margin: usize,
    pub transit_mode: TransitMode,
    pub event_mode: EventMode,
    pub full_ated: bool,
}

impl DecodeConfig {
    pub fn new(taxonomy: LabelTaxonomy, settings: &DecodeSettings, thresholds: Vec<f64>) -> Result<Self> {
        let c = taxonomy.num_classes();
        if thresholds.len() != c {
            bail!(Shape, "{} thresholds for {c} classes", thresholds.len());
        }
        for name in settings.overrides.keys() {
            taxonomy.class_index(name)?;
        }
        let lengths: Vec<MorphLengths> = (0..c)
            .map(|i| {
                settings
                    .overrides
                    .get(&taxonomy.classes()[i])
                    .copied()
                    .unwrap_or(match taxonomy.role(i) {
                        ClassRole::Region(_) => settings.morphology.region,
                        ClassRole::Landmark => settings.morphology.landmark,
                        ClassRole::Pathology => settings.morphology.pathology,
                    })
            })
            .collect();
        if let Some((i, _)) = lengths.iter().enumerate().find(|(_, l)| l.open == 0 || l.close == 0) {
            bail!(Validation, "morphology lengths for `{}` must be >= 1", taxonomy.classes()[i]);
        }
        Ok(Self {
            open_len: lengths.iter().map(|l| l.open).collect(),
            close_len: lengths.iter().map(|l| l.close).collect(),
            taxonomy,
            thresholds,
            landmark_margin: settings.landmark_margin,
            transit_mode: settings.transit_mode,
            event_mode: settings.event_mode,
            full_ated: settings.full_ated,
        })
    }

    /// Default settings with every threshold at 0.5.
    pub fn with_defaults(taxonomy: LabelTaxonomy) -> Self {
        let c = taxonomy.num_classes();
        Self::new(taxonomy, &DecodeSettings::default(), vec![0.5; c]).expect("default settings are valid")
    }
}

/// Centered moving average per class with the taxonomy's window; windows are
/// truncated at the sequence edges.
pub fn smooth(probs: &ProbabilityMatrix, taxonomy: &LabelTaxonomy) -> Result<ProbabilityMatrix> {
    taxonomy.check_columns(probs.class_names())?;
    let t_len = probs.frames();
    let c_len = probs.num_classes();
    let mut out = vec![0.0; probs.values().len()];
    let mut prefix = vec![0.0; t_len + 1];
    for c in 0..c_len {
        let half = taxonomy.smoothing_window(c) / 2;
        if half == 0 {
            for t in 0..t_len {
                out[t * c_len + c] = probs.get(t, c);
            }
            continue;
        }
        for t in 0..t_len {
            prefix[t + 1] = prefix[t] + probs.get(t, c);
        }
        for t in 0..t_len {
            let lo = t.saturating_sub(half);
            let hi = (t + half + 1).min(t_len);
            out[t * c_len + c] = ((prefix[hi] - prefix[lo]) / (hi - lo) as f64).clamp(0.0, 1.0);
        }
    }
    Ok(ProbabilityMatrix::from_parts(
        probs.video_id.clone(),
        probs.class_names().to_vec(),
        out,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionResolution {
    /// Region ordinal per frame; non-decreasing.
    pub path: Vec<usize>,
    /// One-hot over region classes (columns in transit order).
    pub mask: BinaryMatrix,
}

/// Lowest index of the maximum.
fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Non-decreasing region path maximising summed region probability, in `O(T * R)`.
fn monotone_path(probs: &ProbabilityMatrix, region_cols: &[usize]) -> Vec<usize> {
    let t_len = probs.frames();
    let r_len = region_cols.len();
    if t_len == 0 {
        return Vec::new();
    }
    let mut back = vec![0u16; t_len * r_len];
    let mut score: Vec<f64> = region_cols.iter().map(|&c| probs.get(0, c)).collect();
    let mut next = vec![0.0; r_len];
    for t in 1..t_len {
        let (mut run_best, mut run_arg) = (f64::NEG_INFINITY, 0usize);
        for r in 0..r_len {
            if score[r] > run_best {
                run_best = score[r];
                run_arg = r;
            }
            next[r] = probs.get(t, region_cols[r]) + run_best;
            back[t * r_len + r] = run_arg as u16;
        }
        std::mem::swap(&mut score, &mut next);
    }
    let mut path = vec![0usize; t_len];
    let mut r = argmax(score.iter().copied());
    for t in (0..t_len).rev() {
        path[t] = r;
        if t > 0 {
            r = back[t * r_len + r] as usize;
        }
    }
    path
}

/// Picks one region per frame, never moving backwards in transit order.
pub fn resolve_regions(probs: &ProbabilityMatrix, taxonomy: &LabelTaxonomy, mode: TransitMode) -> Result<RegionResolution> {
    let cols: Vec<usize> = taxonomy
        .regions()
        .iter()
        .map(|r| {
            probs
                .class_names()
                .iter()
                .position(|c| c == r)
                .ok_or_else(|| crate::Error::Taxonomy(format!("probabilities lack region column `{r}`")))
        })
        .collect::<Result<_>>()?;
    if cols.len() > u16::MAX as usize {
        bail!(Validation, "too many regions");
    }
    let path = match mode {
        TransitMode::Dp => monotone_path(probs, &cols),
        TransitMode::Ratchet => {
            let mut floor = 0usize;
            (0..probs.frames())
                .map(|t| {
                    floor = floor.max(argmax(cols.iter().map(|&c| probs.get(t, c))));
                    floor
                })
                .collect()
        }
    };
    let mut mask = BinaryMatrix::falses(probs.video_id.clone(), taxonomy.regions().to_vec(), probs.frames());
    for (t, &r) in path.iter().enumerate() {
        mask.set(t, r, true);
    }
    Ok(RegionResolution { path, mask })
}

/// `p >= threshold` per class column.
pub fn binarize(probs: &ProbabilityMatrix, thresholds: &[f64]) -> Result<BinaryMatrix> {
    let c = probs.num_classes();
    if thresholds.len() != c {
        bail!(Shape, "{} thresholds for {c} classes", thresholds.len());
    }
    let values = probs
        .values()
        .iter()
        .enumerate()
        .map(|(i, &p)| p >= thresholds[i % c])
        .collect();
    BinaryMatrix::new(probs.video_id.clone(), probs.class_names().to_vec(), values)
}

/// Replaces every region column with the resolved one-hot path.
pub fn override_regions(binary: &mut BinaryMatrix, taxonomy: &LabelTaxonomy, path: &[usize]) {
    let cols = taxonomy.region_columns();
    for (t, &r) in path.iter().enumerate() {
        for (ord, &c) in cols.iter().enumerate() {
            binary.set(t, c, ord == r);
        }
    }
}

/// Keeps a landmark frame only if a frame within `margin` lies in one of the
/// landmark's valid regions.
pub fn gate_landmarks(
    binary: &BinaryMatrix,
    region_path: &[usize],
    taxonomy: &LabelTaxonomy,
    margin: usize,
) -> Result<BinaryMatrix> {
    if region_path.len() != binary.frames() {
        bail!(Shape, "region path has {} frames, matrix has {}", region_path.len(), binary.frames());
    }
    let mut out = binary.clone();
    let t_len = binary.frames();
    let mut dist = vec![usize::MAX; t_len];
    for c in taxonomy.landmark_columns() {
        let valid = taxonomy.landmark_valid_regions(c);
        let mut last: Option<usize> = None;
        for t in 0..t_len {
            if valid.contains(&region_path[t]) {
                last = Some(t);
            }
            dist[t] = last.map_or(usize::MAX, |l| t - l);
        }
        let mut next: Option<usize> = None;
        for t in (0..t_len).rev() {
            if valid.contains(&region_path[t]) {
                next = Some(t);
            }
            if let Some(n) = next {
                dist[t] = dist[t].min(n - t);
            }
            if out.get(t, c) && dist[t] > margin {
                out.set(t, c, false);
            }
        }
    }
    Ok(out)
}

/// Maximal runs of `value` as half-open ranges.
pub fn runs(column: &[bool], value: bool) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut t = 0;
    while t < column.len() {
        if column[t] == value {
            let s = t;
            while t < column.len() && column[t] == value {
                t += 1;
            }
            out.push((s, t));
        } else {
            t += 1;
        }
    }
    out
}

/// Fills false gaps shorter than `len` that have true runs on both sides.
pub fn close_column(column: &mut [bool], len: usize) {
    for (s, e) in runs(column, false) {
        if s > 0 && e < column.len() && e - s < len {
            column[s..e].iter_mut().for_each(|v| *v = true);
        }
    }
}

/// Clears true runs shorter than `len`.
pub fn open_column(column: &mut [bool], len: usize) {
    for (s, e) in runs(column, true) {
        if e - s < len {
            column[s..e].iter_mut().for_each(|v| *v = false);
        }
    }
}

/// Closing with `close_len`, then opening with `open_len`.
pub fn morph_column(column: &mut [bool], open_len: usize, close_len: usize) {
    close_column(column, close_len);
    open_column(column, open_len);
}

pub fn morph_refine(binary: &BinaryMatrix, open_len: &[usize], close_len: &[usize]) -> Result<BinaryMatrix> {
    let c = binary.num_classes();
    if open_len.len() != c || close_len.len() != c {
        bail!(Shape, "morphology lengths must be given for all {c} classes");
    }
    let mut out = binary.clone();
    for k in 0..c {
        let mut col = binary.column(k);
        morph_column(&mut col, open_len[k], close_len[k]);
        out.set_column(k, &col);
    }
    Ok(out)
}

/// Leaves exactly one region true per frame.
///
/// Frames with several regions keep the most probable one. Frames left with
/// none are filled from the regions bordering the gap: a gap between regions
/// `a <= b` switches from `a` to `b` once, at the point maximising summed
/// probability. If no region survives anywhere, the monotone path of the
/// smoothed probabilities is used.
pub fn ensure_coverage(binary: &BinaryMatrix, smoothed: &ProbabilityMatrix, taxonomy: &LabelTaxonomy) -> Result<BinaryMatrix> {
    if binary.frames() != smoothed.frames() || binary.class_names() != smoothed.class_names() {
        bail!(Shape, "binary and probability matrices differ in shape");
    }
    let cols = taxonomy.region_columns();
    let t_len = binary.frames();
    let mut assigned: Vec<Option<usize>> = (0..t_len)
        .map(|t| {
            let on: Vec<usize> = (0..cols.len()).filter(|&r| binary.get(t, cols[r])).collect();
            match on.as_slice() {
                [] => None,
                [r] => Some(*r),
                many => Some(many[argmax(many.iter().map(|&r| smoothed.get(t, cols[r])))]),
            }
        })
        .collect();

    if assigned.iter().all(Option::is_none) {
        let path = monotone_path(smoothed, cols);
        for (a, r) in assigned.iter_mut().zip(path) {
            *a = Some(r);
        }
    } else {
        let mut t = 0;
        while t < t_len {
            if assigned[t].is_some() {
                t += 1;
                continue;
            }
            let s = t;
            while t < t_len && assigned[t].is_none() {
                t += 1;
            }
            let left = s.checked_sub(1).and_then(|i| assigned[i]);
            let right = if t < t_len { assigned[t] } else { None };
            let p = |f: usize, r: usize| smoothed.get(f, cols[r]);
            match (left, right) {
                (Some(a), Some(b)) if a < b => {
                    // switch point k: [s, k) -> a, [k, t) -> b
                    let mut gain: f64 = (s..t).map(|f| p(f, b)).sum();
                    let (mut best_k, mut best) = (s, gain);
                    for k in s..t {
                        gain += p(k, a) - p(k, b);
                        if gain > best {
                            best = gain;
                            best_k = k + 1;
                        }
                    }
                    for (f, slot) in assigned.iter_mut().enumerate().take(t).skip(s) {
                        *slot = Some(if f < best_k { a } else { b });
                    }
                }
                (Some(a), Some(b)) if a > b => {
                    for (f, slot) in assigned.iter_mut().enumerate().take(t).skip(s) {
                        *slot = Some(if p(f, b) > p(f, a) { b } else { a });
                    }
                }
                (Some(a), _) | (None, Some(a)) => {
                    assigned[s..t].iter_mut().for_each(|v| *v = Some(a));
                }
                (None, None) => unreachable!("at least one frame has a region"),
            }
        }
    }

    let mut out = binary.clone();
    for (t, a) in assigned.iter().enumerate() {
        let a = a.expect("every frame assigned");
        for (r, &c) in cols.iter().enumerate() {
            out.set(t, c, r == a);
        }
    }
    Ok(out)
}

fn run_score(scores: &ProbabilityMatrix, c: usize, s: usize, e: usize) -> f64 {
    ((s..e).map(|t| scores.get(t, c)).sum::<f64>() / (e - s) as f64).clamp(0.0, 1.0)
}

/// One event per maximal true run of each class, scored by mean probability.
pub fn extract_events_per_label(binary: &BinaryMatrix, scores: &ProbabilityMatrix) -> Result<EventSet> {
    if binary.frames() != scores.frames() || binary.class_names() != scores.class_names() {
        bail!(Shape, "binary and score matrices differ in shape");
    }
    let mut events = Vec::new();
    for (c, name) in binary.class_names().iter().enumerate() {
        for (s, e) in runs(&binary.column(c), true) {
            events.push(Event::new(name.clone(), s, e, Some(run_score(scores, c, s, e))));
        }
    }
    EventSet::new(binary.video_id.clone(), events)
}

/// Splits the video wherever the set of active labels changes and emits one
/// event per active label in every segment.
pub fn extract_events_tuple(binary: &BinaryMatrix, scores: &ProbabilityMatrix) -> Result<EventSet> {
    if binary.frames() != scores.frames() || binary.class_names() != scores.class_names() {
        bail!(Shape, "binary and score matrices differ in shape");
    }
    let c_len = binary.num_classes();
    let row = |t: usize| &binary.values()[t * c_len..(t + 1) * c_len];
    let mut events = Vec::new();
    let mut s = 0;
    for t in 1..=binary.frames() {
        if t < binary.frames() && row(t) == row(s) {
            continue;
        }
        for (c, _) in row(s).iter().enumerate().filter(|(_, &on)| on) {
            events.push(Event::new(binary.class_names()[c].clone(), s, t, Some(run_score(scores, c, s, t))));
        }
        s = t;
    }
    EventSet::new(binary.video_id.clone(), events)
}

/// Threshold-independent part of decoding, reusable across threshold candidates.
#[derive(Debug, Clone)]
pub struct PreparedVideo {
    /// Smoothed probabilities (raw when decoding without ATED).
    pub scores: ProbabilityMatrix,
    pub regions: Option<RegionResolution>,
}

pub fn prepare(probs: &ProbabilityMatrix, config: &DecodeConfig) -> Result<PreparedVideo> {
    config.taxonomy.check_columns(probs.class_names())?;
    if !config.full_ated {
        return Ok(PreparedVideo {
            scores: probs.clone(),
            regions: None,
        });
    }
    let smoothed = smooth(probs, &config.taxonomy)?;
    let regions = resolve_regions(&smoothed, &config.taxonomy, config.transit_mode)?;
    Ok(PreparedVideo {
        scores: smoothed,
        regions: Some(regions),
    })
}

/// Thresholds a prepared video and extracts its events.
pub fn finish(prepared: &PreparedVideo, config: &DecodeConfig, thresholds: &[f64]) -> Result<EventSet> {
    let mut binary = binarize(&prepared.scores, thresholds)?;
    if let Some(regions) = &prepared.regions {
        override_regions(&mut binary, &config.taxonomy, &regions.path);
        binary = gate_landmarks(&binary, &regions.path, &config.taxonomy, config.landmark_margin)?;
        binary = morph_refine(&binary, &config.open_len, &config.close_len)?;
        binary = ensure_coverage(&binary, &prepared.scores, &config.taxonomy)?;
    }
    match config.event_mode {
        EventMode::PerLabel => extract_events_per_label(&binary, &prepared.scores),
        EventMode::Tuple => extract_events_tuple(&binary, &prepared.scores),
    }
}

/// Full decoding of one video with the thresholds stored in `config`.
pub fn decode(probs: &ProbabilityMatrix, config: &DecodeConfig) -> Result<EventSet> {
    finish(&prepare(probs, config)?, config, &config.thresholds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bools(s: &str) -> Vec<bool> {
        s.chars().filter(|c| !c.is_whitespace()).map(|c| c == '1').collect()
    }

    fn taxonomy3() -> LabelTaxonomy {
        LabelTaxonomy::from_json(
            r#"{
                "classes": ["r0", "r1", "r2", "lm", "path"],
                "regions": ["r0", "r1", "r2"],
                "landmarks": {"lm": ["r1"]},
                "pathologies": ["path"],
                "smoothing_window": {"r0": 1, "r1": 1, "r2": 1, "lm": 1, "path": 3}
            }"#,
        )
        .unwrap()
    }

    fn matrix(tax: &LabelTaxonomy, rows: &[[f64; 5]]) -> ProbabilityMatrix {
        ProbabilityMatrix::new("v", tax.classes().to_vec(), rows.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn smoothing_window_three() {
        let tax = taxonomy3();
        let col = [0.0, 1.0, 0.0, 1.0, 0.0];
        let rows: Vec<[f64; 5]> = col.iter().map(|&p| [0.5, 0.5, 0.5, 0.5, p]).collect();
        let s = smooth(&matrix(&tax, &rows), &tax).unwrap();
        let got = s.column(4);
        for (g, w) in got.iter().zip([0.5, 1.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0, 0.5]) {
            assert!((g - w).abs() < 1e-12, "{got:?}");
        }
        // window 1 columns are untouched, constant columns stay constant
        assert_eq!(s.column(0), vec![0.5; 5]);
    }

    #[test]
    fn dp_beats_greedy_argmax() {
        let tax = taxonomy3();
        let m = matrix(
            &tax,
            &[
                [0.9, 0.05, 0.05, 0.0, 0.0],
                [0.1, 0.2, 0.7, 0.0, 0.0],
                [0.1, 0.8, 0.1, 0.0, 0.0],
            ],
        );
        let dp = resolve_regions(&m, &tax, TransitMode::Dp).unwrap();
        assert_eq!(dp.path, vec![0, 1, 1]);
        let ratchet = resolve_regions(&m, &tax, TransitMode::Ratchet).unwrap();
        assert_eq!(ratchet.path, vec![0, 2, 2]);
        assert_eq!(dp.mask.column(1), vec![false, true, true]);
    }

    #[test]
    fn single_frame_takes_argmax() {
        let tax = taxonomy3();
        let m = matrix(&tax, &[[0.1, 0.3, 0.2, 0.0, 0.0]]);
        assert_eq!(resolve_regions(&m, &tax, TransitMode::Dp).unwrap().path, vec![1]);
    }

    #[test]
    fn missing_region_column_is_a_taxonomy_error() {
        let tax = taxonomy3();
        let m = ProbabilityMatrix::new("v", vec!["r0".into()], vec![0.5]).unwrap();
        assert!(matches!(resolve_regions(&m, &tax, TransitMode::Dp), Err(crate::Error::Taxonomy(_))));
    }

    #[test]
    fn landmark_gating_by_distance() {
        let tax = taxonomy3();
        // region r1 starts at frame 8; landmark at frame 5 is 3 frames early.
        let mut path = vec![0usize; 8];
        path.extend(vec![1usize; 8]);
        let mut b = BinaryMatrix::falses("v", tax.classes().to_vec(), 16);
        b.set(5, 3, true);
        b.set(10, 3, true);
        let kept = gate_landmarks(&b, &path, &tax, 5).unwrap();
        assert!(kept.get(5, 3) && kept.get(10, 3));
        let cut = gate_landmarks(&b, &path, &tax, 2).unwrap();
        assert!(!cut.get(5, 3) && cut.get(10, 3));
        let zero = gate_landmarks(&b, &[2usize; 16], &tax, 0).unwrap();
        assert!(!zero.get(10, 3));
    }

    #[test]
    fn binarize_cases() {
        let tax = taxonomy3();
        let m = matrix(
            &tax,
            &[
                [0.5, 0.5, 0.5, 0.5, 0.3],
                [0.5, 0.5, 0.5, 0.5, 0.6],
                [0.5, 0.5, 0.5, 0.5, 0.51],
            ],
        );
        let b = binarize(&m, &[0.0, 1.0 + 1e-9, 0.5, 0.5, 0.5]).unwrap();
        assert_eq!(b.column(4), vec![false, true, true]);
        assert_eq!(b.column(0), vec![true; 3]);
        assert_eq!(b.column(1), vec![false; 3]);
    }

    #[test]
    fn morphology_examples() {
        let mut a = bools("011011110");
        morph_column(&mut a, 3, 1);
        assert_eq!(a, bools("000011110"));
        let mut b = bools("111001111");
        morph_column(&mut b, 1, 3);
        assert_eq!(b, bools("111111111"));
        let mut c = vec![false; 7];
        morph_column(&mut c, 5, 5);
        assert_eq!(c, vec![false; 7]);
    }

    #[test]
    fn edge_gaps_are_not_closed() {
        let mut a = bools("0011100");
        close_column(&mut a, 9);
        assert_eq!(a, bools("0011100"));
    }

    #[test]
    fn coverage_restores_and_dedupes() {
        let tax = taxonomy3();
        let m = matrix(
            &tax,
            &[
                [0.7, 0.2, 0.1, 0.0, 0.0],
                [0.6, 0.3, 0.1, 0.0, 0.0],
                [0.2, 0.7, 0.1, 0.0, 0.0],
            ],
        );
        // frame 0 lost every region, frame 1 carries two
        let mut b = BinaryMatrix::falses("v", tax.classes().to_vec(), 3);
        b.set(1, 0, true);
        b.set(1, 1, true);
        b.set(2, 1, true);
        let out = ensure_coverage(&b, &m, &tax).unwrap();
        assert_eq!(out.column(0), vec![true, true, false]);
        assert_eq!(out.column(1), vec![false, false, true]);
        assert_eq!(out.column(2), vec![false; 3]);
        // already covered input is unchanged
        assert_eq!(ensure_coverage(&out, &m, &tax).unwrap(), out);
    }

    #[test]
    fn coverage_gap_switches_once() {
        let tax = taxonomy3();
        let rows: Vec<[f64; 5]> = (0..6)
            .map(|t| if t < 3 { [0.6, 0.1, 0.3, 0.0, 0.0] } else { [0.1, 0.2, 0.7, 0.0, 0.0] })
            .collect();
        let m = matrix(&tax, &rows);
        let mut b = BinaryMatrix::falses("v", tax.classes().to_vec(), 6);
        b.set(0, 0, true);
        b.set(5, 2, true);
        let out = ensure_coverage(&b, &m, &tax).unwrap();
        assert_eq!(out.column(0), bools("111000"));
        assert_eq!(out.column(2), bools("000111"));
    }

    #[test]
    fn per_label_runs() {
        let tax = taxonomy3();
        let mut b = BinaryMatrix::falses("v", tax.classes().to_vec(), 8);
        b.set_column(4, &bools("01110010"));
        let m = ProbabilityMatrix::filled("v", tax.classes().to_vec(), 8, 0.4).unwrap();
        let ev = extract_events_per_label(&b, &m).unwrap();
        let spans: Vec<(usize, usize)> = ev.events().iter().map(|e| (e.start, e.end)).collect();
        assert_eq!(spans, vec![(1, 4), (6, 7)]);
        assert!(ev.events().iter().all(|e| (e.score.unwrap() - 0.4).abs() < 1e-12));

        let none = BinaryMatrix::falses("v", tax.classes().to_vec(), 8);
        assert!(extract_events_per_label(&none, &m).unwrap().is_empty());
        let mut all = none.clone();
        all.set_column(4, &[true; 8]);
        let ev = extract_events_per_label(&all, &m).unwrap();
        assert_eq!((ev.events()[0].start, ev.events()[0].end), (0, 8));
    }

    #[test]
    fn tuple_mode_fragments_at_region_change() {
        let tax = taxonomy3();
        let mut b = BinaryMatrix::falses("v", tax.classes().to_vec(), 10);
        b.set_column(0, &bools("1111100000"));
        b.set_column(1, &bools("0000011111"));
        b.set_column(4, &[true; 10]);
        let m = ProbabilityMatrix::filled("v", tax.classes().to_vec(), 10, 0.9).unwrap();
        let ev = extract_events_tuple(&b, &m).unwrap();
        let path: Vec<(usize, usize)> = ev.of_label("path").map(|e| (e.start, e.end)).collect();
        assert_eq!(path, vec![(0, 5), (5, 10)]);
        // one active label throughout matches per-label output
        let mut single = BinaryMatrix::falses("v", tax.classes().to_vec(), 10);
        single.set_column(4, &bools("0011110110"));
        assert_eq!(
            extract_events_tuple(&single, &m).unwrap(),
            extract_events_per_label(&single, &m).unwrap()
        );
        let empty = BinaryMatrix::falses("v", tax.classes().to_vec(), 10);
        assert!(extract_events_tuple(&empty, &m).unwrap().is_empty());
    }

    #[test]
    fn uniform_input_covers_with_first_region() {
        let tax = LabelTaxonomy::bundled();
        let m = ProbabilityMatrix::filled("v", tax.classes().to_vec(), 50, 0.5).unwrap();
        let ev = decode(&m, &DecodeConfig::with_defaults(tax.clone())).unwrap();
        let regions: Vec<&Event> = ev.events().iter().filter(|e| tax.region_index(&e.label).unwrap().is_some()).collect();
        assert_eq!(regions.len(), 1);
        assert_eq!((regions[0].label.as_str(), regions[0].start, regions[0].end), ("mouth", 0, 50));
    }

    #[test]
    fn decode_modes_differ_on_pathology_crossing_regions() {
        let tax = taxonomy3();
        let rows: Vec<[f64; 5]> = (0..40)
            .map(|t| {
                let p = if (10..30).contains(&t) { 0.9 } else { 0.05 };
                if t < 20 {
                    [0.9, 0.05, 0.05, 0.0, p]
                } else {
                    [0.05, 0.9, 0.05, 0.0, p]
                }
            })
            .collect();
        let m = matrix(&tax, &rows);
        let per_label = DecodeConfig::with_defaults(tax.clone());
        let mut tuple = per_label.clone();
        tuple.event_mode = EventMode::Tuple;
        assert_eq!(decode(&m, &per_label).unwrap().of_label("path").count(), 1);
        assert!(decode(&m, &tuple).unwrap().of_label("path").count() >= 2);
    }
}
