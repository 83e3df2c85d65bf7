//! Validation-guided weighted fusion.
//!
//! Heads of one backbone are combined per class with weights proportional to
//! their validation AP; backbones are combined with weights proportional to
//! their validation frame mAP; the fused matrix is then temperature scaled.

use serde::{Deserialize, Serialize};

use crate::corpus_io::{BinaryMatrix, ProbabilityMatrix};
use crate::error::{bail, Result};
use crate::metrics::{frame_ap_report, ApReport};

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logits.
pub const LOGIT_EPS: f64 = 1e-7;
pub const DEFAULT_TEMPERATURE_GRID: [f64; 7] = [0.5, 0.75, 1.0, 1.25, 1.5, 2.0, 3.0];

const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneWeights {
    pub name: String,
    pub beta: f64,
    pub heads: Vec<String>,
    /// `alpha[m][c]`: weight of head `m` for class `c`.
    pub alpha: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionProfile {
    pub class_names: Vec<String>,
    pub backbones: Vec<BackboneWeights>,
    pub temperature: f64,
}

impl FusionProfile {
    pub fn validate(&self) -> Result<()> {
        if self.backbones.is_empty() {
            bail!(Validation, "fusion profile has no backbones");
        }
        if !(self.temperature > 0.0) {
            bail!(Validation, "temperature must be positive, got {}", self.temperature);
        }
        let beta_sum: f64 = self.backbones.iter().map(|b| b.beta).sum();
        if (beta_sum - 1.0).abs() > SUM_TOLERANCE {
            bail!(Validation, "backbone weights sum to {beta_sum}");
        }
        for b in &self.backbones {
            if b.alpha.len() != b.heads.len() || b.heads.is_empty() {
                bail!(Validation, "backbone `{}` has {} heads but {} alpha rows", b.name, b.heads.len(), b.alpha.len());
            }
            for c in 0..self.class_names.len() {
                let s: f64 = b.alpha.iter().map(|row| row.get(c).copied().unwrap_or(f64::NAN)).sum();
                if (s - 1.0).abs() > SUM_TOLERANCE {
                    bail!(Validation, "head weights of `{}` for class `{}` sum to {s}", b.name, self.class_names[c]);
                }
            }
        }
        Ok(())
    }

    /// Uniform head and backbone weights, temperature 1.
    pub fn uniform(class_names: Vec<String>, backbones: &[(String, Vec<String>)]) -> Self {
        let nb = backbones.len() as f64;
        Self {
            backbones: backbones
                .iter()
                .map(|(name, heads)| BackboneWeights {
                    name: name.clone(),
                    beta: 1.0 / nb,
                    heads: heads.clone(),
                    alpha: uniform_alpha(heads.len(), class_names.len()),
                })
                .collect(),
            class_names,
            temperature: 1.0,
        }
    }

    /// Fuses per-backbone, per-head predictions of one video.
    ///
    /// `per_backbone[b][m]` must follow the order of `self.backbones[b].heads`.
    pub fn apply(&self, per_backbone: &[Vec<ProbabilityMatrix>]) -> Result<ProbabilityMatrix> {
        if per_backbone.len() != self.backbones.len() {
            bail!(Shape, "{} backbone inputs for {} profile backbones", per_backbone.len(), self.backbones.len());
        }
        let fused: Vec<ProbabilityMatrix> = per_backbone
            .iter()
            .zip(&self.backbones)
            .map(|(heads, w)| fuse_heads(heads, &w.alpha))
            .collect::<Result<_>>()?;
        let beta: Vec<f64> = self.backbones.iter().map(|b| b.beta).collect();
        temperature_scale(&fuse_backbones(&fused, &beta)?, self.temperature)
    }
}

fn uniform_alpha(heads: usize, classes: usize) -> Vec<Vec<f64>> {
    vec![vec![1.0 / heads as f64; classes]; heads]
}

/// Normalises validation AP per class into head weights.
///
/// `val_ap[m][c]` is head `m`'s AP for class `c` (`None` when the class has no
/// positives). Undefined entries count as zero; a class whose APs sum to zero
/// gets uniform weights.
pub fn head_weights(val_ap: &[Vec<Option<f64>>]) -> Result<Vec<Vec<f64>>> {
    let Some(first) = val_ap.first() else {
        bail!(Validation, "head weighting needs at least one head");
    };
    let classes = first.len();
    if val_ap.iter().any(|row| row.len() != classes) {
        bail!(Shape, "head AP rows have different class counts");
    }
    if let Some(bad) = val_ap.iter().flatten().flatten().find(|a| !(0.0..=1.0).contains(*a)) {
        bail!(Validation, "AP value {bad} outside [0, 1]");
    }
    let m = val_ap.len();
    let mut alpha = vec![vec![0.0; classes]; m];
    for c in 0..classes {
        let total: f64 = val_ap.iter().map(|row| row[c].unwrap_or(0.0)).sum();
        for (h, row) in val_ap.iter().enumerate() {
            alpha[h][c] = if total > 0.0 {
                row[c].unwrap_or(0.0) / total
            } else {
                1.0 / m as f64
            };
        }
    }
    Ok(alpha)
}

/// Normalises validation mAP per backbone; uniform when all are zero.
pub fn backbone_weights(val_map: &[f64]) -> Result<Vec<f64>> {
    if val_map.is_empty() {
        bail!(Validation, "backbone weighting needs at least one backbone");
    }
    if let Some(bad) = val_map.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        bail!(Validation, "mAP value {bad} outside [0, 1]");
    }
    let total: f64 = val_map.iter().sum();
    Ok(if total > 0.0 {
        val_map.iter().map(|v| v / total).collect()
    } else {
        vec![1.0 / val_map.len() as f64; val_map.len()]
    })
}

/// Per-class convex combination of head predictions: `alpha[m][c]`.
pub fn fuse_heads(per_head: &[ProbabilityMatrix], alpha: &[Vec<f64>]) -> Result<ProbabilityMatrix> {
    let Some(first) = per_head.first() else {
        bail!(Shape, "no head predictions to fuse");
    };
    if alpha.len() != per_head.len() {
        bail!(Shape, "{} heads but {} weight rows", per_head.len(), alpha.len());
    }
    let c = first.num_classes();
    for (h, row) in per_head.iter().zip(alpha) {
        first.same_shape(h)?;
        if row.len() != c {
            bail!(Shape, "weight row has {} entries for {c} classes", row.len());
        }
    }
    let mut values = vec![0.0; first.values().len()];
    for (h, row) in per_head.iter().zip(alpha) {
        for (i, (out, &p)) in values.iter_mut().zip(h.values()).enumerate() {
            *out += row[i % c] * p;
        }
    }
    values.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(ProbabilityMatrix::from_parts(first.video_id.clone(), first.class_names().to_vec(), values))
}

/// Convex combination of backbone-level predictions with weights `beta`.
pub fn fuse_backbones(per_backbone: &[ProbabilityMatrix], beta: &[f64]) -> Result<ProbabilityMatrix> {
    let c = per_backbone.first().map_or(0, ProbabilityMatrix::num_classes);
    let alpha: Vec<Vec<f64>> = beta.iter().map(|&b| vec![b; c]).collect();
    fuse_heads(per_backbone, &alpha)
}

#[inline]
pub fn logit(p: f64) -> f64 {
    let p = p.clamp(LOGIT_EPS, 1.0 - LOGIT_EPS);
    (p / (1.0 - p)).ln()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `sigmoid(logit(p) / T)` entrywise.
pub fn temperature_scale(probs: &ProbabilityMatrix, temperature: f64) -> Result<ProbabilityMatrix> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        bail!(Validation, "temperature must be positive and finite, got {temperature}");
    }
    Ok(probs.map(|p| sigmoid(logit(p) / temperature)))
}

/// Mean per-frame, per-class binary cross-entropy of `probs` against `gt`.
pub fn mean_bce(probs: &[ProbabilityMatrix], gt: &[BinaryMatrix]) -> Result<f64> {
    if probs.len() != gt.len() {
        bail!(Shape, "{} probability matrices vs {} label matrices", probs.len(), gt.len());
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for (p, g) in probs.iter().zip(gt) {
        if p.values().len() != g.values().len() {
            bail!(Shape, "video `{}` shapes differ", p.video_id);
        }
        for (&v, &y) in p.values().iter().zip(g.values()) {
            let v = v.clamp(LOGIT_EPS, 1.0 - LOGIT_EPS);
            total -= if y { v.ln() } else { (1.0 - v).ln() };
            n += 1;
        }
    }
    Ok(total / n.max(1) as f64)
}

/// Grid value minimising validation BCE after scaling; ties go to the value closest to 1.
pub fn fit_temperature(val_probs: &[ProbabilityMatrix], val_gt: &[BinaryMatrix], grid: &[f64]) -> Result<f64> {
    select_from_grid(grid, |t| {
        let scaled: Vec<ProbabilityMatrix> = val_probs
            .iter()
            .map(|p| temperature_scale(p, t))
            .collect::<Result<_>>()?;
        mean_bce(&scaled, val_gt)
    })
}

/// Picks the grid entry minimising `cost`, ties toward 1.
pub fn select_from_grid(grid: &[f64], mut cost: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    if grid.is_empty() {
        bail!(Validation, "temperature grid is empty");
    }
    let mut best: Option<(f64, f64)> = None;
    for &t in grid {
        if !(t > 0.0) {
            bail!(Validation, "temperature grid value {t} is not positive");
        }
        let c = cost(t)?;
        let better = match best {
            None => true,
            Some((bc, bt)) => c < bc || (c == bc && (t - 1.0).abs() < (bt - 1.0).abs()),
        };
        if better {
            best = Some((c, t));
        }
    }
    Ok(best.unwrap().1)
}

/// How head and backbone weights are derived when fitting a profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Validation,
    Uniform,
}

/// Validation predictions of one backbone's heads.
pub struct BackboneValidation<'a> {
    pub name: String,
    pub heads: Vec<String>,
    /// `per_video[v][m]`
    pub per_video: &'a [Vec<ProbabilityMatrix>],
}

/// Fits alpha and beta from validation predictions, leaving temperature at 1.
pub fn fit_weights(
    backbones: &[BackboneValidation],
    val_gt: &[BinaryMatrix],
    head_weighting: Weighting,
    backbone_weighting: Weighting,
) -> Result<FusionProfile> {
    let Some(class_names) = val_gt.first().map(|g| g.class_names().to_vec()) else {
        bail!(Validation, "fitting fusion weights needs validation videos");
    };
    let mut weights = Vec::with_capacity(backbones.len());
    let mut maps = Vec::with_capacity(backbones.len());
    for bb in backbones {
        if bb.per_video.len() != val_gt.len() {
            bail!(Shape, "backbone `{}` has {} validation videos, expected {}", bb.name, bb.per_video.len(), val_gt.len());
        }
        let head_reports: Vec<ApReport> = (0..bb.heads.len())
            .map(|m| {
                let probs: Vec<ProbabilityMatrix> = bb.per_video.iter().map(|v| v[m].clone()).collect();
                frame_ap_report(&probs, val_gt)
            })
            .collect::<Result<_>>()?;
        let alpha = match head_weighting {
            Weighting::Validation => {
                let aps: Vec<Vec<Option<f64>>> = head_reports.iter().map(|r| r.per_class_ap.clone()).collect();
                head_weights(&aps)?
            }
            Weighting::Uniform => uniform_alpha(bb.heads.len(), class_names.len()),
        };
        let fused: Vec<ProbabilityMatrix> = bb
            .per_video
            .iter()
            .map(|heads| fuse_heads(heads, &alpha))
            .collect::<Result<_>>()?;
        maps.push(frame_ap_report(&fused, val_gt)?.map.unwrap_or(0.0));
        weights.push(BackboneWeights {
            name: bb.name.clone(),
            beta: 0.0,
            heads: bb.heads.clone(),
            alpha,
        });
    }
    let beta = match backbone_weighting {
        Weighting::Validation => backbone_weights(&maps)?,
        Weighting::Uniform => vec![1.0 / backbones.len() as f64; backbones.len()],
    };
    for (w, b) in weights.iter_mut().zip(beta) {
        w.beta = b;
    }
    Ok(FusionProfile {
        class_names,
        backbones: weights,
        temperature: 1.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pm(values: Vec<f64>) -> ProbabilityMatrix {
        ProbabilityMatrix::new("v", vec!["a".into()], values).unwrap()
    }

    #[test]
    fn head_weights_normalise_ap() {
        let a = head_weights(&[vec![Some(0.2)], vec![Some(0.3)], vec![Some(0.5)]]).unwrap();
        let w: Vec<f64> = a.iter().map(|r| r[0]).collect();
        for (got, want) in w.iter().zip([0.2, 0.3, 0.5]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_aps_give_equal_weights() {
        let a = head_weights(&vec![vec![Some(0.7)]; 5]).unwrap();
        assert!(a.iter().all(|r| (r[0] - 0.2).abs() < 1e-12));
    }

    #[test]
    fn zero_or_undefined_aps_fall_back_to_uniform() {
        let a = head_weights(&[vec![Some(0.0), None], vec![Some(0.0), None]]).unwrap();
        assert!(a.iter().flatten().all(|&w| w == 0.5));
    }

    #[test]
    fn weighted_head_fusion() {
        let f = fuse_heads(&[pm(vec![0.2]), pm(vec![0.8])], &[vec![0.25], vec![0.75]]).unwrap();
        assert!((f.values()[0] - 0.65).abs() < 1e-12);
        let same = fuse_heads(&[pm(vec![0.3, 0.9]), pm(vec![0.3, 0.9])], &[vec![0.1], vec![0.9]]).unwrap();
        for (a, b) in same.values().iter().zip([0.3, 0.9]) {
            assert!((a - b).abs() < 1e-15);
        }
        let single = fuse_heads(&[pm(vec![0.3, 0.9])], &[vec![1.0]]).unwrap();
        assert_eq!(single.values(), &[0.3, 0.9]);
    }

    #[test]
    fn mismatched_heads_are_shape_errors() {
        assert!(fuse_heads(&[pm(vec![0.2]), pm(vec![0.2, 0.3])], &[vec![0.5], vec![0.5]]).is_err());
    }

    #[test]
    fn backbone_weight_cases() {
        let b = backbone_weights(&[0.45, 0.55]).unwrap();
        assert!((b[0] - 0.45).abs() < 1e-12 && (b[1] - 0.55).abs() < 1e-12);
        assert_eq!(backbone_weights(&[0.3]).unwrap(), vec![1.0]);
        assert_eq!(backbone_weights(&[0.4, 0.4]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(backbone_weights(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn backbone_fusion_cases() {
        let mean = fuse_backbones(&[pm(vec![0.4]), pm(vec![0.6])], &[0.5, 0.5]).unwrap();
        assert!((mean.values()[0] - 0.5).abs() < 1e-12);
        let sel = fuse_backbones(&[pm(vec![0.4]), pm(vec![0.6])], &[1.0, 0.0]).unwrap();
        assert_eq!(sel.values(), &[0.4]);
        let w = fuse_backbones(&[pm(vec![0.2]), pm(vec![0.8])], &[0.45, 0.55]).unwrap();
        assert!((w.values()[0] - 0.53).abs() < 1e-12);
    }

    #[test]
    fn temperature_cases() {
        let half = temperature_scale(&pm(vec![0.5]), 3.7).unwrap();
        assert!((half.values()[0] - 0.5).abs() < 1e-15);
        let s = temperature_scale(&pm(vec![sigmoid(2.0)]), 2.0).unwrap();
        assert!((s.values()[0] - sigmoid(1.0)).abs() < 1e-12);
        assert!((s.values()[0] - 0.731059).abs() < 1e-6);
        let id = temperature_scale(&pm(vec![0.01, 0.3, 0.999]), 1.0).unwrap();
        for (a, b) in id.values().iter().zip([0.01, 0.3, 0.999]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(temperature_scale(&pm(vec![0.5]), 0.0).is_err());
        assert!(temperature_scale(&pm(vec![0.5]), -1.0).is_err());
    }

    #[test]
    fn temperature_composition() {
        for &x in &[-6.0, -1.3, 0.4, 2.5, 5.0] {
            let once = temperature_scale(&temperature_scale(&pm(vec![sigmoid(x)]), 1.5).unwrap(), 2.0).unwrap();
            assert!((once.values()[0] - sigmoid(x / 3.0)).abs() < 1e-9);
        }
    }

    fn calibrated_set() -> (Vec<ProbabilityMatrix>, Vec<BinaryMatrix>) {
        // Each probability level p appears 10 times with exactly 10p positives.
        let mut probs = Vec::new();
        let mut labels = Vec::new();
        for (p, pos) in [(0.1, 1), (0.2, 2), (0.5, 5), (0.7, 7), (0.9, 9)] {
            for k in 0..10 {
                probs.push(p);
                labels.push(k < pos);
            }
        }
        (
            vec![pm(probs)],
            vec![BinaryMatrix::new("v", vec!["a".into()], labels).unwrap()],
        )
    }

    #[test]
    fn singleton_grid() {
        let (p, g) = calibrated_set();
        assert_eq!(fit_temperature(&p, &g, &[1.0]).unwrap(), 1.0);
        assert!(fit_temperature(&p, &g, &[]).is_err());
    }

    #[test]
    fn calibrated_inputs_keep_unit_temperature() {
        let (p, g) = calibrated_set();
        assert_eq!(fit_temperature(&p, &g, &[0.5, 1.0, 2.0]).unwrap(), 1.0);
    }

    #[test]
    fn overconfident_inputs_recover_temperature_two() {
        let (p, g) = calibrated_set();
        let sharpened: Vec<ProbabilityMatrix> = p.iter().map(|m| temperature_scale(m, 0.5).unwrap()).collect();
        assert_eq!(fit_temperature(&sharpened, &g, &[0.5, 1.0, 2.0]).unwrap(), 2.0);
    }
}
