//! Diverse head ensemble: lightweight multi-label classifier heads over fixed
//! backbone features, each trained with its own imbalance-aware loss.
//!
//! Loss definitions, with `p = sigmoid(z)` per class and the loss summed over classes:
//!
//! * `bce_pos_weight`: `-(w * y * ln p + (1 - y) * ln(1 - p))`
//! * `focal(g)`:       `-(y * (1 - p)^g * ln p + (1 - y) * p^g * ln(1 - p))`
//! * `asymmetric(g+, g-, m)`: positives `-(1 - p)^g+ * ln p`; negatives use the
//!   shifted probability `pm = max(p - m, 0)` and contribute `-pm^g- * ln(1 - pm)`.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus_io::{read_container, write_container, BinaryMatrix, FeatureTable, ProbabilityMatrix};
use crate::error::{bail, Error, Result};

const HEAD_MAGIC: &[u8; 4] = b"VHED";
const HEAD_VERSION: u32 = 1;
const POS_WEIGHT_RANGE: (f64, f64) = (1.0, 100.0);
const MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    BcePosWeight,
    Focal { gamma: f64 },
    Asymmetric { gamma_pos: f64, gamma_neg: f64, clip: f64 },
}

impl LossKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LossKind::BcePosWeight => Ok(()),
            LossKind::Focal { gamma } if gamma >= 0.0 => Ok(()),
            LossKind::Asymmetric { gamma_pos, gamma_neg, clip }
                if gamma_pos >= 0.0 && gamma_neg >= 0.0 && (0.0..1.0).contains(&clip) =>
            {
                Ok(())
            }
            other => bail!(Validation, "invalid loss parameters {other:?}"),
        }
    }

    fn short_name(&self) -> &'static str {
        match self {
            LossKind::BcePosWeight => "bce",
            LossKind::Focal { .. } => "focal",
            LossKind::Asymmetric { .. } => "asl",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Linear,
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub architecture: Architecture,
    pub loss: LossKind,
    pub learn_rate: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if let Architecture::Mlp { hidden: 0 } = self.architecture {
            bail!(Validation, "mlp hidden width must be >= 1");
        }
        if !(self.learn_rate > 0.0) || !self.learn_rate.is_finite() {
            bail!(Validation, "learn rate must be positive, got {}", self.learn_rate);
        }
        if self.batch == 0 {
            bail!(Validation, "batch size must be >= 1");
        }
        Ok(())
    }

    pub fn display_name(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        match self.architecture {
            Architecture::Linear => format!("linear_{}", self.loss.short_name()),
            Architecture::Mlp { hidden } => format!("mlp{hidden}_{}", self.loss.short_name()),
        }
    }
}

/// The five-head default ensemble for one backbone.
pub fn default_ensemble(seed: u64) -> Vec<HeadConfig> {
    let asl = LossKind::Asymmetric { gamma_pos: 0.0, gamma_neg: 4.0, clip: 0.05 };
    let specs = [
        (Architecture::Linear, LossKind::BcePosWeight),
        (Architecture::Linear, LossKind::Focal { gamma: 2.0 }),
        (Architecture::Linear, asl),
        (Architecture::Mlp { hidden: 256 }, LossKind::BcePosWeight),
        (Architecture::Mlp { hidden: 256 }, asl),
    ];
    specs
        .into_iter()
        .enumerate()
        .map(|(i, (architecture, loss))| HeadConfig {
            name: None,
            architecture,
            loss,
            learn_rate: 0.05,
            epochs: 5,
            batch: 256,
            seed: seed.wrapping_add(i as u64),
        })
        .collect()
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Loss and d(loss)/d(logit) for one class.
#[inline]
fn class_loss(kind: &LossKind, z: f64, y: bool, pos_weight: f64) -> (f64, f64) {
    let p = sigmoid(z);
    let q = sigmoid(-z);
    let ln_p = -softplus(-z);
    let ln_q = -softplus(z);
    match *kind {
        LossKind::BcePosWeight => {
            if y {
                (-pos_weight * ln_p, -pos_weight * q)
            } else {
                (-ln_q, p)
            }
        }
        LossKind::Focal { gamma } => focal_term(gamma, p, q, ln_p, ln_q, y),
        LossKind::Asymmetric { gamma_pos, gamma_neg, clip } => {
            if y {
                focal_term(gamma_pos, p, q, ln_p, ln_q, true)
            } else if clip == 0.0 {
                focal_term(gamma_neg, p, q, ln_p, ln_q, false)
            } else {
                let pm = p - clip;
                if pm <= 0.0 {
                    return (0.0, 0.0);
                }
                let ln_qm = (-pm).ln_1p();
                let loss = -pm.powf(gamma_neg) * ln_qm;
                // d/dpm, times dpm/dz = p * q
                let mut d = pm.powf(gamma_neg) / (1.0 - pm);
                if gamma_neg > 0.0 {
                    d -= gamma_neg * pm.powf(gamma_neg - 1.0) * ln_qm;
                }
                (loss, d * p * q)
            }
        }
    }
}

#[inline]
fn focal_term(gamma: f64, p: f64, q: f64, ln_p: f64, ln_q: f64, y: bool) -> (f64, f64) {
    if y {
        let w = q.powf(gamma);
        (-w * ln_p, gamma * p * w * ln_p - w * q)
    } else {
        let w = p.powf(gamma);
        (-w * ln_q, -gamma * w * q * ln_q + w * p)
    }
}

/// Summed loss over classes and its gradient with respect to the logits.
///
/// `pos_weight` is only read by [`LossKind::BcePosWeight`].
pub fn loss_and_gradient(
    kind: &LossKind,
    logits: &[f64],
    targets: &[bool],
    pos_weight: &[f64],
) -> Result<(f64, Vec<f64>)> {
    if logits.len() != targets.len() || logits.len() != pos_weight.len() {
        bail!(
            Shape,
            "logits ({}), targets ({}) and pos_weight ({}) lengths differ",
            logits.len(),
            targets.len(),
            pos_weight.len()
        );
    }
    if logits.iter().any(|z| !z.is_finite()) {
        bail!(Numeric, "non-finite logit");
    }
    let mut grad = Vec::with_capacity(logits.len());
    let mut total = 0.0;
    for ((&z, &y), &w) in logits.iter().zip(targets).zip(pos_weight) {
        let (l, g) = class_loss(kind, z, y, w);
        total += l;
        grad.push(g);
    }
    if !total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        bail!(Numeric, "loss evaluation produced a non-finite value");
    }
    Ok((total, grad))
}

/// Dense layer `out = W x + b`, `W` stored row-major as `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn xavier(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let mut layer = Self::zeros(inputs, outputs);
        for w in &mut layer.weights {
            *w = rng.random_range(-limit..limit);
        }
        layer
    }

    #[inline]
    fn forward(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(self.inputs).zip(&self.bias))
        {
            *o = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// A fitted head: input standardization plus one or two dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedHead {
    pub config: HeadConfig,
    pub class_names: Vec<String>,
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub layers: Vec<DenseLayer>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingStats {
    /// Mean per-frame loss over the training set before the first update.
    pub initial_loss: f64,
    /// Mean per-frame loss over the training set after the last epoch.
    pub final_loss: f64,
    /// Mean batch loss seen during each epoch.
    pub epoch_losses: Vec<f64>,
    pub pos_weight: Vec<f64>,
}

impl TrainedHead {
    /// A head of the given shape with every parameter zero.
    pub fn zeroed(config: HeadConfig, class_names: Vec<String>, input_dim: usize) -> Self {
        let c = class_names.len();
        let layers = match config.architecture {
            Architecture::Linear => vec![DenseLayer::zeros(input_dim, c)],
            Architecture::Mlp { hidden } => vec![DenseLayer::zeros(input_dim, hidden), DenseLayer::zeros(hidden, c)],
        };
        Self {
            config,
            class_names,
            input_mean: vec![0.0; input_dim],
            input_scale: vec![1.0; input_dim],
            layers,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_mean.len()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    fn standardize(&self, row: &[f32], out: &mut [f64]) {
        for ((o, &x), (m, s)) in out.iter_mut().zip(row).zip(self.input_mean.iter().zip(&self.input_scale)) {
            *o = (f64::from(x) - m) * s;
        }
    }

    /// Logits for one standardized input row; `hidden` receives post-ReLU activations.
    fn logits(&self, x: &[f64], hidden: &mut Vec<f64>, out: &mut [f64]) {
        match self.layers.as_slice() {
            [linear] => linear.forward(x, out),
            [first, second] => {
                hidden.resize(first.outputs, 0.0);
                first.forward(x, hidden);
                for h in hidden.iter_mut() {
                    *h = h.max(0.0);
                }
                second.forward(hidden, out);
            }
            _ => unreachable!("heads have one or two layers"),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut buf = Vec::new();
        self.write_to(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut bytes.as_slice())
    }

    /// `VHED | u32 version | u32 preamble length | preamble JSON`, then one
    /// container each for mean, scale, and every layer's weights and bias.
    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let preamble = serde_json::to_vec(&HeadPreamble {
            config: self.config.clone(),
            class_names: self.class_names.clone(),
            input_dim: self.input_dim(),
            layer_shapes: self.layers.iter().map(|l| (l.outputs, l.inputs)).collect(),
        })
        .map_err(std::io::Error::other)?;
        w.write_all(HEAD_MAGIC)?;
        w.write_all(&HEAD_VERSION.to_le_bytes())?;
        w.write_all(&(preamble.len() as u32).to_le_bytes())?;
        w.write_all(&preamble)?;
        let f = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<_>>();
        write_container(w, 1, self.input_dim(), f(&self.input_mean))?;
        write_container(w, 1, self.input_dim(), f(&self.input_scale))?;
        for l in &self.layers {
            write_container(w, l.outputs, l.inputs, f(&l.weights))?;
            write_container(w, 1, l.outputs, f(&l.bias))?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut head = [0u8; 12];
        r.read_exact(&mut head)
            .map_err(|e| Error::Format(format!("truncated head file: {e}")))?;
        if &head[0..4] != HEAD_MAGIC {
            bail!(Format, "not a head parameter file");
        }
        let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
        if version != HEAD_VERSION {
            bail!(Format, "unsupported head file version {version}");
        }
        let len = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
        let mut preamble = vec![0u8; len];
        r.read_exact(&mut preamble)
            .map_err(|e| Error::Format(format!("truncated head preamble: {e}")))?;
        let pre: HeadPreamble = serde_json::from_slice(&preamble)?;
        pre.config.validate()?;
        let vector = |r: &mut R, n: usize| -> Result<Vec<f64>> {
            let (rows, cols, v) = read_container(r)?;
            if rows != 1 || cols != n {
                bail!(Format, "expected a 1x{n} block, found {rows}x{cols}");
            }
            Ok(v.into_iter().map(f64::from).collect())
        };
        let input_mean = vector(r, pre.input_dim)?;
        let input_scale = vector(r, pre.input_dim)?;
        let mut layers = Vec::new();
        for &(outputs, inputs) in &pre.layer_shapes {
            let (rows, cols, w) = read_container(r)?;
            if rows != outputs || cols != inputs {
                bail!(Format, "layer block is {rows}x{cols}, preamble says {outputs}x{inputs}");
            }
            let bias = vector(r, outputs)?;
            layers.push(DenseLayer {
                inputs,
                outputs,
                weights: w.into_iter().map(f64::from).collect(),
                bias,
            });
        }
        let expected = TrainedHead::zeroed(pre.config.clone(), pre.class_names.clone(), pre.input_dim);
        let shapes_match = expected.layers.len() == layers.len()
            && expected
                .layers
                .iter()
                .zip(&layers)
                .all(|(a, b)| a.inputs == b.inputs && a.outputs == b.outputs);
        if !shapes_match {
            bail!(Format, "layer shapes do not match the head architecture");
        }
        Ok(Self {
            config: pre.config,
            class_names: pre.class_names,
            input_mean,
            input_scale,
            layers,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct HeadPreamble {
    config: HeadConfig,
    class_names: Vec<String>,
    input_dim: usize,
    layer_shapes: Vec<(usize, usize)>,
}

/// `(#negative / #positive)` per class, clamped to `[1, 100]`; 1 for classes without positives.
pub fn compute_pos_weight(labels: &[BinaryMatrix]) -> Vec<f64> {
    let c = labels.first().map_or(0, BinaryMatrix::num_classes);
    let mut pos = vec![0usize; c];
    let mut total = 0usize;
    for m in labels {
        total += m.frames();
        for (i, &v) in m.values().iter().enumerate() {
            pos[i % c] += v as usize;
        }
    }
    pos.iter()
        .map(|&p| {
            if p == 0 {
                1.0
            } else {
                ((total - p) as f64 / p as f64).clamp(POS_WEIGHT_RANGE.0, POS_WEIGHT_RANGE.1)
            }
        })
        .collect()
}

struct Sample<'a> {
    x: &'a [f32],
    y: &'a [bool],
}

fn gather<'a>(features: &'a [FeatureTable], labels: &'a [BinaryMatrix]) -> Result<(usize, Vec<String>, Vec<Sample<'a>>)> {
    if features.len() != labels.len() || features.is_empty() {
        bail!(Shape, "{} feature tables vs {} label matrices", features.len(), labels.len());
    }
    let dim = features[0].dim();
    let classes = labels[0].class_names().to_vec();
    let mut samples = Vec::new();
    for (f, l) in features.iter().zip(labels) {
        if f.dim() != dim {
            bail!(Shape, "video `{}` has feature width {}, expected {dim}", f.video_id, f.dim());
        }
        if f.frames() != l.frames() {
            bail!(Shape, "video `{}`: {} feature frames vs {} label frames", f.video_id, f.frames(), l.frames());
        }
        if l.class_names() != classes.as_slice() {
            bail!(Shape, "video `{}` label columns differ", l.video_id);
        }
        let c = classes.len();
        for t in 0..f.frames() {
            samples.push(Sample {
                x: f.row(t),
                y: &l.values()[t * c..(t + 1) * c],
            });
        }
    }
    Ok((dim, classes, samples))
}

fn standardization(dim: usize, samples: &[Sample]) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len() as f64;
    let mut mean = vec![0.0; dim];
    for s in samples {
        for (m, &x) in mean.iter_mut().zip(s.x) {
            *m += f64::from(x);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for s in samples {
        for ((v, &x), m) in var.iter_mut().zip(s.x).zip(&mean) {
            let d = f64::from(x) - m;
            *v += d * d;
        }
    }
    let scale = var
        .iter()
        .map(|v| {
            let sd = (v / n).sqrt();
            if sd > 1e-12 {
                1.0 / sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

/// Working buffers and gradient accumulators for one head.
struct Workspace {
    x: Vec<f64>,
    hidden: Vec<f64>,
    logits: Vec<f64>,
    grads: Vec<DenseLayer>,
}

impl Workspace {
    fn new(head: &TrainedHead) -> Self {
        Self {
            x: vec![0.0; head.input_dim()],
            hidden: Vec::new(),
            logits: vec![0.0; head.num_classes()],
            grads: head.layers.iter().map(|l| DenseLayer::zeros(l.inputs, l.outputs)).collect(),
        }
    }
}

/// Runs one sample forward and, when `accumulate`, adds its parameter gradient.
fn step_sample(
    head: &TrainedHead,
    ws: &mut Workspace,
    sample: &Sample,
    pos_weight: &[f64],
    accumulate: bool,
) -> f64 {
    head.standardize(sample.x, &mut ws.x);
    head.logits(&ws.x, &mut ws.hidden, &mut ws.logits);
    let mut loss = 0.0;
    for (c, z) in ws.logits.iter_mut().enumerate() {
        let (l, g) = class_loss(&head.config.loss, *z, sample.y[c], pos_weight[c]);
        loss += l;
        *z = g; // reuse as d(loss)/d(logit)
    }
    if !accumulate {
        return loss;
    }
    let dz = &ws.logits;
    match head.layers.as_slice() {
        [_] => {
            let g = &mut ws.grads[0];
            for (c, &d) in dz.iter().enumerate() {
                g.bias[c] += d;
                for (gw, &x) in g.weights[c * g.inputs..(c + 1) * g.inputs].iter_mut().zip(&ws.x) {
                    *gw += d * x;
                }
            }
        }
        [_, second] => {
            let (g1, g2) = ws.grads.split_at_mut(1);
            let (g1, g2) = (&mut g1[0], &mut g2[0]);
            let hdim = second.inputs;
            let mut dh = vec![0.0; hdim];
            for (c, &d) in dz.iter().enumerate() {
                g2.bias[c] += d;
                let row = &second.weights[c * hdim..(c + 1) * hdim];
                for (j, (gw, &h)) in g2.weights[c * hdim..(c + 1) * hdim]
                    .iter_mut()
                    .zip(&ws.hidden)
                    .enumerate()
                {
                    *gw += d * h;
                    dh[j] += d * row[j];
                }
            }
            for (j, d) in dh.into_iter().enumerate() {
                if ws.hidden[j] <= 0.0 || d == 0.0 {
                    continue;
                }
                g1.bias[j] += d;
                for (gw, &x) in g1.weights[j * g1.inputs..(j + 1) * g1.inputs].iter_mut().zip(&ws.x) {
                    *gw += d * x;
                }
            }
        }
        _ => unreachable!(),
    }
    loss
}

fn mean_loss(head: &TrainedHead, samples: &[Sample], pos_weight: &[f64]) -> f64 {
    let mut ws = Workspace::new(head);
    samples
        .iter()
        .map(|s| step_sample(head, &mut ws, s, pos_weight, false))
        .sum::<f64>()
        / samples.len().max(1) as f64
}

/// Trains one head with mini-batch momentum SGD; deterministic given `config.seed`.
pub fn train_head(features: &[FeatureTable], labels: &[BinaryMatrix], config: &HeadConfig) -> Result<TrainedHead> {
    train_head_with_stats(features, labels, config).map(|(h, _)| h)
}

pub fn train_head_with_stats(
    features: &[FeatureTable],
    labels: &[BinaryMatrix],
    config: &HeadConfig,
) -> Result<(TrainedHead, TrainingStats)> {
    config.validate()?;
    let (dim, classes, samples) = gather(features, labels)?;
    let c = classes.len();
    let pos_weight = compute_pos_weight(labels);
    let (input_mean, input_scale) = standardization(dim, &samples);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let layers = match config.architecture {
        Architecture::Linear => vec![DenseLayer::xavier(dim, c, &mut rng)],
        Architecture::Mlp { hidden } => vec![
            DenseLayer::xavier(dim, hidden, &mut rng),
            DenseLayer::xavier(hidden, c, &mut rng),
        ],
    };
    let mut head = TrainedHead {
        config: config.clone(),
        class_names: classes,
        input_mean,
        input_scale,
        layers,
    };
    quantize(&mut head);
    let initial_loss = mean_loss(&head, &samples, &pos_weight);
    if config.epochs == 0 {
        return Ok((
            head,
            TrainingStats {
                initial_loss,
                final_loss: initial_loss,
                epoch_losses: Vec::new(),
                pos_weight,
            },
        ));
    }

    let mut velocity: Vec<DenseLayer> = head.layers.iter().map(|l| DenseLayer::zeros(l.inputs, l.outputs)).collect();
    let mut ws = Workspace::new(&head);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch) {
            for g in &mut ws.grads {
                g.weights.iter_mut().for_each(|v| *v = 0.0);
                g.bias.iter_mut().for_each(|v| *v = 0.0);
            }
            for &i in batch {
                epoch_loss += step_sample(&head, &mut ws, &samples[i], &pos_weight, true);
            }
            let scale = config.learn_rate / batch.len() as f64;
            for ((layer, vel), grad) in head.layers.iter_mut().zip(&mut velocity).zip(&ws.grads) {
                for ((p, v), g) in layer
                    .weights
                    .iter_mut()
                    .chain(layer.bias.iter_mut())
                    .zip(vel.weights.iter_mut().chain(vel.bias.iter_mut()))
                    .zip(grad.weights.iter().chain(&grad.bias))
                {
                    *v = MOMENTUM * *v - scale * g;
                    *p += *v;
                }
            }
        }
        epoch_losses.push(epoch_loss / samples.len() as f64);
        if head.layers.iter().any(|l| !l.is_finite()) {
            bail!(Numeric, "training `{}` diverged", config.display_name());
        }
    }
    quantize(&mut head);
    let final_loss = mean_loss(&head, &samples, &pos_weight);
    Ok((
        head,
        TrainingStats {
            initial_loss,
            final_loss,
            epoch_losses,
            pos_weight,
        },
    ))
}

/// Rounds parameters to f32 so that a saved head reloads bit-identically.
fn quantize(head: &mut TrainedHead) {
    let q = |v: &mut f64| *v = f64::from(*v as f32);
    head.input_mean.iter_mut().for_each(q);
    head.input_scale.iter_mut().for_each(q);
    for l in &mut head.layers {
        l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(q);
    }
}

/// Per-frame class probabilities from a trained head.
pub fn predict(head: &TrainedHead, features: &FeatureTable) -> Result<ProbabilityMatrix> {
    if features.dim() != head.input_dim() {
        bail!(Shape, "features have width {}, head expects {}", features.dim(), head.input_dim());
    }
    let c = head.num_classes();
    let mut ws = Workspace::new(head);
    let mut values = Vec::with_capacity(features.frames() * c);
    for t in 0..features.frames() {
        head.standardize(features.row(t), &mut ws.x);
        head.logits(&ws.x, &mut ws.hidden, &mut ws.logits);
        values.extend(ws.logits.iter().map(|&z| sigmoid(z)));
    }
    Ok(ProbabilityMatrix::from_parts(
        features.video_id.clone(),
        head.class_names.clone(),
        values,
    ))
}
