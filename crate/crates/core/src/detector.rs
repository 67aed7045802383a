//! Proposal classifier: a frozen hand-designed feature extractor followed by
//! a single sigmoid unit whose weights are fitted by PSO under binary
//! cross-entropy.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::background::ForegroundMask;
use crate::frame::{Frame, FrameError};
use crate::geometry::{BoundingBox, Detection};
use crate::pso::{PsoConfig, PsoError, SwarmState};

/// 8x8 thumbnail, 16-bin histogram, aspect ratio, fill ratio.
pub const FEATURE_LEN: usize = 82;
const THUMB: usize = 8;
const SUBSAMPLES: usize = 4;
const HIST_BINS: usize = 16;
const MAX_ASPECT: f64 = 8.0;

/// Probability clamp used before taking logarithms in [`bce_loss`].
pub const BCE_EPS: f64 = 1e-7;
pub const DEFAULT_SCORE_THRESHOLD: f64 = 0.5;
pub const DEFAULT_EPOCHS: usize = 50;
const MODEL_MAGIC: &str = "VBSF1";

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("box ({x}, {y}, {w}, {h}) lies entirely outside the {width}x{height} frame")]
    BoxOutsideFrame {
        x: f64,
        y: f64,
        w: f64,
        h: f64,
        width: usize,
        height: usize,
    },
    #[error("mask is {mask_w}x{mask_h} but the frame is {frame_w}x{frame_h}")]
    MaskMismatch {
        mask_w: usize,
        mask_h: usize,
        frame_w: usize,
        frame_h: usize,
    },
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("empty input")]
    Empty,
    #[error("label {0} is not 0 or 1")]
    InvalidLabel(u8),
    #[error("single-class data: training needs both drone and non-drone samples")]
    SingleClass,
    #[error(
        "training needs a {expected}-dimensional parameter space, the PSO config has {actual}"
    )]
    ParameterDimension { expected: usize, actual: usize },
    #[error("malformed model file: {0}")]
    BadModel(String),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Pso(#[from] PsoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Option<Self> {
        (values.len() == FEATURE_LEN && values.iter().all(|v| v.is_finite()))
            .then_some(FeatureVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn thumbnail(&self) -> &[f64] {
        &self.0[..THUMB * THUMB]
    }

    pub fn histogram(&self) -> &[f64] {
        &self.0[THUMB * THUMB..THUMB * THUMB + HIST_BINS]
    }

    pub fn aspect(&self) -> f64 {
        self.0[FEATURE_LEN - 2]
    }

    pub fn fill(&self) -> f64 {
        self.0[FEATURE_LEN - 1]
    }
}

/// Integer pixel region `[x0, x1) x [y0, y1)` covered by `b`, clipped to the frame.
fn pixel_region(
    b: &BoundingBox,
    width: usize,
    height: usize,
) -> Option<(usize, usize, usize, usize)> {
    let x0 = b.x.floor().max(0.0);
    let y0 = b.y.floor().max(0.0);
    let x1 = b.right().ceil().min(width as f64);
    let y1 = b.bottom().ceil().min(height as f64);
    (x1 > x0 && y1 > y0).then_some((x0 as usize, y0 as usize, x1 as usize, y1 as usize))
}

/// Feature vector for the patch under `bbox`. Without a mask the fill ratio is 0.5.
pub fn extract_features(
    f: &Frame,
    bbox: &BoundingBox,
    mask: Option<&ForegroundMask>,
) -> Result<FeatureVector, DetectorError> {
    f.require_gray()?;
    let (x0, y0, x1, y1) =
        pixel_region(bbox, f.width(), f.height()).ok_or(DetectorError::BoxOutsideFrame {
            x: bbox.x,
            y: bbox.y,
            w: bbox.w,
            h: bbox.h,
            width: f.width(),
            height: f.height(),
        })?;
    if let Some(m) = mask {
        if (m.width(), m.height()) != (f.width(), f.height()) {
            return Err(DetectorError::MaskMismatch {
                mask_w: m.width(),
                mask_h: m.height(),
                frame_w: f.width(),
                frame_h: f.height(),
            });
        }
    }
    let (rw, rh) = (x1 - x0, y1 - y0);
    let mut values = Vec::with_capacity(FEATURE_LEN);

    let grid = THUMB * SUBSAMPLES;
    for cy in 0..THUMB {
        for cx in 0..THUMB {
            let mut acc = 0u32;
            for sy in 0..SUBSAMPLES {
                let py = y0 + ((cy * SUBSAMPLES + sy) * rh) / grid;
                for sx in 0..SUBSAMPLES {
                    let px = x0 + ((cx * SUBSAMPLES + sx) * rw) / grid;
                    acc += f.at(px, py) as u32;
                }
            }
            values.push(acc as f64 / (255.0 * (SUBSAMPLES * SUBSAMPLES) as f64));
        }
    }

    let mut hist = [0usize; HIST_BINS];
    let mut fill = 0usize;
    for y in y0..y1 {
        for x in x0..x1 {
            hist[f.at(x, y) as usize * HIST_BINS / 256] += 1;
            if mask.is_some_and(|m| m.get(x, y)) {
                fill += 1;
            }
        }
    }
    let n = (rw * rh) as f64;
    values.extend(hist.iter().map(|&c| c as f64 / n));
    values.push((bbox.w / bbox.h).clamp(0.0, MAX_ASPECT) / MAX_ASPECT);
    values.push(if mask.is_some() { fill as f64 / n } else { 0.5 });
    Ok(FeatureVector(values))
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    // keep the result strictly inside (0, 1) even where exp under/overflows
    const ONE_MINUS: f64 = 1.0 - f64::EPSILON / 2.0;
    let s = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, ONE_MINUS)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmoidClassifier {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl Default for SigmoidClassifier {
    fn default() -> Self {
        Self::zero()
    }
}

impl SigmoidClassifier {
    pub fn zero() -> Self {
        SigmoidClassifier {
            weights: vec![0.0; FEATURE_LEN],
            bias: 0.0,
        }
    }

    /// Classifier from a flat `[w_0 .. w_81, bias]` parameter vector.
    pub fn from_params(params: &[f64]) -> Option<Self> {
        (params.len() == FEATURE_LEN + 1).then(|| SigmoidClassifier {
            weights: params[..FEATURE_LEN].to_vec(),
            bias: params[FEATURE_LEN],
        })
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.push(self.bias);
        p
    }

    pub fn logit(&self, x: &FeatureVector) -> f64 {
        logit(&self.weights, self.bias, x.values())
    }

    pub fn predict(&self, x: &FeatureVector) -> f64 {
        sigmoid(self.logit(x))
    }

    /// Plain-text model: magic line, feature dimension, one weight per line, then the bias.
    pub fn to_text(&self) -> String {
        let mut s = format!("{MODEL_MAGIC}\n{}\n", self.weights.len());
        for w in &self.weights {
            writeln!(s, "{w}").unwrap();
        }
        writeln!(s, "{}", self.bias).unwrap();
        s
    }

    pub fn from_text(text: &str) -> Result<Self, DetectorError> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        if lines.next() != Some(MODEL_MAGIC) {
            return Err(DetectorError::BadModel(format!(
                "missing {MODEL_MAGIC} header"
            )));
        }
        let dim: usize = lines
            .next()
            .and_then(|l| l.parse().ok())
            .ok_or_else(|| DetectorError::BadModel("missing dimension count".into()))?;
        if dim != FEATURE_LEN {
            return Err(DetectorError::BadModel(format!(
                "dimension {dim}, expected {FEATURE_LEN}"
            )));
        }
        let params = lines
            .map(|l| {
                l.parse::<f64>()
                    .map_err(|e| DetectorError::BadModel(format!("{l:?}: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if params.len() != dim + 1 || params.iter().any(|p| !p.is_finite()) {
            return Err(DetectorError::BadModel(format!(
                "expected {} finite parameters, found {}",
                dim + 1,
                params.len()
            )));
        }
        Ok(Self::from_params(&params).expect("length checked"))
    }

    pub fn save(&self, path: &Path) -> Result<(), DetectorError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DetectorError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

#[inline]
fn logit(weights: &[f64], bias: f64, x: &[f64]) -> f64 {
    weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + bias
}

/// Mean binary cross-entropy with scores clamped into `[eps, 1 - eps]`.
pub fn bce_loss(scores: &[f64], labels: &[u8]) -> Result<f64, DetectorError> {
    if scores.len() != labels.len() {
        return Err(DetectorError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(DetectorError::Empty);
    }
    let mut total = 0.0;
    for (&s, &y) in scores.iter().zip(labels) {
        let s = s.clamp(BCE_EPS, 1.0 - BCE_EPS);
        total += match y {
            1 => -s.ln(),
            0 => -(1.0 - s).ln(),
            other => return Err(DetectorError::InvalidLabel(other)),
        };
    }
    Ok(total / scores.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPatch {
    pub features: FeatureVector,
    /// 1 for drone, 0 otherwise.
    pub label: u8,
}

/// PSO settings for training: 83 parameters in `[-30, 30]`, steps capped at 3 per
/// iteration, 40 particles, 50 iterations.
pub fn default_training_config() -> PsoConfig {
    PsoConfig::cube(FEATURE_LEN + 1, -WEIGHT_BOUND, WEIGHT_BOUND)
        .with_vmax(vec![WEIGHT_STEP; FEATURE_LEN + 1])
        .with_swarm_size(40)
        .with_iterations(DEFAULT_EPOCHS)
}

const WEIGHT_BOUND: f64 = 30.0;
// Uncapped steps of up to the full box width keep most particles pinned to the walls.
const WEIGHT_STEP: f64 = 3.0;

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub classifier: SigmoidClassifier,
    /// Training BCE of the global best after each iteration.
    pub loss_history: Vec<f64>,
    /// Training accuracy (threshold 0.5) of the global best after each iteration.
    pub accuracy_history: Vec<f64>,
}

fn dataset_loss(params: &[f64], data: &[LabeledPatch]) -> f64 {
    let (w, b) = params.split_at(FEATURE_LEN);
    let total: f64 = data
        .iter()
        .map(|p| {
            let s = sigmoid(logit(w, b[0], p.features.values())).clamp(BCE_EPS, 1.0 - BCE_EPS);
            if p.label == 1 {
                -s.ln()
            } else {
                -(1.0 - s).ln()
            }
        })
        .sum();
    total / data.len() as f64
}

pub fn accuracy(c: &SigmoidClassifier, data: &[LabeledPatch]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let correct = data
        .iter()
        .filter(|p| (c.predict(&p.features) >= 0.5) == (p.label == 1))
        .count();
    correct as f64 / data.len() as f64
}

/// Fits the sigmoid layer by minimizing BCE with PSO. One particle starts at
/// the zero classifier, so the result never does worse than predicting 0.5.
pub fn train(data: &[LabeledPatch], cfg: &PsoConfig) -> Result<TrainOutcome, DetectorError> {
    if data.is_empty() {
        return Err(DetectorError::Empty);
    }
    if let Some(p) = data.iter().find(|p| p.label > 1) {
        return Err(DetectorError::InvalidLabel(p.label));
    }
    let positives = data.iter().filter(|p| p.label == 1).count();
    if positives == 0 || positives == data.len() {
        return Err(DetectorError::SingleClass);
    }
    if cfg.dim() != FEATURE_LEN + 1 {
        return Err(DetectorError::ParameterDimension {
            expected: FEATURE_LEN + 1,
            actual: cfg.dim(),
        });
    }
    let objective = |params: &[f64]| dataset_loss(params, data);
    let mut swarm = SwarmState::new(&objective, cfg, &[vec![0.0; FEATURE_LEN + 1]])?;
    let mut loss_history = Vec::with_capacity(cfg.max_iterations);
    let mut accuracy_history = Vec::with_capacity(cfg.max_iterations);
    for _ in 0..cfg.max_iterations {
        swarm.iterate(&objective, cfg)?;
        let c = SigmoidClassifier::from_params(&swarm.gbest_position).expect("83 parameters");
        loss_history.push(swarm.gbest_value);
        accuracy_history.push(accuracy(&c, data));
        log::debug!(
            "iteration {}: loss {:.6}",
            swarm.iteration,
            swarm.gbest_value
        );
    }
    let classifier = SigmoidClassifier::from_params(&swarm.gbest_position).expect("83 parameters");
    Ok(TrainOutcome {
        classifier,
        loss_history,
        accuracy_history,
    })
}

/// Scores every proposal and keeps those at or above `score_threshold`,
/// highest score first.
pub fn detect(
    f: &Frame,
    proposals: &[BoundingBox],
    c: &SigmoidClassifier,
    score_threshold: f64,
    mask: Option<&ForegroundMask>,
) -> Result<Vec<Detection>, DetectorError> {
    let mut out = Vec::new();
    for b in proposals {
        let features = match extract_features(f, b, mask) {
            Ok(v) => v,
            Err(DetectorError::BoxOutsideFrame { .. }) => continue,
            Err(e) => return Err(e),
        };
        let score = c.predict(&features);
        if score >= score_threshold {
            out.push(Detection::drone(*b, score));
        }
    }
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(out)
}
