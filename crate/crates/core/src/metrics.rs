//! Classification metrics: confusion counts, accuracy/precision/recall/F1,
//! ROC curves with trapezoidal AUC, and seeded k-fold cross-validation.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::detector::{self, DetectorError, LabeledPatch};
use crate::pso::PsoConfig;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("empty input")]
    Empty,
    #[error("label {0} is not 0 or 1")]
    InvalidLabel(u8),
    #[error("ROC needs both positive and negative labels")]
    SingleClass,
    #[error("cannot split {n} samples into {k} folds")]
    TooFewSamples { n: usize, k: usize },
    #[error("k-fold needs k >= 2, got {0}")]
    TooFewFolds(usize),
    #[error("fold {fold}: training portion holds a single class")]
    SingleClassFold { fold: usize },
    #[error("fold {fold}: {source}")]
    Training { fold: usize, source: DetectorError },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }
}

fn check_pairs(scores: &[f64], labels: &[u8]) -> Result<(), MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(MetricsError::Empty);
    }
    match labels.iter().find(|&&l| l > 1) {
        Some(&l) => Err(MetricsError::InvalidLabel(l)),
        None => Ok(()),
    }
}

/// Counts outcomes with "positive" meaning `score >= threshold`.
pub fn confusion(
    scores: &[f64],
    labels: &[u8],
    threshold: f64,
) -> Result<ConfusionCounts, MetricsError> {
    check_pairs(scores, labels)?;
    let mut c = ConfusionCounts::default();
    for (&s, &l) in scores.iter().zip(labels) {
        c.add(s >= threshold, l == 1);
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when any ratio was 0/0 and reported as 0.
    pub degenerate: bool,
}

/// Harmonic mean of precision and recall; `None` when both are zero.
pub fn f1_score(precision: f64, recall: f64) -> Option<f64> {
    let denom = precision + recall;
    (denom > 0.0).then(|| 2.0 * precision * recall / denom)
}

pub fn metrics(c: &ConfusionCounts) -> Metrics {
    let mut degenerate = false;
    let mut ratio = |num: u64, den: u64| {
        if den == 0 {
            degenerate = true;
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let accuracy = ratio(c.tp + c.tn, c.total());
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = f1_score(precision, recall).unwrap_or_else(|| {
        degenerate = true;
        0.0
    });
    Metrics {
        accuracy,
        precision,
        recall,
        f1,
        degenerate,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve {
    /// From `(0, 0)` at threshold `+inf` to `(1, 1)`, thresholds decreasing.
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// ROC curve over every distinct score; tied scores move together.
pub fn roc(scores: &[f64], labels: &[u8]) -> Result<RocCurve, MetricsError> {
    check_pairs(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return Err(MetricsError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let prev = points.last().unwrap();
        let (fpr, tpr) = (fp / neg, tp / pos);
        auc += (fpr - prev.fpr) * (tpr + prev.tpr) / 2.0;
        points.push(RocPoint {
            threshold: s,
            fpr,
            tpr,
        });
    }
    Ok(RocCurve {
        points,
        auc: auc.clamp(0.0, 1.0),
    })
}

impl RocCurve {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "threshold,fpr,tpr")?;
        for p in &self.points {
            writeln!(out, "{},{},{}", p.threshold, p.fpr, p.tpr)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub k: usize,
    pub fold_of: Vec<usize>,
}

impl FoldAssignment {
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }

    pub fn members(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] == fold)
            .collect()
    }
}

/// Seeded shuffle followed by round-robin assignment.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<FoldAssignment, MetricsError> {
    if k < 2 {
        return Err(MetricsError::TooFewFolds(k));
    }
    if n < k {
        return Err(MetricsError::TooFewSamples { n, k });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0; n];
    for (pos, &sample) in order.iter().enumerate() {
        fold_of[sample] = pos % k;
    }
    Ok(FoldAssignment { k, fold_of })
}

#[derive(Debug, Clone, Serialize)]
pub struct FoldResult {
    pub fold: usize,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> MeanStd {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossValidation {
    pub folds: Vec<FoldResult>,
    pub accuracy: MeanStd,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
}

impl CrossValidation {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "fold,tp,fp,tn,fn,accuracy,precision,recall,f1")?;
        for f in &self.folds {
            let (c, m) = (&f.counts, &f.metrics);
            writeln!(
                out,
                "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6}",
                f.fold, c.tp, c.fp, c.tn, c.fn_, m.accuracy, m.precision, m.recall, m.f1
            )?;
        }
        for (name, pick) in [("mean", 0), ("std", 1)] {
            let v = |s: &MeanStd| if pick == 0 { s.mean } else { s.std };
            writeln!(
                out,
                "{name},,,,,{:.6},{:.6},{:.6},{:.6}",
                v(&self.accuracy),
                v(&self.precision),
                v(&self.recall),
                v(&self.f1)
            )?;
        }
        Ok(())
    }
}

/// Trains on each fold's complement and scores the held-out fold at 0.5.
/// The split uses `cfg.seed`; fold `i` trains with seed `cfg.seed + i`.
pub fn cross_validate(
    data: &[LabeledPatch],
    k: usize,
    cfg: &PsoConfig,
) -> Result<CrossValidation, MetricsError> {
    let split = kfold_split(data.len(), k, cfg.seed)?;
    for fold in 0..k {
        let train_labels = data
            .iter()
            .zip(&split.fold_of)
            .filter(|(_, &f)| f != fold)
            .map(|(p, _)| p.label);
        let positives = train_labels.clone().filter(|&l| l == 1).count();
        if positives == 0 || positives == train_labels.count() {
            return Err(MetricsError::SingleClassFold { fold });
        }
    }
    let folds = (0..k)
        .into_par_iter()
        .map(|fold| {
            let (train, test): (Vec<_>, Vec<_>) = data
                .iter()
                .zip(&split.fold_of)
                .partition(|(_, &f)| f != fold);
            let train: Vec<LabeledPatch> = train.into_iter().map(|(p, _)| p.clone()).collect();
            let fold_cfg = cfg.clone().with_seed(cfg.seed.wrapping_add(fold as u64));
            let model = detector::train(&train, &fold_cfg)
                .map_err(|source| MetricsError::Training { fold, source })?
                .classifier;
            let mut counts = ConfusionCounts::default();
            for (p, _) in test {
                counts.add(model.predict(&p.features) >= 0.5, p.label == 1);
            }
            Ok(FoldResult {
                fold,
                counts,
                metrics: metrics(&counts),
            })
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    let collect = |f: fn(&Metrics) -> f64| {
        MeanStd::of(&folds.iter().map(|r| f(&r.metrics)).collect::<Vec<_>>())
    };
    Ok(CrossValidation {
        accuracy: collect(|m| m.accuracy),
        precision: collect(|m| m.precision),
        recall: collect(|m| m.recall),
        f1: collect(|m| m.f1),
        folds,
    })
}

pub fn write_metrics_csv<W: Write>(
    c: &ConfusionCounts,
    m: &Metrics,
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "tp,fp,tn,fn,accuracy,precision,recall,f1,degenerate")?;
    writeln!(
        out,
        "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{}",
        c.tp, c.fp, c.tn, c.fn_, m.accuracy, m.precision, m.recall, m.f1, m.degenerate
    )
}

/// `epoch,loss,accuracy` rows for a training run.
pub fn write_training_csv<W: Write>(
    loss: &[f64],
    accuracy: &[f64],
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "epoch,loss,accuracy")?;
    for (i, (l, a)) in loss.iter().zip(accuracy).enumerate() {
        writeln!(out, "{},{},{}", i + 1, l, a)?;
    }
    Ok(())
}
