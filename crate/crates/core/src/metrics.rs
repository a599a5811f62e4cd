//! Evaluation measures: quality/accuracy/robustness, success-curve AUC and
//! average overlap.
//!
//! Sequences where the target is never visible have no successes to count;
//! robustness and accuracy are defined as 1 there.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::mask::{BBox, BinaryMask};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Qar {
    pub quality: f64,
    pub accuracy: f64,
    pub robustness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub quality: f64,
    pub accuracy: f64,
    pub robustness: f64,
    pub auc: f64,
    pub ao: f64,
    pub frames_evaluated: usize,
    /// Frames with a visible target that were not tracked successfully.
    pub failed_frames: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// A frame counts as tracked when iou exceeds this.
    pub success_iou: f64,
    /// Number of evenly spaced thresholds on [0, 1] for the success curve.
    pub auc_points: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            success_iou: 0.0,
            auc_points: 101,
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if !(0.0..1.0).contains(&self.success_iou) {
            return Err(Error::Config(format!("success_iou {} outside [0, 1)", self.success_iou)));
        }
        if self.auc_points < 2 {
            return Err(Error::Config("auc_points must be at least 2".into()));
        }
        Ok(())
    }
}

fn check_lengths(a: usize, b: usize) -> Result<(), Error> {
    if a != b {
        return Err(Error::LengthMismatch { left: a, right: b });
    }
    if a == 0 {
        return Err(Error::EmptyInput("no frames to evaluate"));
    }
    Ok(())
}

fn mask_ious(pred: &[BinaryMask], gt: &[BinaryMask]) -> Result<Vec<f64>, Error> {
    check_lengths(pred.len(), gt.len())?;
    pred.iter().zip(gt).map(|(p, g)| Ok(p.iou(g)?)).collect()
}

/// Failed-frame count: visible-target frames with iou not above the threshold.
pub fn failed_frames(pred: &[BinaryMask], gt: &[BinaryMask], success_iou: f64) -> Result<usize, Error> {
    let ious = mask_ious(pred, gt)?;
    Ok(gt
        .iter()
        .zip(&ious)
        .filter(|(g, iou)| !g.is_empty() && **iou <= success_iou)
        .count())
}

pub fn qar(pred: &[BinaryMask], gt: &[BinaryMask]) -> Result<Qar, Error> {
    qar_with(pred, gt, MetricsConfig::default().success_iou)
}

pub fn qar_with(pred: &[BinaryMask], gt: &[BinaryMask], success_iou: f64) -> Result<Qar, Error> {
    let ious = mask_ious(pred, gt)?;
    let mut visible = 0usize;
    let mut successes = 0usize;
    let mut success_iou_sum = 0.0;
    let mut quality_sum = 0.0;
    for ((p, g), &iou) in pred.iter().zip(gt).zip(&ious) {
        if g.is_empty() {
            quality_sum += if p.is_empty() { 1.0 } else { 0.0 };
            continue;
        }
        visible += 1;
        quality_sum += iou;
        if iou > success_iou {
            successes += 1;
            success_iou_sum += iou;
        }
    }
    let robustness = if visible == 0 {
        1.0
    } else {
        successes as f64 / visible as f64
    };
    let accuracy = match (visible, successes) {
        (0, _) => 1.0,
        (_, 0) => 0.0,
        (_, s) => success_iou_sum / s as f64,
    };
    Ok(Qar {
        quality: quality_sum / ious.len() as f64,
        accuracy,
        robustness,
    })
}

/// Box overlap where a missing box is "target absent": two absent boxes
/// agree perfectly, one absent box scores zero.
pub fn box_iou(pred: Option<BBox>, gt: Option<BBox>) -> f64 {
    match (pred, gt) {
        (Some(p), Some(g)) => p.iou(&g),
        (None, None) => 1.0,
        _ => 0.0,
    }
}

/// Mean over evenly spaced thresholds of the fraction of frames whose box iou
/// strictly exceeds the threshold.
pub fn success_auc(pred: &[Option<BBox>], gt: &[Option<BBox>]) -> Result<f64, Error> {
    success_auc_with(pred, gt, MetricsConfig::default().auc_points)
}

pub fn success_auc_with(pred: &[Option<BBox>], gt: &[Option<BBox>], points: usize) -> Result<f64, Error> {
    check_lengths(pred.len(), gt.len())?;
    if points < 2 {
        return Err(Error::Config("auc_points must be at least 2".into()));
    }
    let ious: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| box_iou(*p, *g)).collect();
    Ok(success_auc_from_ious(&ious, points))
}

pub fn success_auc_from_ious(ious: &[f64], points: usize) -> f64 {
    let steps = (points - 1) as f64;
    let total: usize = (0..points)
        .map(|i| {
            let tau = i as f64 / steps;
            ious.iter().filter(|&&v| v > tau).count()
        })
        .sum();
    total as f64 / (points * ious.len()) as f64
}

pub fn average_overlap(pred: &[BinaryMask], gt: &[BinaryMask]) -> Result<f64, Error> {
    let ious = mask_ious(pred, gt)?;
    Ok(ious.iter().sum::<f64>() / ious.len() as f64)
}

pub fn average_overlap_boxes(pred: &[Option<BBox>], gt: &[Option<BBox>]) -> Result<f64, Error> {
    check_lengths(pred.len(), gt.len())?;
    Ok(pred.iter().zip(gt).map(|(p, g)| box_iou(*p, *g)).sum::<f64>() / pred.len() as f64)
}

pub fn mask_to_box(m: &BinaryMask) -> Option<BBox> {
    m.bbox()
}

/// All measures for one sequence (initialization frame already removed).
pub fn evaluate(pred: &[BinaryMask], gt: &[BinaryMask], cfg: &MetricsConfig) -> Result<EvalSummary, Error> {
    cfg.validate()?;
    let q = qar_with(pred, gt, cfg.success_iou)?;
    let pb: Vec<_> = pred.iter().map(mask_to_box).collect();
    let gb: Vec<_> = gt.iter().map(mask_to_box).collect();
    Ok(EvalSummary {
        quality: q.quality,
        accuracy: q.accuracy,
        robustness: q.robustness,
        auc: success_auc_with(&pb, &gb, cfg.auc_points)?,
        ao: average_overlap(pred, gt)?,
        frames_evaluated: pred.len(),
        failed_frames: failed_frames(pred, gt, cfg.success_iou)?,
    })
}

/// Frame-weighted aggregate of several summaries.
pub fn aggregate(summaries: &[EvalSummary]) -> Result<EvalSummary, Error> {
    let n: usize = summaries.iter().map(|s| s.frames_evaluated).sum();
    if n == 0 {
        return Err(Error::EmptyInput("no sequences to aggregate"));
    }
    let w = |f: fn(&EvalSummary) -> f64| {
        summaries.iter().map(|s| f(s) * s.frames_evaluated as f64).sum::<f64>() / n as f64
    };
    Ok(EvalSummary {
        quality: w(|s| s.quality),
        accuracy: w(|s| s.accuracy),
        robustness: w(|s| s.robustness),
        auc: w(|s| s.auc),
        ao: w(|s| s.ao),
        frames_evaluated: n,
        failed_frames: summaries.iter().map(|s| s.failed_frames).sum(),
    })
}
