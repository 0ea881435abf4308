//! Reconstruction RMSE on the 0-255 scale and segmentation statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectra::{HsiCube, LabelMask};

/// `255 * sqrt(mean((pred - truth)^2))` over every pixel and band.
pub fn rmse255(pred: &HsiCube, truth: &HsiCube) -> Result<f64> {
    if pred.grid() != truth.grid() {
        return Err(Error::GridMismatch);
    }
    if pred.height() != truth.height() || pred.width() != truth.width() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} prediction vs {}x{} truth",
            pred.height(),
            pred.width(),
            truth.height(),
            truth.width()
        )));
    }
    let n = pred.data().len();
    if n == 0 {
        return Ok(0.0);
    }
    let sse: f64 = pred.data().iter().zip(truth.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(255.0 * (sse / n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseReport {
    pub per_image: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over images.
    pub std: f64,
}

pub fn dataset_rmse(preds: &[HsiCube], truths: &[HsiCube]) -> Result<RmseReport> {
    if preds.is_empty() {
        return Err(Error::InvalidArgument("no images to evaluate".into()));
    }
    if preds.len() != truths.len() {
        return Err(Error::DimensionMismatch(format!("{} predictions for {} truths", preds.len(), truths.len())));
    }
    let per_image = preds.iter().zip(truths).map(|(p, t)| rmse255(p, t)).collect::<Result<Vec<_>>>()?;
    Ok(rmse_summary(per_image))
}

pub fn rmse_summary(per_image: Vec<f64>) -> RmseReport {
    let n = per_image.len().max(1) as f64;
    let mean = per_image.iter().sum::<f64>() / n;
    let std = (per_image.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    RmseReport { per_image, mean, std }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Scores {
    pub iou: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub name: String,
    pub scores: Scores,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    /// Scores whose denominator was zero (reported as 0).
    pub degenerate: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegReport {
    pub classes: Vec<ClassStats>,
    /// `confusion[truth][pred]` pixel counts.
    pub confusion: Vec<Vec<u64>>,
    pub total: Scores,
    pub total_without_background: Scores,
}

fn ratio(num: u64, den: u64, name: &str, degenerate: &mut Vec<String>) -> f64 {
    if den == 0 {
        degenerate.push(name.to_string());
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn mean_scores<'a>(it: impl Iterator<Item = &'a Scores>) -> Scores {
    let mut acc = Scores::default();
    let mut n = 0usize;
    for s in it {
        acc.iou += s.iou;
        acc.f1 += s.f1;
        acc.precision += s.precision;
        acc.recall += s.recall;
        acc.accuracy += s.accuracy;
        n += 1;
    }
    if n > 0 {
        let d = n as f64;
        acc.iou /= d;
        acc.f1 /= d;
        acc.precision /= d;
        acc.recall /= d;
        acc.accuracy /= d;
    }
    acc
}

pub fn segmentation_stats(pred: &LabelMask, truth: &LabelMask) -> Result<SegReport> {
    if pred.height() != truth.height() || pred.width() != truth.width() {
        return Err(Error::DimensionMismatch("prediction and truth masks differ in size".into()));
    }
    if pred.class_names() != truth.class_names() {
        return Err(Error::DimensionMismatch("prediction and truth class tables differ".into()));
    }
    let n = truth.n_classes();
    let mut confusion = vec![vec![0u64; n]; n];
    for (&p, &t) in pred.labels().iter().zip(truth.labels()) {
        confusion[t as usize][p as usize] += 1;
    }
    let total = pred.labels().len() as u64;
    let classes: Vec<ClassStats> = (0..n)
        .map(|c| {
            let tp = confusion[c][c];
            let fn_ = confusion[c].iter().sum::<u64>() - tp;
            let fp = (0..n).map(|r| confusion[r][c]).sum::<u64>() - tp;
            let tn = total - tp - fn_ - fp;
            let mut degenerate = Vec::new();
            let scores = Scores {
                iou: ratio(tp, tp + fp + fn_, "iou", &mut degenerate),
                f1: ratio(2 * tp, 2 * tp + fp + fn_, "f1", &mut degenerate),
                precision: ratio(tp, tp + fp, "precision", &mut degenerate),
                recall: ratio(tp, tp + fn_, "recall", &mut degenerate),
                accuracy: ratio(tp + tn, total, "accuracy", &mut degenerate),
            };
            ClassStats {
                name: truth.class_names()[c].clone(),
                scores,
                tp,
                fp,
                fn_,
                tn,
                degenerate,
            }
        })
        .collect();
    Ok(SegReport {
        total: mean_scores(classes.iter().map(|c| &c.scores)),
        total_without_background: mean_scores(classes.iter().skip(1).map(|c| &c.scores)),
        classes,
        confusion,
    })
}

/// Unweighted mean IoU, optionally skipping class 0.
pub fn miou(report: &SegReport, include_background: bool) -> f64 {
    if include_background {
        report.total.iou
    } else {
        report.total_without_background.iou
    }
}

/// Mean IoU over a chosen subset of classes.
pub fn miou_of(report: &SegReport, classes: &[usize]) -> f64 {
    if classes.is_empty() {
        return 0.0;
    }
    classes.iter().map(|&c| report.classes[c].scores.iou).sum::<f64>() / classes.len() as f64
}

impl SegReport {
    /// Aligned plain-text table: one row per class, then the two totals.
    pub fn to_table(&self) -> String {
        let mut rows: Vec<(String, Scores, bool)> =
            self.classes.iter().map(|c| (c.name.clone(), c.scores, !c.degenerate.is_empty())).collect();
        rows.push(("total".into(), self.total, false));
        rows.push(("total(-background)".into(), self.total_without_background, false));
        let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(5);
        let mut out = format!("{:<width$} {:>6} {:>6} {:>6} {:>6} {:>6}\n", "class", "IoU", "F1", "Prec", "recall", "Acc");
        for (name, s, degenerate) in rows {
            out.push_str(&format!(
                "{:<width$} {:.4} {:.4} {:.4} {:.4} {:.4}{}\n",
                name,
                s.iou,
                s.f1,
                s.precision,
                s.recall,
                s.accuracy,
                if degenerate { " *" } else { "" }
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl RmseReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
