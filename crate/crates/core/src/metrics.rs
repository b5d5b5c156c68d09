//! Pixel-level segmentation metrics: precision-recall curves, AUPR, F-score
//! and IoU, pooled over a whole dataset per class.

use serde::{Deserialize, Serialize};

use crate::error::{contract_err, shape_err, Result};
use crate::tensor::Tensor;

/// F-score and IoU count a pixel as positive when its probability exceeds this.
pub const BINARIZE_AT: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Points ordered by descending threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

fn binary(t: &Tensor) -> impl Iterator<Item = bool> + '_ {
    t.data().iter().map(|&v| v > BINARIZE_AT)
}

/// One point per distinct score `τ`, predicting positive iff `score ≥ τ`.
pub fn pr_curve(scores: &Tensor, gt: &Tensor) -> Result<PrCurve> {
    if scores.shape() != gt.shape() {
        return shape_err(format!(
            "pr_curve: scores {:?} vs ground truth {:?}",
            scores.shape(),
            gt.shape()
        ));
    }
    let labels: Vec<bool> = binary(gt).collect();
    pr_curve_from_slices(scores.data(), &labels)
}

pub fn pr_curve_from_slices(scores: &[f64], labels: &[bool]) -> Result<PrCurve> {
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return contract_err("pr_curve: ground truth has no positives, recall is undefined");
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(PrPoint {
            threshold,
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / positives as f64,
        });
    }
    Ok(PrCurve { points })
}

/// Step integration `Σ (R_i − R_{i−1})·P_i` with `R_0 = 0`.
pub fn aupr(curve: &PrCurve) -> f64 {
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    for p in &curve.points {
        area += (p.recall - prev_recall) * p.precision;
        prev_recall = p.recall;
    }
    area
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct Counts {
    tp: usize,
    fp: usize,
    fn_: usize,
}

impl Counts {
    fn of(pred: impl Iterator<Item = bool>, gt: impl Iterator<Item = bool>) -> Self {
        let mut c = Counts::default();
        for (p, g) in pred.zip(gt) {
            match (p, g) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
        c
    }

    fn f_and_iou(self) -> (f64, f64) {
        let Counts { tp, fp, fn_ } = self;
        if tp + fp + fn_ == 0 {
            return (1.0, 1.0);
        }
        let f = 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
        let iou = tp as f64 / (tp + fp + fn_) as f64;
        (f, iou)
    }
}

/// `F = 2TP/(2TP+FP+FN)`, `IoU = TP/(TP+FP+FN)`; both 1 when prediction and
/// ground truth are empty.
pub fn f_and_iou(pred: &Tensor, gt: &Tensor) -> Result<(f64, f64)> {
    if pred.shape() != gt.shape() {
        return shape_err(format!(
            "f_and_iou: prediction {:?} vs ground truth {:?}",
            pred.shape(),
            gt.shape()
        ));
    }
    Ok(Counts::of(binary(pred), binary(gt)).f_and_iou())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    /// `None` when the class has no positive pixels anywhere in the set.
    pub aupr: Option<f64>,
    pub f: f64,
    pub iou: f64,
    pub positives: usize,
    pub curve: Option<PrCurve>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    #[serde(rename = "mAUPR")]
    pub aupr: f64,
    #[serde(rename = "mF")]
    pub f: f64,
    #[serde(rename = "mIoU")]
    pub iou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    pub means: MeanMetrics,
    /// Classes left out of the means because they have no positives.
    pub excluded: Vec<String>,
}

impl MetricsReport {
    pub fn class(&self, name: &str) -> Option<&ClassMetrics> {
        self.per_class.iter().find(|c| c.class == name)
    }

    /// Rows are classes plus `mean`; columns `AUPR,F,IoU`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,AUPR,F,IoU\n");
        for c in &self.per_class {
            let aupr = c.aupr.map(|v| format!("{v:.6}")).unwrap_or_default();
            out.push_str(&format!("{},{aupr},{:.6},{:.6}\n", c.class, c.f, c.iou));
        }
        let m = &self.means;
        out.push_str(&format!("mean,{:.6},{:.6},{:.6}\n", m.aupr, m.f, m.iou));
        out
    }

    /// JSON without the (large) per-class curves.
    pub fn to_json_summary(&self) -> Result<String> {
        let mut slim = self.clone();
        for c in &mut slim.per_class {
            c.curve = None;
        }
        Ok(serde_json::to_string_pretty(&slim)?)
    }
}

/// Pools pixels over every image per class (micro aggregation). `probs[i]`
/// and `gts[i]` are `(H, W, K)` maps with `K = classes.len()`.
pub fn evaluate(probs: &[Tensor], gts: &[Tensor], classes: &[&str]) -> Result<MetricsReport> {
    if probs.is_empty() {
        return contract_err("evaluate: empty dataset");
    }
    if probs.len() != gts.len() {
        return shape_err(format!(
            "evaluate: {} predictions for {} ground truths",
            probs.len(),
            gts.len()
        ));
    }
    for (p, g) in probs.iter().zip(gts) {
        let (_, _, k) = p.hwc()?;
        if p.shape() != g.shape() || k != classes.len() {
            return shape_err(format!(
                "evaluate: prediction {:?}, ground truth {:?}, {} classes",
                p.shape(),
                g.shape(),
                classes.len()
            ));
        }
    }

    let k = classes.len();
    let mut per_class = Vec::with_capacity(k);
    let mut excluded = Vec::new();
    for (ci, &name) in classes.iter().enumerate() {
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for (p, g) in probs.iter().zip(gts) {
            scores.extend(p.data().iter().skip(ci).step_by(k));
            labels.extend(g.data().iter().skip(ci).step_by(k).map(|&v| v > 0.5));
        }
        let counts = Counts::of(scores.iter().map(|&s| s > BINARIZE_AT), labels.iter().copied());
        let (f, iou) = counts.f_and_iou();
        let positives = labels.iter().filter(|&&l| l).count();
        let curve = (positives > 0)
            .then(|| pr_curve_from_slices(&scores, &labels))
            .transpose()?;
        if positives == 0 {
            excluded.push(name.to_string());
        }
        per_class.push(ClassMetrics {
            class: name.to_string(),
            aupr: curve.as_ref().map(aupr),
            f,
            iou,
            positives,
            curve,
        });
    }

    let included: Vec<&ClassMetrics> = per_class.iter().filter(|c| c.aupr.is_some()).collect();
    let mean = |f: &dyn Fn(&ClassMetrics) -> f64| {
        if included.is_empty() {
            0.0
        } else {
            included.iter().map(|c| f(c)).sum::<f64>() / included.len() as f64
        }
    };
    let means = MeanMetrics {
        aupr: mean(&|c| c.aupr.unwrap()),
        f: mean(&|c| c.f),
        iou: mean(&|c| c.iou),
    };
    Ok(MetricsReport {
        per_class,
        means,
        excluded,
    })
}
