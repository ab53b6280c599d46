//! Confusion counts, the classification metric suite, ROC/AUC and Grad-CAM.

use std::fmt;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::dataset::Label;
use crate::gan::{Discriminator, ModelError, Phase, TrainedDiscriminator};
use crate::imaging::{resize_bilinear, GrayImage, ImageError, TARGET_SIDE};
use crate::tensor::{Mode, Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {0} predictions vs {1} truths")]
    LengthMismatch(usize, usize),
    #[error("AUC undefined: truths contain a single class")]
    SingleClass,
    #[error("non-finite score at index {0}")]
    NonFiniteScore(usize),
    #[error("grad-cam needs a phase-2 classifier, got a {0:?} checkpoint")]
    WrongPhase(Phase),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// COVID is the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
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
}

pub fn confusion_counts(predictions: &[Label], truths: &[Label]) -> Result<ConfusionCounts, EvalError> {
    if predictions.len() != truths.len() {
        return Err(EvalError::LengthMismatch(predictions.len(), truths.len()));
    }
    let mut c = ConfusionCounts::default();
    for (p, t) in predictions.iter().zip(truths) {
        match (p, t) {
            (Label::Covid, Label::Covid) => c.tp += 1,
            (Label::Covid, Label::Healthy) => c.fp += 1,
            (Label::Healthy, Label::Healthy) => c.tn += 1,
            (Label::Healthy, Label::Covid) => c.fn_ += 1,
        }
    }
    Ok(c)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Metrics with `None` standing for "undefined" (zero denominator).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
    pub f1: Option<f64>,
    pub auc: Option<f64>,
    /// Mean test loss.
    pub loss: Option<f64>,
    pub counts: ConfusionCounts,
}

pub const METRICS_CSV_HEADER: &str = "accuracy,precision,recall,specificity,f1,loss,auc";
pub const UNDEFINED: &str = "undefined";

/// `scores` pairs positive-class scores with truths; the AUC stays undefined
/// when they hold a single class.
pub fn compute_metrics(
    counts: ConfusionCounts,
    loss: Option<f64>,
    scores: Option<(&[f64], &[Label])>,
) -> MetricsReport {
    let ConfusionCounts { tp, fp, tn, fn_ } = counts;
    let auc = scores.and_then(|(s, t)| roc_auc(s, t).ok()).map(|(_, auc)| auc);
    MetricsReport {
        accuracy: ratio(tp + tn, counts.total()),
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        specificity: ratio(tn, tn + fp),
        f1: ratio(2 * tp, 2 * tp + fp + fn_),
        auc,
        loss,
        counts,
    }
}

fn percent(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), |v| format!("{:.2}", 100.0 * v))
}

impl MetricsReport {
    /// Values for [`METRICS_CSV_HEADER`]: percentages with two decimals, loss
    /// with six.
    pub fn csv_fields(&self) -> Vec<String> {
        vec![
            percent(self.accuracy),
            percent(self.precision),
            percent(self.recall),
            percent(self.specificity),
            percent(self.f1),
            self.loss.map_or_else(|| UNDEFINED.to_string(), |l| format!("{l:.6}")),
            percent(self.auc),
        ]
    }

    pub fn to_csv(&self) -> String {
        format!("{METRICS_CSV_HEADER}\n{}\n", self.csv_fields().join(","))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fields = self.csv_fields();
        let names = ["Accuracy (%)", "Precision (%)", "Recall (%)", "Specificity (%)", "F1 (%)", "Loss", "AUC (%)"];
        for (name, value) in names.iter().zip(&fields) {
            writeln!(f, "{name:<16} {value}")?;
        }
        let c = &self.counts;
        write!(f, "TP {} FP {} TN {} FN {}", c.tp, c.fp, c.tn, c.fn_)
    }
}

/// ROC points from (0,0) to (1,1), one step per distinct score.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<(f64, f64)>,
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fpr,tpr\n");
        for (fpr, tpr) in &self.points {
            out.push_str(&format!("{fpr},{tpr}\n"));
        }
        out
    }
}

/// Threshold sweep over distinct scores in descending order, with equal
/// scores grouped into one step; AUC by the trapezoidal rule.
pub fn roc_auc(scores: &[f64], truths: &[Label]) -> Result<(RocCurve, f64), EvalError> {
    if scores.len() != truths.len() {
        return Err(EvalError::LengthMismatch(scores.len(), truths.len()));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore(i));
    }
    let pos = truths.iter().filter(|&&t| t == Label::Covid).count();
    let neg = truths.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let score = scores[order[i]];
        while i < order.len() && scores[order[i]] == score {
            match truths[order[i]] {
                Label::Covid => tp += 1,
                Label::Healthy => fp += 1,
            }
            i += 1;
        }
        let (x0, y0) = *points.last().expect("curve starts at the origin");
        let point = (fp as f64 / neg as f64, tp as f64 / pos as f64);
        auc += (point.0 - x0) * (point.1 + y0) / 2.0;
        points.push(point);
    }
    Ok((RocCurve { points }, auc))
}

/// Grad-CAM heatmap for one preprocessed 1×100×100 image: gradients of the
/// pre-sigmoid logit with respect to the last convolution's activations,
/// averaged per channel into weights, then a rectified weighted channel sum
/// upsampled to 100×100 and scaled so its maximum is 1. An all-zero map stays
/// zero.
pub fn gradcam(model: &TrainedDiscriminator, image: &Tensor) -> Result<GrayImage, EvalError> {
    if model.phase != Phase::Phase2 {
        return Err(EvalError::WrongPhase(model.phase));
    }
    let mut tape = Tape::new();
    let bound = model.network.bind(&mut tape, false);
    let x = tape.param(image.clone());
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let out = Discriminator::forward(&mut tape, &bound, x, Mode::Eval, &mut rng)?;
    tape.backward(out.logit)?;

    let dims = tape.value(out.features).dims().to_vec();
    let (channels, h, w) = match dims[..] {
        [c, h, w] | [1, c, h, w] => (c, h, w),
        _ => return Err(TensorError::ShapeMismatch { op: "gradcam", detail: format!("expects one image, features {dims:?}") }.into()),
    };
    let plane = h * w;
    let activations = tape.value(out.features).data();
    let grads = tape.grad(out.features).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; activations.len()]);

    let mut cam = vec![0.0; plane];
    for c in 0..channels {
        let g = &grads[c * plane..(c + 1) * plane];
        let weight = g.iter().sum::<f64>() / plane as f64;
        for (acc, a) in cam.iter_mut().zip(&activations[c * plane..(c + 1) * plane]) {
            *acc += weight * a;
        }
    }
    for v in &mut cam {
        *v = v.max(0.0);
    }
    let small = GrayImage::new(w, h, cam)?;
    let big = resize_bilinear(&small, TARGET_SIDE, TARGET_SIDE)?;
    let max = big.pixels().iter().copied().fold(0.0, f64::max);
    Ok(if max > 0.0 { big.map(|v| (v / max).max(0.0)) } else { big.map(|_| 0.0) })
}
