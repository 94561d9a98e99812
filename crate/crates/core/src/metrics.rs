//! Segmentation overlap metrics and binary ranking/classification metrics.
//!
//! Conventions:
//! - Dice and IoU of two empty masks are 1.0 (a correct "nothing present").
//! - AUROC gives tied positive/negative pairs half credit (Mann-Whitney).
//! - AUPRC is step-wise average precision, tied scores form one cut point.

use crate::error::{Error, Result};
use crate::image::QuantizedImage;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} mask needs {} bits, got {}",
                height * width,
                bits.len()
            )));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    /// Nonzero levels are foreground.
    pub fn from_label_image(img: &QuantizedImage) -> Self {
        Self {
            height: img.height(),
            width: img.width(),
            bits: img.pixels().iter().map(|&l| l != 0).collect(),
        }
    }

    /// Foreground as 255, background as 0.
    pub fn to_label_image(&self) -> Result<QuantizedImage> {
        QuantizedImage::new(
            self.height,
            self.width,
            self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect(),
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiClassMask {
    height: usize,
    width: usize,
    num_classes: usize,
    labels: Vec<u8>,
}

impl MultiClassMask {
    /// Class 0 is background.
    pub fn new(height: usize, width: usize, num_classes: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} mask needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        if num_classes < 2 {
            return Err(Error::Shape(format!(
                "need at least 2 classes (background + one), got {num_classes}"
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| usize::from(l) >= num_classes) {
            return Err(Error::Shape(format!(
                "label {l} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            height,
            width,
            num_classes,
            labels,
        })
    }

    pub fn from_label_image(img: &QuantizedImage, num_classes: usize) -> Result<Self> {
        Self::new(img.height(), img.width(), num_classes, img.pixels().to_vec())
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn one_vs_rest(&self, class: u8) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            bits: self.labels.iter().map(|&l| l == class).collect(),
        }
    }
}

/// Pixel counts behind Dice and IoU.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Overlap {
    pub intersection: usize,
    pub pred: usize,
    pub truth: usize,
}

impl Overlap {
    pub fn union(&self) -> usize {
        self.pred + self.truth - self.intersection
    }

    pub fn both_empty(&self) -> bool {
        self.pred == 0 && self.truth == 0
    }

    pub fn dice(&self) -> f64 {
        if self.both_empty() {
            1.0
        } else {
            2.0 * self.intersection as f64 / (self.pred + self.truth) as f64
        }
    }

    pub fn iou(&self) -> f64 {
        if self.both_empty() {
            1.0
        } else {
            self.intersection as f64 / self.union() as f64
        }
    }
}

pub fn overlap(pred: &BinaryMask, truth: &BinaryMask) -> Result<Overlap> {
    if pred.height != truth.height || pred.width != truth.width {
        return Err(Error::Shape(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            pred.height, pred.width, truth.height, truth.width
        )));
    }
    let mut o = Overlap {
        intersection: 0,
        pred: 0,
        truth: 0,
    };
    for (&p, &t) in pred.bits.iter().zip(&truth.bits) {
        o.pred += usize::from(p);
        o.truth += usize::from(t);
        o.intersection += usize::from(p && t);
    }
    Ok(o)
}

pub fn dice(pred: &BinaryMask, truth: &BinaryMask) -> Result<f64> {
    Ok(overlap(pred, truth)?.dice())
}

pub fn iou(pred: &BinaryMask, truth: &BinaryMask) -> Result<f64> {
    Ok(overlap(pred, truth)?.iou())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassScore {
    pub class: u8,
    pub dice: f64,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassScores {
    pub per_class: Vec<ClassScore>,
    pub macro_dice: f64,
    pub macro_iou: f64,
}

/// One-vs-rest scores for every foreground class plus their unweighted mean.
pub fn per_class_scores(pred: &MultiClassMask, truth: &MultiClassMask) -> Result<ClassScores> {
    if pred.num_classes != truth.num_classes {
        return Err(Error::Shape(format!(
            "prediction has {} classes, ground truth has {}",
            pred.num_classes, truth.num_classes
        )));
    }
    let mut per_class = Vec::with_capacity(pred.num_classes - 1);
    for class in 1..pred.num_classes {
        let class = class as u8;
        let o = overlap(&pred.one_vs_rest(class), &truth.one_vs_rest(class))?;
        per_class.push(ClassScore {
            class,
            dice: o.dice(),
            iou: o.iou(),
        });
    }
    let n = per_class.len() as f64;
    let macro_dice = per_class.iter().map(|c| c.dice).sum::<f64>() / n;
    let macro_iou = per_class.iter().map(|c| c.iou).sum::<f64>() / n;
    Ok(ClassScores {
        per_class,
        macro_dice,
        macro_iou,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredSample {
    pub score: f64,
    pub label: bool,
}

impl ScoredSample {
    pub fn new(score: f64, label: bool) -> Result<Self> {
        if !score.is_finite() {
            return Err(Error::Numeric(format!("score must be finite, got {score}")));
        }
        Ok(Self { score, label })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

fn class_counts(samples: &[ScoredSample]) -> (u64, u64) {
    let pos = samples.iter().filter(|s| s.label).count() as u64;
    (pos, samples.len() as u64 - pos)
}

// Runs of equal score, in descending score order: (positives, negatives) per run.
fn tie_blocks_descending(samples: &[ScoredSample]) -> Vec<(u64, u64)> {
    let mut sorted: Vec<&ScoredSample> = samples.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut blocks: Vec<(u64, u64)> = Vec::new();
    let mut last: Option<f64> = None;
    for s in sorted {
        if last != Some(s.score) {
            blocks.push((0, 0));
            last = Some(s.score);
        }
        let b = blocks.last_mut().expect("block pushed above");
        if s.label {
            b.0 += 1;
        } else {
            b.1 += 1;
        }
    }
    blocks
}

/// Area under the ROC curve as the Mann-Whitney statistic.
pub fn auroc(samples: &[ScoredSample]) -> Result<f64> {
    let (pos, neg) = class_counts(samples);
    if pos == 0 || neg == 0 {
        return Err(Error::Degenerate(format!(
            "AUROC needs both classes, got {pos} positives and {neg} negatives"
        )));
    }
    // twice the U statistic, kept integral so the result is a single division
    let mut twice_u: u128 = 0;
    let mut neg_below = neg;
    for (p, n) in tie_blocks_descending(samples) {
        neg_below -= n;
        twice_u += 2 * u128::from(p) * u128::from(neg_below) + u128::from(p) * u128::from(n);
    }
    Ok(twice_u as f64 / (2 * u128::from(pos) * u128::from(neg)) as f64)
}

/// Step-wise average precision.
pub fn auprc(samples: &[ScoredSample]) -> Result<f64> {
    let (pos, _) = class_counts(samples);
    if pos == 0 {
        return Err(Error::Degenerate(
            "AUPRC needs at least one positive sample".into(),
        ));
    }
    // sum of p * precision in double-double, divided by P once at the end,
    // so the result is the correctly rounded rational (5/6 comes out as 5.0 / 6.0)
    let mut acc = (0.0f64, 0.0f64);
    let (mut tp, mut fp) = (0u64, 0u64);
    for (p, n) in tie_blocks_descending(samples) {
        tp += p;
        fp += n;
        if p > 0 {
            let (q, r) = div_with_residual((p * tp) as f64, (tp + fp) as f64);
            let (s, e) = two_sum(acc.0, q);
            acc = (s, acc.1 + e + r);
        }
    }
    let (q, r) = div_with_residual(acc.0, pos as f64);
    Ok(q + (r + acc.1 / pos as f64))
}

// a + b = s + e exactly
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

// a / b = q + r with r the rounding residual
fn div_with_residual(a: f64, b: f64) -> (f64, f64) {
    let q = a / b;
    (q, (-q).mul_add(b, a) / b)
}

pub fn f1(counts: &ConfusionCounts) -> Result<f64> {
    let denom = 2 * counts.tp + counts.fp + counts.fn_;
    if denom == 0 {
        return Err(Error::Degenerate(
            "F1 undefined when tp = fp = fn = 0".into(),
        ));
    }
    Ok(2.0 * counts.tp as f64 / denom as f64)
}

/// Scores at or above `threshold` are predicted positive.
pub fn binarize(samples: &[ScoredSample], threshold: f64) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for s in samples {
        match (s.score >= threshold, s.label) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

/// Threshold maximizing F1, searched over the observed scores. Among equal
/// F1 values the highest threshold wins. `None` without positives.
pub fn best_f1_threshold(samples: &[ScoredSample]) -> Option<(f64, f64)> {
    if class_counts(samples).0 == 0 {
        return None;
    }
    let mut candidates: Vec<f64> = samples.iter().map(|s| s.score).collect();
    candidates.sort_by(|a, b| b.total_cmp(a));
    candidates.dedup();
    let mut best: Option<(f64, f64)> = None;
    for t in candidates {
        let score = f1(&binarize(samples, t)).ok()?;
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((t, score));
        }
    }
    best
}

/// Mean in input order, so aggregates are bit-reproducible.
pub fn ordered_mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}
