//! Confusion matrices, per-class IoU, mIoU, pixel accuracy, and the rank/
//! linear correlation helpers used by the distribution analyses.

use crate::error::{Error, Result};

/// Square confusion matrix, truth-major: `counts[truth * c + pred]`.
/// Merging is associative, so matrices can be accumulated per scan and
/// reduced.
#[derive(Clone, Debug)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.num_classes + pred]
    }

    /// Accumulate predictions against ground truth. Pixels whose truth equals
    /// `ignore_class` are skipped.
    pub fn update(&mut self, pred: &[u32], truth: &[u32], ignore_class: Option<u32>) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(Error::Dimension(format!(
                "prediction length {} does not match truth length {}",
                pred.len(),
                truth.len()
            )));
        }
        let c = self.num_classes as u32;
        for (&p, &t) in pred.iter().zip(truth) {
            if Some(t) == ignore_class {
                continue;
            }
            if p >= c || t >= c {
                return Err(Error::Config(format!(
                    "class id out of range: pred {p}, truth {t}, classes {c}"
                )));
            }
            self.counts[(t * c + p) as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.num_classes, other.num_classes);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// IoU per class: `TP / (TP + FP + FN)`. `None` for classes absent from
    /// both prediction and truth (excluded from the mean).
    pub fn per_class_iou(&self, ignore_class: Option<u32>) -> Vec<Option<f64>> {
        let c = self.num_classes;
        (0..c)
            .map(|k| {
                if Some(k as u32) == ignore_class {
                    return None;
                }
                let tp = self.count(k, k);
                let fn_: u64 = (0..c).map(|j| self.count(k, j)).sum::<u64>() - tp;
                let fp: u64 = (0..c).map(|j| self.count(j, k)).sum::<u64>() - tp;
                if tp + fp + fn_ == 0 {
                    None
                } else {
                    Some(tp as f64 / (tp + fp + fn_) as f64)
                }
            })
            .collect()
    }

    pub fn miou(&self, ignore_class: Option<u32>) -> f64 {
        let ious: Vec<f64> = self
            .per_class_iou(ignore_class)
            .into_iter()
            .flatten()
            .collect();
        if ious.is_empty() {
            0.0
        } else {
            ious.iter().sum::<f64>() / ious.len() as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        let total: u64 = self.counts.iter().sum();
        if total == 0 {
            return 0.0;
        }
        let correct: u64 = (0..self.num_classes).map(|k| self.count(k, k)).sum();
        correct as f64 / total as f64
    }
}

/// Confusion matrix, per-class IoU, and mIoU in one call.
pub fn confusion_and_miou(
    pred: &[u32],
    truth: &[u32],
    num_classes: usize,
    ignore_class: Option<u32>,
) -> Result<(ConfusionMatrix, Vec<Option<f64>>, f64)> {
    let mut m = ConfusionMatrix::new(num_classes);
    m.update(pred, truth, ignore_class)?;
    let iou = m.per_class_iou(ignore_class);
    let miou = m.miou(ignore_class);
    Ok((m, iou, miou))
}

/// Pearson linear correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len(), "correlation requires equal lengths");
    let n = xs.len() as f64;
    if xs.is_empty() {
        return 0.0;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman rank correlation (average ranks on ties).
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    pearson(&ranks(xs), &ranks(ys))
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}
