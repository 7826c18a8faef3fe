//! Multi-layer weighted cross-entropy: class-frequency weighting
//! `w_c = 1 / ln(f_c + eps)`, majority-vote label pyramids at factors
//! (1, 2, 4, 8, 8), and the per-stage normalized loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Elem, Tensor};

/// Downsampling factor of each supervised output, stage 1 through 5.
pub const STAGE_FACTORS: [usize; 5] = [1, 2, 4, 8, 8];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LossConfig {
    /// The epsilon of the weighting formula. Must keep `f_c + epsilon > 1`
    /// for every frequency, so the established inverse-log-frequency
    /// convention uses a value slightly above 1.
    pub epsilon: f64,
    pub num_classes: usize,
    /// Class id excluded from loss, frequencies, and IoU.
    pub ignore_class: Option<u32>,
    pub stage_weights: [f64; 5],
}

impl LossConfig {
    pub fn new(num_classes: usize) -> Self {
        LossConfig {
            epsilon: 1.02,
            num_classes,
            ignore_class: Some(0),
            stage_weights: [1.0; 5],
        }
    }

    pub fn ignore_sentinel(&self) -> u32 {
        self.ignore_class.unwrap_or(u32::MAX)
    }
}

/// Per-class frequency over labeled pixels: `f_c = count_c / labeled`,
/// summing to 1 over non-ignored classes.
pub fn class_frequencies<'a>(
    label_maps: impl IntoIterator<Item = &'a [u32]>,
    num_classes: usize,
    ignore_class: Option<u32>,
) -> Result<Vec<f64>> {
    let mut counts = vec![0u64; num_classes];
    let mut total = 0u64;
    for map in label_maps {
        for &lab in map {
            if Some(lab) == ignore_class {
                continue;
            }
            if lab as usize >= num_classes {
                return Err(Error::Config(format!(
                    "label {lab} out of range for {num_classes} classes"
                )));
            }
            counts[lab as usize] += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Config(
            "class frequencies require at least one labeled pixel".into(),
        ));
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

/// Inverse-log-frequency weights `w_c = 1 / ln(f_c + eps)`. Rarer classes get
/// strictly larger weights.
pub fn class_weights(frequencies: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    for (c, &f) in frequencies.iter().enumerate() {
        if f + epsilon <= 1.0 {
            return Err(Error::Config(format!(
                "class {c}: f_c + epsilon = {} <= 1 makes ln non-positive; the \
                 inverse-log-frequency convention requires epsilon > 1 - f_c \
                 (conventionally epsilon = 1.02)",
                f + epsilon
            )));
        }
    }
    Ok(frequencies.iter().map(|&f| 1.0 / (f + epsilon).ln()).collect())
}

/// Majority-vote label downsampling by each stage factor. Ties take the
/// smallest class id; the ignore class wins only when the whole block is
/// ignored.
pub fn label_pyramid(
    labels: &[u32],
    h: usize,
    w: usize,
    num_classes: usize,
    ignore_class: Option<u32>,
) -> Result<Vec<Vec<u32>>> {
    if labels.len() != h * w {
        return Err(Error::Dimension(format!(
            "label map has {} entries, expected {}",
            labels.len(),
            h * w
        )));
    }
    if h % 8 != 0 || w % 8 != 0 {
        return Err(Error::Dimension(format!(
            "label pyramid requires dims divisible by 8, got {h}x{w}"
        )));
    }
    STAGE_FACTORS
        .iter()
        .map(|&f| downsample_majority(labels, h, w, f, num_classes, ignore_class))
        .collect()
}

fn downsample_majority(
    labels: &[u32],
    h: usize,
    w: usize,
    factor: usize,
    num_classes: usize,
    ignore_class: Option<u32>,
) -> Result<Vec<u32>> {
    if factor == 1 {
        return Ok(labels.to_vec());
    }
    let (oh, ow) = (h / factor, w / factor);
    let ignore = ignore_class.unwrap_or(u32::MAX);
    let mut out = vec![0u32; oh * ow];
    let mut counts = vec![0u32; num_classes];
    for bp in 0..oh {
        for bq in 0..ow {
            counts.iter_mut().for_each(|c| *c = 0);
            for dp in 0..factor {
                for dq in 0..factor {
                    let lab = labels[(bp * factor + dp) * w + bq * factor + dq];
                    if lab == ignore {
                        continue;
                    }
                    if lab as usize >= num_classes {
                        return Err(Error::Config(format!(
                            "label {lab} out of range for {num_classes} classes"
                        )));
                    }
                    counts[lab as usize] += 1;
                }
            }
            let (mut best, mut best_count) = (ignore, 0u32);
            for (c, &n) in counts.iter().enumerate() {
                if n > best_count {
                    best = c as u32;
                    best_count = n;
                }
            }
            out[bp * ow + bq] = best;
        }
    }
    Ok(out)
}

/// The multi-layer loss: per stage, a class-weighted negative log likelihood
/// over log-softmax probabilities, normalized by that stage's full spatial
/// extent, scaled by the stage weight, and summed.
///
/// `stage_labels[i]` holds the stage-`i` pyramid level for every batch
/// element, row-major `(N, H_i, W_i)`.
pub fn multi_layer_loss<E: Elem>(
    stage_logits: &[Tensor<E>; 5],
    stage_labels: &[Vec<u32>; 5],
    class_weights: &[f64],
    cfg: &LossConfig,
) -> Tensor<E> {
    let weights: Vec<E> = class_weights.iter().map(|&w| E::of(w)).collect();
    let ignore = cfg.ignore_sentinel();
    let mut total: Option<Tensor<E>> = None;
    for i in 0..5 {
        if cfg.stage_weights[i] == 0.0 {
            continue;
        }
        let logits = &stage_logits[i];
        let [n, c, h, w] = logits.dims4();
        assert_eq!(
            c, cfg.num_classes,
            "stage {i} logits have {c} channels, expected {}",
            cfg.num_classes
        );
        assert_eq!(
            stage_labels[i].len(),
            n * h * w,
            "stage {i} labels have {} entries, expected {}",
            stage_labels[i].len(),
            n * h * w
        );
        let lp = logits.log_softmax_channels();
        let term = lp
            .weighted_nll(&stage_labels[i], &weights, ignore)
            .scale(cfg.stage_weights[i]);
        total = Some(match total {
            Some(t) => t.add(&term),
            None => term,
        });
    }
    total.expect("at least one stage weight must be non-zero")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequencies_single_class() {
        let map = vec![2u32; 10];
        let f = class_frequencies([map.as_slice()], 4, Some(0)).unwrap();
        assert_eq!(f, vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn frequencies_three_quarters() {
        let map = vec![1, 1, 1, 2];
        let f = class_frequencies([map.as_slice()], 3, Some(0)).unwrap();
        assert_eq!(f, vec![0.0, 0.75, 0.25]);
    }

    #[test]
    fn frequencies_require_labeled_pixels() {
        let map = vec![0u32; 8];
        assert!(class_frequencies([map.as_slice()], 3, Some(0)).is_err());
    }

    #[test]
    fn weights_at_convention_epsilon() {
        let w = class_weights(&[0.0, 1.0], 1.02).unwrap();
        assert!((w[0] - 1.0 / 1.02f64.ln()).abs() < 1e-12);
        assert!((w[0] - 50.4975).abs() < 0.01);
        assert!((w[1] - 1.0 / 2.02f64.ln()).abs() < 1e-12);
        assert!((w[1] - 1.4222).abs() < 0.001);
    }

    #[test]
    fn rarer_class_gets_strictly_larger_weight() {
        let w = class_weights(&[0.1, 0.2, 0.7], 1.02).unwrap();
        assert!(w[0] > w[1] && w[1] > w[2]);
    }

    #[test]
    fn non_positive_log_rejected_with_convention_message() {
        let err = class_weights(&[0.5], 0.1).unwrap_err();
        assert!(err.to_string().contains("epsilon"));
    }

    #[test]
    fn pyramid_constant_map() {
        let labels = vec![3u32; 16 * 16];
        let pyr = label_pyramid(&labels, 16, 16, 4, Some(0)).unwrap();
        assert_eq!(pyr.len(), 5);
        for (level, &f) in pyr.iter().zip(&STAGE_FACTORS) {
            assert_eq!(level.len(), (16 / f) * (16 / f));
            assert!(level.iter().all(|&l| l == 3));
        }
    }

    #[test]
    fn pyramid_majority_ignores_ignore() {
        // one 2x2 block: (1, 1, 2, ignore) -> majority 1
        let mut labels = vec![1u32; 8 * 8];
        labels[1] = 1;
        labels[8] = 2;
        labels[9] = 0;
        let pyr = label_pyramid(&labels, 8, 8, 3, Some(0)).unwrap();
        assert_eq!(pyr[1][0], 1);
        // factor-1 level is the identity
        assert_eq!(pyr[0], labels);
    }

    #[test]
    fn pyramid_tie_takes_smallest_id() {
        let mut labels = vec![0u32; 8 * 8];
        labels[0] = 2;
        labels[1] = 2;
        labels[8] = 1;
        labels[9] = 1;
        let pyr = label_pyramid(&labels, 8, 8, 3, Some(0)).unwrap();
        assert_eq!(pyr[1][0], 1);
    }

    #[test]
    fn pyramid_all_ignored_block_stays_ignored() {
        let mut labels = vec![0u32; 8 * 8];
        labels[4 * 8 + 4] = 1; // single labeled pixel elsewhere
        let pyr = label_pyramid(&labels, 8, 8, 3, Some(0)).unwrap();
        assert_eq!(pyr[1][0], 0);
    }

    #[test]
    fn single_pixel_half_probability_loss() {
        let mut cfg = LossConfig::new(2);
        cfg.ignore_class = None;
        cfg.stage_weights = [0.0, 0.0, 0.0, 0.0, 1.0];
        // logits equal in both classes -> p = 0.5
        let logits = Tensor::<f64>::zeros(&[1, 2, 1, 1]);
        let dummy = Tensor::<f64>::zeros(&[1, 2, 1, 1]);
        let stage_logits = [
            dummy.detach(),
            dummy.detach(),
            dummy.detach(),
            dummy.detach(),
            logits,
        ];
        let labels: [Vec<u32>; 5] = std::array::from_fn(|_| vec![0u32]);
        let loss = multi_layer_loss(&stage_logits, &labels, &[1.0, 1.0], &cfg);
        assert!((loss.item() - 0.693147).abs() < 1e-6);
    }

    #[test]
    fn doubling_stage_weights_doubles_loss() {
        let mut cfg = LossConfig::new(3);
        cfg.ignore_class = Some(0);
        let mk = || Tensor::<f64>::from_f64s(&[1, 3, 2, 2], &[
            0.3, -0.2, 0.5, 0.1, //
            -0.4, 0.9, 0.2, -0.1, //
            0.0, 0.3, -0.6, 0.7,
        ]);
        let logits: [Tensor<f64>; 5] = std::array::from_fn(|_| mk());
        let labels: [Vec<u32>; 5] = std::array::from_fn(|_| vec![1, 2, 0, 1]);
        let w = [1.0, 2.0, 3.0];
        let l1 = multi_layer_loss(&logits, &labels, &w, &cfg).item();
        cfg.stage_weights = [2.0; 5];
        let logits: [Tensor<f64>; 5] = std::array::from_fn(|_| mk());
        let l2 = multi_layer_loss(&logits, &labels, &w, &cfg).item();
        assert!((l2 - 2.0 * l1).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions_drive_loss_to_zero() {
        let mut cfg = LossConfig::new(2);
        cfg.ignore_class = None;
        // huge margin for the true class at every pixel
        let logits: [Tensor<f64>; 5] = std::array::from_fn(|_| {
            Tensor::from_f64s(&[1, 2, 1, 2], &[50.0, -50.0, -50.0, 50.0])
        });
        let labels: [Vec<u32>; 5] = std::array::from_fn(|_| vec![0, 1]);
        let loss = multi_layer_loss(&logits, &labels, &[1.0, 1.0], &cfg);
        assert!(loss.item() < 1e-9, "loss {}", loss.item());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        use crate::tensor::finite_diff_check;
        let mut cfg = LossConfig::new(3);
        cfg.ignore_class = Some(0);
        cfg.stage_weights = [0.0, 0.0, 0.0, 0.0, 1.0];
        let labels: [Vec<u32>; 5] = std::array::from_fn(|_| vec![1, 2, 0, 1]);
        let x0 = Tensor::<f64>::from_f64s(&[1, 3, 2, 2], &[
            0.3, -0.2, 0.5, 0.1, //
            -0.4, 0.9, 0.2, -0.1, //
            0.0, 0.3, -0.6, 0.7,
        ]);
        let err = finite_diff_check(
            move |t| {
                let logits: [Tensor<f64>; 5] = std::array::from_fn(|_| t.clone());
                multi_layer_loss(&logits, &labels, &[1.0, 2.0, 0.5], &cfg)
            },
            &x0,
            1e-5,
        );
        assert!(err <= 1e-4, "loss gradient error {err}");
    }
}
