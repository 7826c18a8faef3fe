//! Reductions: full sum and the weighted negative-log-likelihood used by the
//! multi-layer loss.

use super::{Elem, Tensor};

impl<E: Elem> Tensor<E> {
    /// Sum of all elements, as a single-element tensor.
    pub fn sum_all(&self) -> Tensor<E> {
        let mut s = E::zero();
        for v in self.data().iter() {
            s += *v;
        }
        let numel = self.numel();
        Tensor::from_op(
            vec![1],
            vec![s],
            vec![self.clone()],
            move |g, _, slots| {
                if let Some(sl) = &mut slots[0] {
                    for v in sl.iter_mut().take(numel) {
                        *v += g[0];
                    }
                }
            },
        )
    }

    /// Class-weighted negative log likelihood over log-probabilities.
    ///
    /// `log_probs` is `(N, C, H, W)`, `labels` is row-major `(N, H, W)` class
    /// ids. Pixels labeled `ignore` contribute nothing. The sum is normalized
    /// by `N*H*W` (the full spatial extent, not the supervised pixel count).
    pub fn weighted_nll(&self, labels: &[u32], class_weights: &[E], ignore: u32) -> Tensor<E> {
        let [n, c, h, w] = self.dims4();
        let hw = h * w;
        assert_eq!(
            labels.len(),
            n * hw,
            "label map has {} entries, expected {}",
            labels.len(),
            n * hw
        );
        assert_eq!(
            class_weights.len(),
            c,
            "class weight count {} does not match channels {}",
            class_weights.len(),
            c
        );
        let norm = E::of(1.0 / (n * hw) as f64);
        let lp = self.data();
        let mut acc = E::zero();
        for b in 0..n {
            for px in 0..hw {
                let lab = labels[b * hw + px];
                if lab == ignore {
                    continue;
                }
                assert!(
                    (lab as usize) < c,
                    "label {lab} out of range for {c} classes"
                );
                acc -= class_weights[lab as usize] * lp[(b * c + lab as usize) * hw + px];
            }
        }
        drop(lp);
        let labels = labels.to_vec();
        let weights = class_weights.to_vec();
        Tensor::from_op(
            vec![1],
            vec![acc * norm],
            vec![self.clone()],
            move |g, _, slots| {
                if let Some(s) = &mut slots[0] {
                    for b in 0..n {
                        for px in 0..hw {
                            let lab = labels[b * hw + px];
                            if lab == ignore {
                                continue;
                            }
                            s[(b * c + lab as usize) * hw + px] -=
                                g[0] * weights[lab as usize] * norm;
                        }
                    }
                }
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::super::Tensor;

    #[test]
    fn nll_single_pixel_half_probability() {
        // C=2, p0 = 0.5 -> loss = -ln 0.5
        let lp = Tensor::<f64>::from_f64s(&[1, 2, 1, 1], &[0.5f64.ln(), 0.5f64.ln()]);
        let loss = lp.weighted_nll(&[0], &[1.0, 1.0], u32::MAX);
        assert!((loss.item() - 0.693147).abs() < 1e-6);
    }

    #[test]
    fn ignored_pixels_contribute_nothing() {
        let lp = Tensor::<f64>::from_f64s(&[1, 2, 1, 2], &[-1.0, -9.0, -2.0, -9.0]);
        let loss = lp.weighted_nll(&[0, 0], &[1.0, 1.0], 0);
        assert_eq!(loss.item(), 0.0);
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn out_of_range_label_rejected() {
        let lp = Tensor::<f64>::zeros(&[1, 2, 1, 1]);
        let _ = lp.weighted_nll(&[5], &[1.0, 1.0], 0);
    }
}
