//! Per-channel batch normalization with running statistics.

use std::cell::RefCell;

use super::{Elem, Tensor};

/// Batch normalization over an NCHW tensor. Training mode normalizes with
/// batch statistics and updates the running estimates; eval mode normalizes
/// with the running estimates. Running variance is the biased estimate.
pub struct BatchNorm<E: Elem> {
    pub gamma: Tensor<E>,
    pub beta: Tensor<E>,
    running_mean: RefCell<Vec<E>>,
    running_var: RefCell<Vec<E>>,
    pub momentum: f64,
    pub eps: f64,
}

impl<E: Elem> BatchNorm<E> {
    pub fn new(channels: usize, eps: f64, momentum: f64) -> Self {
        BatchNorm {
            gamma: Tensor::param(&[channels], vec![E::one(); channels]),
            beta: Tensor::param(&[channels], vec![E::zero(); channels]),
            running_mean: RefCell::new(vec![E::zero(); channels]),
            running_var: RefCell::new(vec![E::one(); channels]),
            momentum,
            eps,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }

    pub fn running_mean(&self) -> Vec<E> {
        self.running_mean.borrow().clone()
    }

    pub fn running_var(&self) -> Vec<E> {
        self.running_var.borrow().clone()
    }

    pub fn set_running_stats(&self, mean: Vec<E>, var: Vec<E>) {
        assert_eq!(mean.len(), self.channels(), "running mean length mismatch");
        assert_eq!(var.len(), self.channels(), "running var length mismatch");
        *self.running_mean.borrow_mut() = mean;
        *self.running_var.borrow_mut() = var;
    }

    pub fn forward(&self, x: &Tensor<E>, training: bool) -> Tensor<E> {
        let [n, c, h, w] = x.dims4();
        assert_eq!(c, self.channels(), "batch norm channel mismatch");
        let hw = h * w;
        let m = n * hw;
        let inv_m = E::of(1.0 / m as f64);
        let eps = E::of(self.eps);

        let (mean, var) = if training {
            let xd = x.data();
            let mut mean = vec![E::zero(); c];
            let mut var = vec![E::zero(); c];
            for ch in 0..c {
                let mut s = E::zero();
                for b in 0..n {
                    for v in &xd[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                        s += *v;
                    }
                }
                let mu = s * inv_m;
                let mut sq = E::zero();
                for b in 0..n {
                    for v in &xd[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                        let d = *v - mu;
                        sq += d * d;
                    }
                }
                mean[ch] = mu;
                var[ch] = sq * inv_m;
            }
            drop(xd);
            // update running estimates
            let mom = E::of(self.momentum);
            let keep = E::one() - mom;
            {
                let mut rm = self.running_mean.borrow_mut();
                let mut rv = self.running_var.borrow_mut();
                for ch in 0..c {
                    rm[ch] = rm[ch] * keep + mean[ch] * mom;
                    rv[ch] = rv[ch] * keep + var[ch] * mom;
                }
            }
            (mean, var)
        } else {
            (self.running_mean(), self.running_var())
        };

        let inv_std: Vec<E> = var.iter().map(|&v| E::one() / (v + eps).sqrt()).collect();
        let gamma_d = self.gamma.to_vec();
        let beta_d = self.beta.to_vec();
        let mut out = vec![E::zero(); x.numel()];
        {
            let xd = x.data();
            for b in 0..n {
                for ch in 0..c {
                    let base = (b * c + ch) * hw;
                    let (mu, is, ga, be) = (mean[ch], inv_std[ch], gamma_d[ch], beta_d[ch]);
                    for k in 0..hw {
                        out[base + k] = (xd[base + k] - mu) * is * ga + be;
                    }
                }
            }
        }

        let x_keep = x.clone();
        let parents = vec![x.clone(), self.gamma.clone(), self.beta.clone()];
        Tensor::from_op(vec![n, c, h, w], out, parents, move |g, _, slots| {
            // x_hat[i] = (x[i] - mu) * inv_std
            let xd = x_keep.data();
            let stat_grads = training;
            if let Some(gb) = &mut slots[2] {
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * hw;
                        let mut s = E::zero();
                        for k in 0..hw {
                            s += g[base + k];
                        }
                        gb[ch] += s;
                    }
                }
            }
            if let Some(gg) = &mut slots[1] {
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * hw;
                        let (mu, is) = (mean[ch], inv_std[ch]);
                        let mut s = E::zero();
                        for k in 0..hw {
                            s += g[base + k] * (xd[base + k] - mu) * is;
                        }
                        gg[ch] += s;
                    }
                }
            }
            if let Some(gx) = &mut slots[0] {
                for ch in 0..c {
                    let (mu, is, ga) = (mean[ch], inv_std[ch], gamma_d[ch]);
                    if stat_grads {
                        // batch statistics participate in the graph
                        let mut g_sum = E::zero();
                        let mut gx_hat_sum = E::zero();
                        for b in 0..n {
                            let base = (b * c + ch) * hw;
                            for k in 0..hw {
                                let gv = g[base + k];
                                g_sum += gv;
                                gx_hat_sum += gv * (xd[base + k] - mu) * is;
                            }
                        }
                        let g_mean = g_sum * inv_m;
                        let gx_hat_mean = gx_hat_sum * inv_m;
                        for b in 0..n {
                            let base = (b * c + ch) * hw;
                            for k in 0..hw {
                                let x_hat = (xd[base + k] - mu) * is;
                                gx[base + k] +=
                                    ga * is * (g[base + k] - g_mean - x_hat * gx_hat_mean);
                            }
                        }
                    } else {
                        let scale = ga * is;
                        for b in 0..n {
                            let base = (b * c + ch) * hw;
                            for k in 0..hw {
                                gx[base + k] += g[base + k] * scale;
                            }
                        }
                    }
                }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_batch_statistics() {
        let x = Tensor::<f64>::from_f64s(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let bn = BatchNorm::<f64>::new(1, 1e-5, 0.1);
        let y = bn.forward(&x, true);
        let d = y.to_vec();
        let mean: f64 = d.iter().sum::<f64>() / 4.0;
        let var: f64 = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn running_stats_move_toward_batch() {
        let x = Tensor::<f64>::from_f64s(&[1, 1, 1, 2], &[10.0, 14.0]);
        let bn = BatchNorm::<f64>::new(1, 1e-5, 0.5);
        bn.forward(&x, true);
        assert!((bn.running_mean()[0] - 6.0).abs() < 1e-12); // 0.5*0 + 0.5*12
        // eval mode uses the running estimates, not the batch
        let y = bn.forward(&x, false);
        let d = y.to_vec();
        assert!(d[0] > 0.0 && d[1] > d[0]);
    }
}
