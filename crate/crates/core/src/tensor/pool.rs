//! Pooling: stride-1 max pooling (window centered, out-of-bounds excluded),
//! global average pooling, and 2x2 average downsampling.

use super::{Elem, Tensor};

impl<E: Elem> Tensor<E> {
    /// Max pooling with a centered `k x k` window, stride 1, spatial extent
    /// preserved. Out-of-bounds positions are excluded from the window.
    pub fn max_pool(&self, k: usize) -> Tensor<E> {
        assert!(k % 2 == 1, "max_pool kernel must be odd, got {k}");
        let [n, c, h, w] = self.dims4();
        assert!(h > 0 && w > 0, "max_pool on empty spatial extent");
        let pad = k / 2;
        let x = self.data();
        let mut out = vec![E::zero(); n * c * h * w];
        let mut arg = vec![0u32; n * c * h * w];
        for bc in 0..n * c {
            let plane = &x[bc * h * w..][..h * w];
            for p in 0..h {
                for q in 0..w {
                    let mut best = E::neg_infinity();
                    let mut best_idx = 0usize;
                    for i in 0..k {
                        let ih = p as isize + i as isize - pad as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        for j in 0..k {
                            let iw = q as isize + j as isize - pad as isize;
                            if iw < 0 || iw >= w as isize {
                                continue;
                            }
                            let idx = ih as usize * w + iw as usize;
                            if plane[idx] > best {
                                best = plane[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out[bc * h * w + p * w + q] = best;
                    arg[bc * h * w + p * w + q] = best_idx as u32;
                }
            }
        }
        drop(x);
        Tensor::from_op(
            vec![n, c, h, w],
            out,
            vec![self.clone()],
            move |g, _, slots| {
                if let Some(s) = &mut slots[0] {
                    for bc in 0..n * c {
                        for px in 0..h * w {
                            s[bc * h * w + arg[bc * h * w + px] as usize] += g[bc * h * w + px];
                        }
                    }
                }
            },
        )
    }

    /// Global average pooling: `(N,C,H,W) -> (N,C,1,1)`.
    pub fn global_avg_pool(&self) -> Tensor<E> {
        let [n, c, h, w] = self.dims4();
        assert!(h > 0 && w > 0, "global_avg_pool on empty spatial extent");
        let hw = h * w;
        let inv = E::of(1.0 / hw as f64);
        let x = self.data();
        let mut out = vec![E::zero(); n * c];
        for bc in 0..n * c {
            let mut s = E::zero();
            for v in &x[bc * hw..(bc + 1) * hw] {
                s += *v;
            }
            out[bc] = s * inv;
        }
        drop(x);
        Tensor::from_op(
            vec![n, c, 1, 1],
            out,
            vec![self.clone()],
            move |g, _, slots| {
                if let Some(s) = &mut slots[0] {
                    for bc in 0..n * c {
                        let gv = g[bc] * inv;
                        for v in &mut s[bc * hw..(bc + 1) * hw] {
                            *v += gv;
                        }
                    }
                }
            },
        )
    }

    /// 2x2 average downsampling (stride 2); requires even spatial dims.
    pub fn avg_pool2(&self) -> Tensor<E> {
        let [n, c, h, w] = self.dims4();
        assert!(
            h % 2 == 0 && w % 2 == 0 && h > 0 && w > 0,
            "avg_pool2 requires positive even spatial dims, got {h}x{w}"
        );
        let (oh, ow) = (h / 2, w / 2);
        let quarter = E::of(0.25);
        let x = self.data();
        let mut out = vec![E::zero(); n * c * oh * ow];
        for bc in 0..n * c {
            let plane = &x[bc * h * w..][..h * w];
            let oplane = &mut out[bc * oh * ow..][..oh * ow];
            for p in 0..oh {
                for q in 0..ow {
                    let i = 2 * p * w + 2 * q;
                    oplane[p * ow + q] =
                        (plane[i] + plane[i + 1] + plane[i + w] + plane[i + w + 1]) * quarter;
                }
            }
        }
        drop(x);
        Tensor::from_op(
            vec![n, c, oh, ow],
            out,
            vec![self.clone()],
            move |g, _, slots| {
                if let Some(s) = &mut slots[0] {
                    for bc in 0..n * c {
                        for p in 0..oh {
                            for q in 0..ow {
                                let gv = g[bc * oh * ow + p * ow + q] * quarter;
                                let i = bc * h * w + 2 * p * w + 2 * q;
                                s[i] += gv;
                                s[i + 1] += gv;
                                s[i + w] += gv;
                                s[i + w + 1] += gv;
                            }
                        }
                    }
                }
            },
        )
    }
}
