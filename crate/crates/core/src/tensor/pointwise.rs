//! Elementwise ops: add/mul with NCHW broadcasting, activations, channel
//! log-softmax, channel tiling/concat/reduction, reshape.
//!
//! Equal shapes and the `(N,1,H,W)` channel-gate pattern take direct paths;
//! other broadcasts go through coordinate expansion.

use super::{strides, Elem, Tensor};

/// Broadcast result shape: ranks must match after left-padding with 1s and
/// every extent pair must be equal or contain a 1.
fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let rank = a.len().max(b.len());
    let pad = |s: &[usize]| {
        let mut v = vec![1usize; rank];
        v[rank - s.len()..].copy_from_slice(s);
        v
    };
    let (pa, pb) = (pad(a), pad(b));
    pa.iter()
        .zip(&pb)
        .map(|(&x, &y)| {
            assert!(
                x == y || x == 1 || y == 1,
                "shapes {:?} and {:?} are not broadcast-compatible",
                a,
                b
            );
            x.max(y)
        })
        .collect()
}

fn pad_shape(s: &[usize], rank: usize) -> Vec<usize> {
    let mut v = vec![1usize; rank];
    v[rank - s.len()..].copy_from_slice(s);
    v
}

/// Expand `data` of `shape` to `out_shape` (extent-1 dims repeat).
fn expand<E: Elem>(data: &[E], shape: &[usize], out_shape: &[usize]) -> Vec<E> {
    if shape == out_shape {
        return data.to_vec();
    }
    let rank = out_shape.len();
    let shape = pad_shape(shape, rank);
    let in_strides = strides(&shape);
    let numel: usize = out_shape.iter().product();
    let mut out = vec![E::zero(); numel];
    let mut coords = vec![0usize; rank];
    for (flat, slot) in out.iter_mut().enumerate() {
        let mut rem = flat;
        for d in (0..rank).rev() {
            coords[d] = rem % out_shape[d];
            rem /= out_shape[d];
        }
        let mut idx = 0;
        for d in 0..rank {
            let c = if shape[d] == 1 { 0 } else { coords[d] };
            idx += c * in_strides[d];
        }
        *slot = data[idx];
    }
    out
}

/// Sum `grad` (of `grad_shape`) down to `target_shape` along broadcast dims,
/// accumulating into `out`.
fn reduce_into<E: Elem>(grad: &[E], grad_shape: &[usize], target_shape: &[usize], out: &mut [E]) {
    let rank = grad_shape.len();
    let target = pad_shape(target_shape, rank);
    if target == grad_shape {
        for (a, &b) in out.iter_mut().zip(grad) {
            *a += b;
        }
        return;
    }
    let t_strides = strides(&target);
    let mut coords = vec![0usize; rank];
    for (flat, &g) in grad.iter().enumerate() {
        let mut rem = flat;
        for d in (0..rank).rev() {
            coords[d] = rem % grad_shape[d];
            rem /= grad_shape[d];
        }
        let mut idx = 0;
        for d in 0..rank {
            let c = if target[d] == 1 { 0 } else { coords[d] };
            idx += c * t_strides[d];
        }
        out[idx] += g;
    }
}

/// Does `gate` look like a per-pixel gate `(N,1,H,W)` against `x: (N,C,H,W)`?
fn is_channel_gate(x: &[usize], gate: &[usize]) -> bool {
    x.len() == 4
        && gate.len() == 4
        && gate[1] == 1
        && x[1] >= 1
        && gate[0] == x[0]
        && gate[2] == x[2]
        && gate[3] == x[3]
}

impl<E: Elem> Tensor<E> {
    /// Elementwise addition with broadcasting.
    pub fn add(&self, other: &Tensor<E>) -> Tensor<E> {
        if self.shape() == other.shape() {
            let data: Vec<E> = self
                .data()
                .iter()
                .zip(other.data().iter())
                .map(|(&a, &b)| a + b)
                .collect();
            return Tensor::from_op(
                self.shape().to_vec(),
                data,
                vec![self.clone(), other.clone()],
                move |g, _, slots| {
                    for slot in slots.iter_mut() {
                        if let Some(s) = slot {
                            for (a, &b) in s.iter_mut().zip(g) {
                                *a += b;
                            }
                        }
                    }
                },
            );
        }
        let out_shape = broadcast_shape(self.shape(), other.shape());
        let a = expand(&self.data(), self.shape(), &out_shape);
        let b = expand(&other.data(), other.shape(), &out_shape);
        let data: Vec<E> = a.iter().zip(&b).map(|(&x, &y)| x + y).collect();
        let (a_shape, b_shape) = (self.shape().to_vec(), other.shape().to_vec());
        let gs = out_shape.clone();
        Tensor::from_op(
            out_shape,
            data,
            vec![self.clone(), other.clone()],
            move |g, _, slots| {
                if let Some(sa) = &mut slots[0] {
                    reduce_into(g, &gs, &a_shape, sa);
                }
                if let Some(sb) = &mut slots[1] {
                    reduce_into(g, &gs, &b_shape, sb);
                }
            },
        )
    }

    /// Elementwise multiplication with broadcasting.
    pub fn mul(&self, other: &Tensor<E>) -> Tensor<E> {
        if self.shape() == other.shape() {
            return mul_same(self, other);
        }
        if is_channel_gate(self.shape(), other.shape()) {
            return mul_gate(self, other);
        }
        if is_channel_gate(other.shape(), self.shape()) {
            return mul_gate(other, self);
        }
        mul_general(self, other)
    }

    pub fn sub(&self, other: &Tensor<E>) -> Tensor<E> {
        self.add(&other.scale(-1.0))
    }

    /// Multiply by a constant.
    pub fn scale(&self, factor: f64) -> Tensor<E> {
        let f = E::of(factor);
        let data: Vec<E> = self.data().iter().map(|&x| x * f).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            move |g, _, slots| {
                if let Some(s) = &mut slots[0] {
                    for (a, &b) in s.iter_mut().zip(g) {
                        *a += b * f;
                    }
                }
            },
        )
    }

    /// Logistic sigmoid; output strictly inside (0, 1) in exact arithmetic.
    pub fn sigmoid(&self) -> Tensor<E> {
        let data: Vec<E> = self
            .data()
            .iter()
            .map(|&x| {
                // stable in both tails
                if x >= E::zero() {
                    E::one() / (E::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (E::one() + e)
                }
            })
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            move |g, out, slots| {
                if let Some(s) = &mut slots[0] {
                    for ((a, &gv), &yv) in s.iter_mut().zip(g).zip(out) {
                        *a += gv * yv * (E::one() - yv);
                    }
                }
            },
        )
    }

    /// Leaky rectifier: `x` for positive inputs, `slope * x` otherwise.
    pub fn leaky_relu(&self, slope: f64) -> Tensor<E> {
        let s = E::of(slope);
        let data: Vec<E> = self
            .data()
            .iter()
            .map(|&v| if v > E::zero() { v } else { v * s })
            .collect();
        let input = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            move |g, _, slots| {
                if let Some(sl) = &mut slots[0] {
                    let x = input.data();
                    for ((a, &gv), &xv) in sl.iter_mut().zip(g).zip(x.iter()) {
                        *a += if xv > E::zero() { gv } else { gv * s };
                    }
                }
            },
        )
    }

    pub fn relu(&self) -> Tensor<E> {
        self.leaky_relu(0.0)
    }

    /// Log-softmax over the channel dimension of an NCHW tensor.
    pub fn log_softmax_channels(&self) -> Tensor<E> {
        let [n, c, h, w] = self.dims4();
        let x = self.data();
        let hw = h * w;
        let mut out = vec![E::zero(); x.len()];
        for b in 0..n {
            for px in 0..hw {
                let base = b * c * hw + px;
                let mut m = E::neg_infinity();
                for ch in 0..c {
                    m = m.max(x[base + ch * hw]);
                }
                let mut lse = E::zero();
                for ch in 0..c {
                    lse += (x[base + ch * hw] - m).exp();
                }
                let lse = m + lse.ln();
                for ch in 0..c {
                    out[base + ch * hw] = x[base + ch * hw] - lse;
                }
            }
        }
        drop(x);
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            move |g, y, slots| {
                if let Some(s) = &mut slots[0] {
                    for b in 0..n {
                        for px in 0..hw {
                            let base = b * c * hw + px;
                            let mut gsum = E::zero();
                            for ch in 0..c {
                                gsum += g[base + ch * hw];
                            }
                            for ch in 0..c {
                                let i = base + ch * hw;
                                s[i] += g[i] - y[i].exp() * gsum;
                            }
                        }
                    }
                }
            },
        )
    }

    /// Repeat the channel block `reps` times: `(N,C,H,W) -> (N, reps*C, H, W)`
    /// with `out[n, r*C + c] = in[n, c]`.
    pub fn tile_channels(&self, reps: usize) -> Tensor<E> {
        assert!(reps >= 1, "tile_channels requires reps >= 1");
        let [n, c, h, w] = self.dims4();
        let hw = h * w;
        let x = self.data();
        let mut out = vec![E::zero(); n * reps * c * hw];
        for b in 0..n {
            for r in 0..reps {
                for ch in 0..c {
                    let src = (b * c + ch) * hw;
                    let dst = (b * reps * c + r * c + ch) * hw;
                    out[dst..dst + hw].copy_from_slice(&x[src..src + hw]);
                }
            }
        }
        drop(x);
        Tensor::from_op(
            vec![n, reps * c, h, w],
            out,
            vec![self.clone()],
            move |g, _, slots| {
                if let Some(s) = &mut slots[0] {
                    for b in 0..n {
                        for r in 0..reps {
                            for ch in 0..c {
                                let dst = (b * c + ch) * hw;
                                let src = (b * reps * c + r * c + ch) * hw;
                                for k in 0..hw {
                                    s[dst + k] += g[src + k];
                                }
                            }
                        }
                    }
                }
            },
        )
    }

    /// View with a new shape of equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Tensor<E> {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            self.numel(),
            "reshape from {:?} to {:?} changes element count",
            self.shape(),
            shape
        );
        Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            move |g, _, slots| {
                if let Some(s) = &mut slots[0] {
                    for (a, &b) in s.iter_mut().zip(g) {
                        *a += b;
                    }
                }
            },
        )
    }

    /// Concatenate along the channel dimension.
    pub fn concat_channels(parts: &[Tensor<E>]) -> Tensor<E> {
        assert!(!parts.is_empty(), "concat_channels requires at least one input");
        let [n, _, h, w] = parts[0].dims4();
        let hw = h * w;
        let cs: Vec<usize> = parts
            .iter()
            .map(|p| {
                let [pn, pc, ph, pw] = p.dims4();
                assert_eq!(
                    (pn, ph, pw),
                    (n, h, w),
                    "concat_channels inputs must agree on N, H, W"
                );
                pc
            })
            .collect();
        let c_total: usize = cs.iter().sum();
        let mut out = vec![E::zero(); n * c_total * hw];
        for b in 0..n {
            let mut off = 0;
            for (p, &pc) in parts.iter().zip(&cs) {
                let x = p.data();
                let src = b * pc * hw;
                let dst = (b * c_total + off) * hw;
                out[dst..dst + pc * hw].copy_from_slice(&x[src..src + pc * hw]);
                off += pc;
            }
        }
        let cs2 = cs.clone();
        Tensor::from_op(
            vec![n, c_total, h, w],
            out,
            parts.to_vec(),
            move |g, _, slots| {
                let mut off = 0;
                for (i, &pc) in cs2.iter().enumerate() {
                    if let Some(s) = &mut slots[i] {
                        for b in 0..n {
                            let src = (b * c_total + off) * hw;
                            let dst = b * pc * hw;
                            for k in 0..pc * hw {
                                s[dst + k] += g[src + k];
                            }
                        }
                    }
                    off += pc;
                }
            },
        )
    }

    /// Mean over channels: `(N,C,H,W) -> (N,1,H,W)`.
    pub fn channel_mean(&self) -> Tensor<E> {
        let [n, c, h, w] = self.dims4();
        let hw = h * w;
        let x = self.data();
        let inv = E::of(1.0 / c as f64);
        let mut out = vec![E::zero(); n * hw];
        for b in 0..n {
            for px in 0..hw {
                let mut s = E::zero();
                for ch in 0..c {
                    s += x[(b * c + ch) * hw + px];
                }
                out[b * hw + px] = s * inv;
            }
        }
        drop(x);
        Tensor::from_op(
            vec![n, 1, h, w],
            out,
            vec![self.clone()],
            move |g, _, slots| {
                if let Some(s) = &mut slots[0] {
                    for b in 0..n {
                        for px in 0..hw {
                            let gv = g[b * hw + px] * inv;
                            for ch in 0..c {
                                s[(b * c + ch) * hw + px] += gv;
                            }
                        }
                    }
                }
            },
        )
    }

    /// Max over channels: `(N,C,H,W) -> (N,1,H,W)`. Ties keep the lowest
    /// channel index.
    pub fn channel_max(&self) -> Tensor<E> {
        let [n, c, h, w] = self.dims4();
        let hw = h * w;
        let x = self.data();
        let mut out = vec![E::zero(); n * hw];
        let mut arg = vec![0u32; n * hw];
        for b in 0..n {
            for px in 0..hw {
                let mut best = x[b * c * hw + px];
                let mut best_ch = 0u32;
                for ch in 1..c {
                    let v = x[(b * c + ch) * hw + px];
                    if v > best {
                        best = v;
                        best_ch = ch as u32;
                    }
                }
                out[b * hw + px] = best;
                arg[b * hw + px] = best_ch;
            }
        }
        drop(x);
        Tensor::from_op(
            vec![n, 1, h, w],
            out,
            vec![self.clone()],
            move |g, _, slots| {
                if let Some(s) = &mut slots[0] {
                    for b in 0..n {
                        for px in 0..hw {
                            let ch = arg[b * hw + px] as usize;
                            s[(b * c + ch) * hw + px] += g[b * hw + px];
                        }
                    }
                }
            },
        )
    }
}

fn mul_same<E: Elem>(a: &Tensor<E>, b: &Tensor<E>) -> Tensor<E> {
    let data: Vec<E> = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| x * y)
        .collect();
    let (ka, kb) = (a.clone(), b.clone());
    Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        move |g, _, slots| {
            if let Some(sa) = &mut slots[0] {
                let bd = kb.data();
                for ((s, &gv), &bv) in sa.iter_mut().zip(g).zip(bd.iter()) {
                    *s += gv * bv;
                }
            }
            if let Some(sb) = &mut slots[1] {
                let ad = ka.data();
                for ((s, &gv), &av) in sb.iter_mut().zip(g).zip(ad.iter()) {
                    *s += gv * av;
                }
            }
        },
    )
}

/// `x: (N,C,H,W)` times a per-pixel gate `(N,1,H,W)` broadcast over channels.
/// Parent order in the result is `[x, gate]`.
fn mul_gate<E: Elem>(x: &Tensor<E>, gate: &Tensor<E>) -> Tensor<E> {
    let [n, c, h, w] = x.dims4();
    let hw = h * w;
    let xd = x.data();
    let gd = gate.data();
    let mut out = vec![E::zero(); n * c * hw];
    for b in 0..n {
        let gplane = &gd[b * hw..(b + 1) * hw];
        for ch in 0..c {
            let src = &xd[(b * c + ch) * hw..][..hw];
            let dst = &mut out[(b * c + ch) * hw..][..hw];
            for ((d, &xv), &gv) in dst.iter_mut().zip(src).zip(gplane) {
                *d = xv * gv;
            }
        }
    }
    drop(xd);
    drop(gd);
    let (kx, kg) = (x.clone(), gate.clone());
    Tensor::from_op(
        vec![n, c, h, w],
        out,
        vec![x.clone(), gate.clone()],
        move |g, _, slots| {
            if let Some(sx) = &mut slots[0] {
                let gd = kg.data();
                for b in 0..n {
                    let gplane = &gd[b * hw..(b + 1) * hw];
                    for ch in 0..c {
                        let dst = &mut sx[(b * c + ch) * hw..][..hw];
                        let gr = &g[(b * c + ch) * hw..][..hw];
                        for ((s, &gv), &av) in dst.iter_mut().zip(gr).zip(gplane) {
                            *s += gv * av;
                        }
                    }
                }
            }
            if let Some(sg) = &mut slots[1] {
                let xd = kx.data();
                for b in 0..n {
                    let dst = &mut sg[b * hw..(b + 1) * hw];
                    for ch in 0..c {
                        let xr = &xd[(b * c + ch) * hw..][..hw];
                        let gr = &g[(b * c + ch) * hw..][..hw];
                        for ((s, &gv), &xv) in dst.iter_mut().zip(gr).zip(xr) {
                            *s += gv * xv;
                        }
                    }
                }
            }
        },
    )
}

fn mul_general<E: Elem>(a: &Tensor<E>, b: &Tensor<E>) -> Tensor<E> {
    let out_shape = broadcast_shape(a.shape(), b.shape());
    let a_exp = expand(&a.data(), a.shape(), &out_shape);
    let b_exp = expand(&b.data(), b.shape(), &out_shape);
    let data: Vec<E> = a_exp.iter().zip(&b_exp).map(|(&x, &y)| x * y).collect();
    let (a_shape, b_shape) = (a.shape().to_vec(), b.shape().to_vec());
    let gs = out_shape.clone();
    Tensor::from_op(
        out_shape,
        data,
        vec![a.clone(), b.clone()],
        move |g, _, slots| {
            if let Some(sa) = &mut slots[0] {
                let gb: Vec<E> = g.iter().zip(&b_exp).map(|(&x, &y)| x * y).collect();
                reduce_into(&gb, &gs, &a_shape, sa);
            }
            if let Some(sb) = &mut slots[1] {
                let ga: Vec<E> = g.iter().zip(&a_exp).map(|(&x, &y)| x * y).collect();
                reduce_into(&ga, &gs, &b_shape, sb);
            }
        },
    )
}

#[cfg(test)]
mod tests {
    use super::super::Tensor;

    #[test]
    fn mul_by_ones_is_identity() {
        let x = Tensor::<f64>::from_f64s(&[1, 2, 2, 2], &[1.0, -2.0, 3.0, 4.0, 0.5, 6.0, 7.0, 8.0]);
        let ones = Tensor::<f64>::full(&[1, 2, 2, 2], 1.0);
        assert_eq!(x.mul(&ones).to_vec(), x.to_vec());
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let x = Tensor::<f64>::scalar(0.0);
        assert_eq!(x.sigmoid().item(), 0.5);
    }

    #[test]
    fn sigmoid_strictly_inside_unit_interval() {
        let x = Tensor::<f64>::from_f64s(&[5], &[-30.0, -1.0, 0.0, 1.0, 30.0]);
        for v in x.sigmoid().to_vec() {
            assert!(v > 0.0 && v < 1.0, "sigmoid value {v} escaped (0,1)");
        }
    }

    #[test]
    fn exp_log_softmax_rows_sum_to_one() {
        let mut vals = Vec::new();
        let mut state = 0x9e3779b97f4a7c15u64;
        for _ in 0..2 * 5 * 3 * 4 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            vals.push(((state >> 11) as f64 / (1u64 << 53) as f64) * 8.0 - 4.0);
        }
        let x = Tensor::<f64>::from_f64s(&[2, 5, 3, 4], &vals);
        let y = x.log_softmax_channels();
        let d = y.to_vec();
        let hw = 12;
        for n in 0..2 {
            for px in 0..hw {
                let s: f64 = (0..5).map(|c| d[n * 5 * hw + c * hw + px].exp()).sum();
                assert!((s - 1.0).abs() <= 1e-12, "softmax sum {s}");
            }
        }
    }

    #[test]
    fn broadcast_mul_channel_gate() {
        // (N,1,H,W) gate against (N,C,H,W), both argument orders
        let x = Tensor::<f64>::from_f64s(&[1, 2, 1, 2], &[1.0, 2.0, 3.0, 4.0]);
        let a = Tensor::<f64>::from_f64s(&[1, 1, 1, 2], &[10.0, 100.0]);
        assert_eq!(x.mul(&a).to_vec(), vec![10.0, 200.0, 30.0, 400.0]);
        assert_eq!(a.mul(&x).to_vec(), vec![10.0, 200.0, 30.0, 400.0]);
    }

    #[test]
    fn gate_gradients_accumulate_over_channels() {
        let x = Tensor::<f64>::param(&[1, 2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let a = Tensor::<f64>::param(&[1, 1, 1, 2], vec![10.0, 100.0]);
        x.mul(&a).sum_all().backward();
        assert_eq!(x.grad().unwrap(), vec![10.0, 100.0, 10.0, 100.0]);
        assert_eq!(a.grad().unwrap(), vec![4.0, 6.0]); // 1+3, 2+4
    }

    #[test]
    fn spatial_broadcast_mul_channel_scale() {
        // SE-style (N,C,1,1) scale
        let x = Tensor::<f64>::from_f64s(&[1, 2, 1, 2], &[1.0, 2.0, 3.0, 4.0]);
        let s = Tensor::<f64>::from_f64s(&[1, 2, 1, 1], &[2.0, -1.0]);
        assert_eq!(x.mul(&s).to_vec(), vec![2.0, 4.0, -3.0, -4.0]);
    }

    #[test]
    #[should_panic(expected = "not broadcast-compatible")]
    fn non_broadcastable_rejected() {
        let x = Tensor::<f64>::zeros(&[1, 2, 2, 2]);
        let y = Tensor::<f64>::zeros(&[1, 3, 2, 2]);
        let _ = x.add(&y);
    }

    #[test]
    fn tile_channels_layout() {
        let x = Tensor::<f64>::from_f64s(&[1, 2, 1, 1], &[5.0, 7.0]);
        let t = x.tile_channels(3);
        assert_eq!(t.shape(), &[1, 6, 1, 1]);
        assert_eq!(t.to_vec(), vec![5.0, 7.0, 5.0, 7.0, 5.0, 7.0]);
    }

    #[test]
    fn concat_and_channel_reductions() {
        let a = Tensor::<f64>::from_f64s(&[1, 1, 1, 2], &[1.0, 2.0]);
        let b = Tensor::<f64>::from_f64s(&[1, 2, 1, 2], &[3.0, 4.0, 5.0, 6.0]);
        let c = Tensor::concat_channels(&[a, b]);
        assert_eq!(c.shape(), &[1, 3, 1, 2]);
        assert_eq!(c.to_vec(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(c.channel_mean().to_vec(), vec![3.0, 4.0]);
        assert_eq!(c.channel_max().to_vec(), vec![5.0, 6.0]);
    }
}
