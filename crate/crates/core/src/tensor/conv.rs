//! 2-d convolution with zero padding, the unfold (im2col) scheduling, and
//! transposed convolution for the decoder.
//!
//! The unfold channel-block ordering is fixed as `(c, i, j)` lexicographic:
//! output channel `c*K*K + i*K + j` at location `(p, q)` holds
//! `x[c, p + i - K/2, q + j - K/2]`. Reshaping a weight of shape `(O, I, K, K)`
//! row-major to `(O, I*K*K, 1, 1)` therefore makes a 1x1 convolution over the
//! unfolded tensor equal to the direct convolution.

use crate::error::{Error, Result};

use super::{Elem, Tensor};

/// Standard convolution parameters: weight `(O, I, K, K)` with odd `K`,
/// optional bias `(O)`, stride and zero padding.
#[derive(Clone)]
pub struct ConvSpec<E: Elem> {
    weight: Tensor<E>,
    bias: Option<Tensor<E>>,
    stride: usize,
    padding: usize,
}

impl<E: Elem> ConvSpec<E> {
    pub fn new(
        weight: Tensor<E>,
        bias: Option<Tensor<E>>,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let shape = weight.shape();
        if shape.len() != 4 {
            return Err(Error::Dimension(format!(
                "convolution weight must be 4-d (O, I, K, K), got {shape:?}"
            )));
        }
        let (k_h, k_w) = (shape[2], shape[3]);
        if k_h != k_w {
            return Err(Error::Dimension(format!(
                "convolution kernel must be square, got {k_h}x{k_w}"
            )));
        }
        if k_h % 2 == 0 {
            return Err(Error::Config(format!(
                "convolution kernel size must be odd so offsets are centered, got {k_h}"
            )));
        }
        if stride == 0 {
            return Err(Error::Config("convolution stride must be positive".into()));
        }
        if let Some(b) = &bias {
            if b.shape() != [shape[0]] {
                return Err(Error::Dimension(format!(
                    "bias shape {:?} does not match output channels {}",
                    b.shape(),
                    shape[0]
                )));
            }
        }
        Ok(ConvSpec {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn weight(&self) -> &Tensor<E> {
        &self.weight
    }

    pub fn bias(&self) -> Option<&Tensor<E>> {
        self.bias.as_ref()
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn padding(&self) -> usize {
        self.padding
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }
}

/// Transposed-convolution parameters: weight `(I, O, K, K)`, used by the
/// decoder upsampling blocks. Output spatial extent is `(H-1)*stride + K`.
#[derive(Clone)]
pub struct DeconvSpec<E: Elem> {
    weight: Tensor<E>,
    bias: Option<Tensor<E>>,
    stride: usize,
}

impl<E: Elem> DeconvSpec<E> {
    pub fn new(weight: Tensor<E>, bias: Option<Tensor<E>>, stride: usize) -> Result<Self> {
        let shape = weight.shape();
        if shape.len() != 4 || shape[2] != shape[3] {
            return Err(Error::Dimension(format!(
                "transposed-convolution weight must be (I, O, K, K), got {shape:?}"
            )));
        }
        if stride == 0 {
            return Err(Error::Config("stride must be positive".into()));
        }
        if let Some(b) = &bias {
            if b.shape() != [shape[1]] {
                return Err(Error::Dimension(format!(
                    "bias shape {:?} does not match output channels {}",
                    b.shape(),
                    shape[1]
                )));
            }
        }
        Ok(DeconvSpec {
            weight,
            bias,
            stride,
        })
    }

    pub fn weight(&self) -> &Tensor<E> {
        &self.weight
    }

    pub fn bias(&self) -> Option<&Tensor<E>> {
        self.bias.as_ref()
    }
}

fn conv_out_extent(extent: usize, k: usize, stride: usize, pad: usize) -> usize {
    let padded = extent + 2 * pad;
    assert!(
        padded >= k,
        "kernel {k} does not fit input extent {extent} with padding {pad}"
    );
    (padded - k) / stride + 1
}

// ---------------------------------------------------------------------------
// Raw kernels over flat slices. Inner loops run over contiguous row segments.
// ---------------------------------------------------------------------------

/// Valid output-column range [q0, q1) such that `q*stride + j - pad` lies in
/// [0, w) for every q in the range, assuming stride 1.
fn col_range(w: usize, ow: usize, j: usize, pad: usize) -> (usize, usize, isize) {
    let off = j as isize - pad as isize;
    let q0 = if off < 0 { (-off) as usize } else { 0 };
    let q1 = ow.min(((w as isize - off).max(0)) as usize);
    (q0, q1.max(q0), off)
}

#[allow(clippy::too_many_arguments)]
fn conv_fwd<E: Elem>(
    x: &[E],
    (n, ci, h, w): (usize, usize, usize, usize),
    wt: &[E],
    (co, k): (usize, usize),
    bias: Option<&[E]>,
    stride: usize,
    pad: usize,
    out: &mut [E],
    (oh, ow): (usize, usize),
) {
    for b in 0..n {
        for m in 0..co {
            let oplane = &mut out[(b * co + m) * oh * ow..][..oh * ow];
            if let Some(bv) = bias {
                oplane.fill(bv[m]);
            }
            for c in 0..ci {
                let xplane = &x[(b * ci + c) * h * w..][..h * w];
                for i in 0..k {
                    for j in 0..k {
                        let wv = wt[((m * ci + c) * k + i) * k + j];
                        if stride == 1 {
                            let (q0, q1, off) = col_range(w, ow, j, pad);
                            if q1 <= q0 {
                                continue;
                            }
                            for p in 0..oh {
                                let ih = p as isize + i as isize - pad as isize;
                                if ih < 0 || ih >= h as isize {
                                    continue;
                                }
                                let xrow = &xplane[ih as usize * w..][..w];
                                let orow = &mut oplane[p * ow..][..ow];
                                let src = &xrow[(q0 as isize + off) as usize..][..q1 - q0];
                                for (d, s) in orow[q0..q1].iter_mut().zip(src) {
                                    *d += wv * *s;
                                }
                            }
                        } else {
                            for p in 0..oh {
                                let ih = (p * stride) as isize + i as isize - pad as isize;
                                if ih < 0 || ih >= h as isize {
                                    continue;
                                }
                                let xrow = &xplane[ih as usize * w..][..w];
                                let orow = &mut oplane[p * ow..][..ow];
                                for (q, d) in orow.iter_mut().enumerate() {
                                    let iw = (q * stride) as isize + j as isize - pad as isize;
                                    if iw >= 0 && iw < w as isize {
                                        *d += wv * xrow[iw as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_bwd_input<E: Elem>(
    gy: &[E],
    (n, co, oh, ow): (usize, usize, usize, usize),
    wt: &[E],
    (ci, k): (usize, usize),
    stride: usize,
    pad: usize,
    gx: &mut [E],
    (h, w): (usize, usize),
) {
    for b in 0..n {
        for c in 0..ci {
            let gxplane = &mut gx[(b * ci + c) * h * w..][..h * w];
            for m in 0..co {
                let gyplane = &gy[(b * co + m) * oh * ow..][..oh * ow];
                for i in 0..k {
                    for j in 0..k {
                        let wv = wt[((m * ci + c) * k + i) * k + j];
                        if stride == 1 {
                            let (q0, q1, off) = col_range(w, ow, j, pad);
                            if q1 <= q0 {
                                continue;
                            }
                            for p in 0..oh {
                                let ih = p as isize + i as isize - pad as isize;
                                if ih < 0 || ih >= h as isize {
                                    continue;
                                }
                                let gyrow = &gyplane[p * ow..][..ow];
                                let base = ih as usize * w;
                                let dst = &mut gxplane
                                    [base + (q0 as isize + off) as usize..][..q1 - q0];
                                for (d, s) in dst.iter_mut().zip(&gyrow[q0..q1]) {
                                    *d += wv * *s;
                                }
                            }
                        } else {
                            for p in 0..oh {
                                let ih = (p * stride) as isize + i as isize - pad as isize;
                                if ih < 0 || ih >= h as isize {
                                    continue;
                                }
                                let gyrow = &gyplane[p * ow..][..ow];
                                for (q, s) in gyrow.iter().enumerate() {
                                    let iw = (q * stride) as isize + j as isize - pad as isize;
                                    if iw >= 0 && iw < w as isize {
                                        gxplane[ih as usize * w + iw as usize] += wv * *s;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_bwd_weight<E: Elem>(
    x: &[E],
    (n, ci, h, w): (usize, usize, usize, usize),
    gy: &[E],
    (co, oh, ow): (usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    gw: &mut [E],
) {
    for b in 0..n {
        for m in 0..co {
            let gyplane = &gy[(b * co + m) * oh * ow..][..oh * ow];
            for c in 0..ci {
                let xplane = &x[(b * ci + c) * h * w..][..h * w];
                for i in 0..k {
                    for j in 0..k {
                        let mut acc = E::zero();
                        if stride == 1 {
                            let (q0, q1, off) = col_range(w, ow, j, pad);
                            if q1 <= q0 {
                                continue;
                            }
                            for p in 0..oh {
                                let ih = p as isize + i as isize - pad as isize;
                                if ih < 0 || ih >= h as isize {
                                    continue;
                                }
                                let xrow = &xplane[ih as usize * w..][..w];
                                let gyrow = &gyplane[p * ow..][..ow];
                                let src = &xrow[(q0 as isize + off) as usize..][..q1 - q0];
                                for (g, s) in gyrow[q0..q1].iter().zip(src) {
                                    acc += *g * *s;
                                }
                            }
                        } else {
                            for p in 0..oh {
                                let ih = (p * stride) as isize + i as isize - pad as isize;
                                if ih < 0 || ih >= h as isize {
                                    continue;
                                }
                                for q in 0..ow {
                                    let iw = (q * stride) as isize + j as isize - pad as isize;
                                    if iw >= 0 && iw < w as isize {
                                        acc += gyplane[p * ow + q]
                                            * xplane[ih as usize * w + iw as usize];
                                    }
                                }
                            }
                        }
                        gw[((m * ci + c) * k + i) * k + j] += acc;
                    }
                }
            }
        }
    }
}

fn bias_grad<E: Elem>(gy: &[E], (n, co, oh, ow): (usize, usize, usize, usize), gb: &mut [E]) {
    for b in 0..n {
        for m in 0..co {
            let plane = &gy[(b * co + m) * oh * ow..][..oh * ow];
            let mut s = E::zero();
            for v in plane {
                s += *v;
            }
            gb[m] += s;
        }
    }
}

// ---------------------------------------------------------------------------
// Graph ops
// ---------------------------------------------------------------------------

/// Direct 2-d convolution with zero padding:
/// `Y[n,m,p,q] = sum_{c,i,j} W[m,c,i,j] * X[n,c,p*s+i-pad,q*s+j-pad] + b[m]`,
/// out-of-bounds reads contributing zero. Reference semantics for every
/// scheduled variant.
pub fn conv2d_direct<E: Elem>(input: &Tensor<E>, spec: &ConvSpec<E>) -> Tensor<E> {
    let [n, ci, h, w] = input.dims4();
    assert_eq!(
        ci,
        spec.in_channels(),
        "input has {} channels but convolution expects {}",
        ci,
        spec.in_channels()
    );
    let (co, k) = (spec.out_channels(), spec.kernel());
    let (stride, pad) = (spec.stride, spec.padding);
    let oh = conv_out_extent(h, k, stride, pad);
    let ow = conv_out_extent(w, k, stride, pad);

    let mut out = vec![E::zero(); n * co * oh * ow];
    {
        let x = input.data();
        let wt = spec.weight.data();
        let b = spec.bias.as_ref().map(|t| t.data());
        conv_fwd(
            &x,
            (n, ci, h, w),
            &wt,
            (co, k),
            b.as_deref(),
            stride,
            pad,
            &mut out,
            (oh, ow),
        );
    }

    let parents = {
        let mut p = vec![input.clone(), spec.weight.clone()];
        if let Some(b) = &spec.bias {
            p.push(b.clone());
        }
        p
    };
    let (x_keep, w_keep) = (input.clone(), spec.weight.clone());
    Tensor::from_op(
        vec![n, co, oh, ow],
        out,
        parents,
        move |g, _, slots| {
            let x = x_keep.data();
            let wt = w_keep.data();
            if let Some(gx) = &mut slots[0] {
                conv_bwd_input(
                    g,
                    (n, co, oh, ow),
                    &wt,
                    (ci, k),
                    stride,
                    pad,
                    gx,
                    (h, w),
                );
            }
            if let Some(gw) = &mut slots[1] {
                conv_bwd_weight(&x, (n, ci, h, w), g, (co, oh, ow), k, stride, pad, gw);
            }
            if slots.len() > 2 {
                if let Some(gb) = &mut slots[2] {
                    bias_grad(g, (n, co, oh, ow), gb);
                }
            }
        },
    )
}

/// Unfold: stack each `K x K` neighborhood along the channel dimension,
/// `(N,C,H,W) -> (N, C*K*K, H, W)` with zero padding `K/2` (spatial extent
/// preserved; the only configuration the adaptive paths use).
pub fn im2col<E: Elem>(input: &Tensor<E>, k: usize, padding: usize) -> Tensor<E> {
    assert!(k % 2 == 1, "unfold kernel size must be odd, got {k}");
    assert_eq!(
        padding,
        k / 2,
        "unfold requires padding K/2 to preserve spatial extent (got pad {padding} for K {k})"
    );
    let [n, c, h, w] = input.dims4();
    let kk = k * k;
    let mut out = vec![E::zero(); n * c * kk * h * w];
    {
        let x = input.data();
        for b in 0..n {
            for ch in 0..c {
                let xplane = &x[(b * c + ch) * h * w..][..h * w];
                for i in 0..k {
                    for j in 0..k {
                        let block = ch * kk + i * k + j;
                        let oplane =
                            &mut out[((b * c * kk + block) * h * w)..][..h * w];
                        let (q0, q1, off) = col_range(w, w, j, padding);
                        if q1 <= q0 {
                            continue;
                        }
                        for p in 0..h {
                            let ih = p as isize + i as isize - padding as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            let src =
                                &xplane[ih as usize * w + (q0 as isize + off) as usize..][..q1 - q0];
                            oplane[p * w + q0..p * w + q1].copy_from_slice(src);
                        }
                    }
                }
            }
        }
    }
    Tensor::from_op(
        vec![n, c * kk, h, w],
        out,
        vec![input.clone()],
        move |g, _, slots| {
            if let Some(gx) = &mut slots[0] {
                for b in 0..n {
                    for ch in 0..c {
                        let gxplane = &mut gx[(b * c + ch) * h * w..][..h * w];
                        for i in 0..k {
                            for j in 0..k {
                                let block = ch * kk + i * k + j;
                                let gplane = &g[((b * c * kk + block) * h * w)..][..h * w];
                                let (q0, q1, off) = col_range(w, w, j, padding);
                                if q1 <= q0 {
                                    continue;
                                }
                                for p in 0..h {
                                    let ih = p as isize + i as isize - padding as isize;
                                    if ih < 0 || ih >= h as isize {
                                        continue;
                                    }
                                    let dst = &mut gxplane
                                        [ih as usize * w + (q0 as isize + off) as usize..]
                                        [..q1 - q0];
                                    for (d, s) in dst.iter_mut().zip(&gplane[p * w + q0..p * w + q1])
                                    {
                                        *d += *s;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        },
    )
}

/// Inverse index map of the unfold for the kernel center: channel block
/// `c*K*K + (K/2)*K + K/2` of the unfolded tensor is exactly the input.
pub fn im2col_center_slice<E: Elem>(cols: &Tensor<E>, channels: usize, k: usize) -> Tensor<E> {
    let [n, cb, h, w] = cols.dims4();
    assert_eq!(cb, channels * k * k, "unfolded channel count mismatch");
    let data = cols.data();
    let mut out = vec![E::zero(); n * channels * h * w];
    let center = (k / 2) * k + k / 2;
    for b in 0..n {
        for c in 0..channels {
            let src = (b * cb + c * k * k + center) * h * w;
            let dst = (b * channels + c) * h * w;
            out[dst..dst + h * w].copy_from_slice(&data[src..src + h * w]);
        }
    }
    Tensor::from_vec(&[n, channels, h, w], out)
}

/// Convolution scheduled as unfold + 1x1: equals [`conv2d_direct`] because the
/// unfold block ordering matches the row-major weight reshape.
pub fn conv2d_im2col<E: Elem>(input: &Tensor<E>, spec: &ConvSpec<E>) -> Tensor<E> {
    assert_eq!(
        spec.stride, 1,
        "unfold scheduling supports stride 1 only"
    );
    assert_eq!(
        spec.padding,
        spec.kernel() / 2,
        "unfold scheduling requires padding K/2"
    );
    let k = spec.kernel();
    let (o, i) = (spec.out_channels(), spec.in_channels());
    let cols = im2col(input, k, spec.padding);
    let w1 = spec.weight.reshape(&[o, i * k * k, 1, 1]);
    let spec1 = ConvSpec::new(w1, spec.bias.clone(), 1, 0).expect("1x1 reshape is always valid");
    conv2d_direct(&cols, &spec1)
}

/// Transposed convolution (decoder upsampling). Output extent `(H-1)*s + K`.
pub fn conv_transpose2d<E: Elem>(input: &Tensor<E>, spec: &DeconvSpec<E>) -> Tensor<E> {
    let [n, ci, h, w] = input.dims4();
    let ws = spec.weight.shape();
    assert_eq!(
        ci, ws[0],
        "input has {} channels but transposed convolution expects {}",
        ci, ws[0]
    );
    let (co, k) = (ws[1], ws[2]);
    let s = spec.stride;
    let (oh, ow) = ((h - 1) * s + k, (w - 1) * s + k);

    let mut out = vec![E::zero(); n * co * oh * ow];
    {
        let x = input.data();
        let wt = spec.weight.data();
        for b in 0..n {
            for m in 0..co {
                let oplane = &mut out[(b * co + m) * oh * ow..][..oh * ow];
                if let Some(bt) = &spec.bias {
                    oplane.fill(bt.data()[m]);
                }
                for c in 0..ci {
                    let xplane = &x[(b * ci + c) * h * w..][..h * w];
                    for i in 0..k {
                        for j in 0..k {
                            let wv = wt[((c * co + m) * k + i) * k + j];
                            for p in 0..h {
                                let orow = &mut oplane[(p * s + i) * ow..][..ow];
                                let xrow = &xplane[p * w..][..w];
                                for q in 0..w {
                                    orow[q * s + j] += wv * xrow[q];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    let parents = {
        let mut p = vec![input.clone(), spec.weight.clone()];
        if let Some(b) = &spec.bias {
            p.push(b.clone());
        }
        p
    };
    let (x_keep, w_keep) = (input.clone(), spec.weight.clone());
    Tensor::from_op(
        vec![n, co, oh, ow],
        out,
        parents,
        move |g, _, slots| {
            let x = x_keep.data();
            let wt = w_keep.data();
            if let Some(gx) = &mut slots[0] {
                // gx[b,c,p,q] = sum_{m,i,j} w[c,m,i,j] * g[b,m,p*s+i,q*s+j]
                for b in 0..n {
                    for c in 0..ci {
                        let gxplane = &mut gx[(b * ci + c) * h * w..][..h * w];
                        for m in 0..co {
                            let gplane = &g[(b * co + m) * oh * ow..][..oh * ow];
                            for i in 0..k {
                                for j in 0..k {
                                    let wv = wt[((c * co + m) * k + i) * k + j];
                                    for p in 0..h {
                                        let grow = &gplane[(p * s + i) * ow..][..ow];
                                        let dst = &mut gxplane[p * w..][..w];
                                        for q in 0..w {
                                            dst[q] += wv * grow[q * s + j];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            if let Some(gw) = &mut slots[1] {
                for b in 0..n {
                    for c in 0..ci {
                        let xplane = &x[(b * ci + c) * h * w..][..h * w];
                        for m in 0..co {
                            let gplane = &g[(b * co + m) * oh * ow..][..oh * ow];
                            for i in 0..k {
                                for j in 0..k {
                                    let mut acc = E::zero();
                                    for p in 0..h {
                                        let grow = &gplane[(p * s + i) * ow..][..ow];
                                        let xrow = &xplane[p * w..][..w];
                                        for q in 0..w {
                                            acc += grow[q * s + j] * xrow[q];
                                        }
                                    }
                                    gw[((c * co + m) * k + i) * k + j] += acc;
                                }
                            }
                        }
                    }
                }
            }
            if slots.len() > 2 {
                if let Some(gb) = &mut slots[2] {
                    bias_grad(g, (n, co, oh, ow), gb);
                }
            }
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_from(
        o: usize,
        i: usize,
        k: usize,
        w: &[f64],
        bias: Option<&[f64]>,
        stride: usize,
        pad: usize,
    ) -> ConvSpec<f64> {
        ConvSpec::new(
            Tensor::<f64>::from_f64s(&[o, i, k, k], w),
            bias.map(|b| Tensor::<f64>::from_f64s(&[o], b)),
            stride,
            pad,
        )
        .unwrap()
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let x = Tensor::<f64>::from_f64s(&[1, 1, 3, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let spec = spec_from(1, 1, 1, &[1.0], None, 1, 0);
        assert_eq!(conv2d_direct(&x, &spec).to_vec(), x.to_vec());
    }

    #[test]
    fn all_ones_3x3_center_and_corners() {
        let x = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0);
        let spec = spec_from(1, 1, 3, &[1.0; 9], None, 1, 1);
        let y = conv2d_direct(&x, &spec);
        let d = y.to_vec();
        assert_eq!(d[4], 9.0); // center: full window
        for corner in [0, 2, 6, 8] {
            assert_eq!(d[corner], 4.0); // corners: 2x2 valid window
        }
    }

    #[test]
    fn even_kernel_rejected_at_construction() {
        let w = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
        assert!(ConvSpec::new(w, None, 1, 0).is_err());
    }

    #[test]
    #[should_panic(expected = "channels but convolution expects")]
    fn channel_mismatch_rejected() {
        let x = Tensor::<f64>::zeros(&[1, 2, 3, 3]);
        let spec = spec_from(1, 1, 1, &[1.0], None, 1, 0);
        let _ = conv2d_direct(&x, &spec);
    }

    #[test]
    fn im2col_degenerate_1x1() {
        let x = Tensor::<f64>::from_f64s(&[1, 1, 1, 1], &[42.0]);
        let y = im2col(&x, 1, 0);
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.item(), 42.0);
    }

    #[test]
    fn im2col_window_at_origin() {
        let x = Tensor::<f64>::from_f64s(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let y = im2col(&x, 3, 1);
        assert_eq!(y.shape(), &[1, 9, 2, 2]);
        let d = y.to_vec();
        // 9-vector across channel blocks at (p,q) = (0,0)
        let v: Vec<f64> = (0..9).map(|b| d[b * 4]).collect();
        assert_eq!(v, vec![0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 0.0, 3.0, 4.0]);
    }

    #[test]
    fn im2col_center_slice_reconstructs_input() {
        let vals: Vec<f64> = (0..2 * 3 * 4 * 5).map(|i| i as f64 * 0.37 - 7.0).collect();
        let x = Tensor::<f64>::from_f64s(&[2, 3, 4, 5], &vals);
        for k in [1usize, 3, 5] {
            let cols = im2col(&x, k, k / 2);
            let back = im2col_center_slice(&cols, 3, k);
            assert_eq!(back.to_vec(), x.to_vec(), "center slice mismatch for K={k}");
        }
    }

    #[test]
    fn stride_two_output_extent() {
        let x = Tensor::<f64>::full(&[1, 1, 4, 6], 1.0);
        let spec = spec_from(1, 1, 3, &[1.0; 9], None, 2, 1);
        let y = conv2d_direct(&x, &spec);
        assert_eq!(y.shape(), &[1, 1, 2, 3]);
    }

    #[test]
    fn transpose_doubles_extent() {
        let x = Tensor::<f64>::from_f64s(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let w = Tensor::<f64>::full(&[1, 1, 2, 2], 1.0);
        let spec = DeconvSpec::new(w, None, 2).unwrap();
        let y = conv_transpose2d(&x, &spec);
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        // each input value copies into its own 2x2 block
        let d = y.to_vec();
        assert_eq!(d[0], 1.0);
        assert_eq!(d[3], 2.0);
        assert_eq!(d[15], 4.0);
    }
}
