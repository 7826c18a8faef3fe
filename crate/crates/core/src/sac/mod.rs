//! Spatially-adaptive convolution (SAC).
//!
//! The adaptive weight factorizes into a static kernel and an attention map
//! whose surviving dimensions name the variant: the suffix lists which of
//! {Output channels, Input channels, Spatial, Kernel} are not collapsed to 1.
//! `sac_forward` is the efficient scheduling (elementwise multiply for S/IS;
//! unfold + multiply + 1x1 convolution for SK/ISK); `sac_naive` materializes
//! the full per-pixel weight and evaluates the defining sum directly, serving
//! as the oracle the scheduling is checked against.

pub mod baselines;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{fan_in_uniform, Prng};
use crate::tensor::{conv2d_direct, im2col, ConvSpec, Elem, Tensor};

/// Which attention-map dimensions survive collapsing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SacVariant {
    pub adapt_o: bool,
    pub adapt_i: bool,
    pub adapt_s: bool,
    pub adapt_k: bool,
}

impl SacVariant {
    pub const S: SacVariant = SacVariant {
        adapt_o: false,
        adapt_i: false,
        adapt_s: true,
        adapt_k: false,
    };
    pub const IS: SacVariant = SacVariant {
        adapt_o: false,
        adapt_i: true,
        adapt_s: true,
        adapt_k: false,
    };
    pub const SK: SacVariant = SacVariant {
        adapt_o: false,
        adapt_i: false,
        adapt_s: true,
        adapt_k: true,
    };
    pub const ISK: SacVariant = SacVariant {
        adapt_o: false,
        adapt_i: true,
        adapt_s: true,
        adapt_k: true,
    };

    pub const SCHEDULED: [SacVariant; 4] =
        [SacVariant::S, SacVariant::IS, SacVariant::SK, SacVariant::ISK];

    /// Attention channel count for a layer with `in_channels` inputs and a
    /// `k x k` static kernel. Collapsed dimensions contribute a factor of 1.
    pub fn attention_channels(&self, out_channels: usize, in_channels: usize, k: usize) -> usize {
        let o = if self.adapt_o { out_channels } else { 1 };
        let i = if self.adapt_i { in_channels } else { 1 };
        let kk = if self.adapt_k { k * k } else { 1 };
        o * i * kk
    }
}

impl fmt::Display for SacVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        if self.adapt_o {
            s.push('O');
        }
        if self.adapt_i {
            s.push('I');
        }
        if self.adapt_s {
            s.push('S');
        }
        if self.adapt_k {
            s.push('K');
        }
        if s.is_empty() {
            s.push('-');
        }
        write!(f, "{s}")
    }
}

impl FromStr for SacVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut v = SacVariant {
            adapt_o: false,
            adapt_i: false,
            adapt_s: false,
            adapt_k: false,
        };
        for ch in s.trim().to_ascii_uppercase().chars() {
            match ch {
                'O' => v.adapt_o = true,
                'I' => v.adapt_i = true,
                'S' => v.adapt_s = true,
                'K' => v.adapt_k = true,
                other => {
                    return Err(Error::Config(format!(
                        "unknown adaptive dimension '{other}' in variant '{s}'"
                    )))
                }
            }
        }
        Ok(v)
    }
}

impl Serialize for SacVariant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for SacVariant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One adaptive convolution layer: attention convolution over the coordinate
/// map (sigmoid-activated), the static kernel, an optional 3x3 follow-up
/// convolution on the kernel-adaptive paths, and a residual connection adding
/// the original pre-attention input.
pub struct SacLayer<E: Elem> {
    pub variant: SacVariant,
    pub attention_conv: ConvSpec<E>,
    pub main_conv: ConvSpec<E>,
    pub follow_conv: Option<ConvSpec<E>>,
    pub residual: bool,
}

impl<E: Elem> SacLayer<E> {
    pub fn new(
        variant: SacVariant,
        attention_conv: ConvSpec<E>,
        main_conv: ConvSpec<E>,
        follow_conv: Option<ConvSpec<E>>,
        residual: bool,
    ) -> Result<Self> {
        if !variant.adapt_s {
            return Err(Error::Config(format!(
                "variant {variant} is not spatially adaptive; SAC layers require the S dimension"
            )));
        }
        let expected = variant.attention_channels(
            main_conv.out_channels(),
            main_conv.in_channels(),
            main_conv.kernel(),
        );
        if attention_conv.out_channels() != expected {
            return Err(Error::Dimension(format!(
                "attention produces {} channels but variant {variant} with I={} K={} needs {}",
                attention_conv.out_channels(),
                main_conv.in_channels(),
                main_conv.kernel(),
                expected
            )));
        }
        if main_conv.stride() != 1 || main_conv.padding() != main_conv.kernel() / 2 {
            return Err(Error::Config(
                "SAC main convolution must be stride 1 with padding K/2".into(),
            ));
        }
        if let Some(f) = &follow_conv {
            if f.in_channels() != main_conv.out_channels() {
                return Err(Error::Dimension(
                    "follow convolution input channels must match main output channels".into(),
                ));
            }
        }
        if residual && main_channels_mismatch(&main_conv, &follow_conv) {
            return Err(Error::Dimension(
                "residual connection requires output channels equal to input channels".into(),
            ));
        }
        Ok(SacLayer {
            variant,
            attention_conv,
            main_conv,
            follow_conv,
            residual,
        })
    }

    /// Randomly initialized layer. The attention bias starts at zero so the
    /// initial attention sits near 0.5 everywhere.
    #[allow(clippy::too_many_arguments)]
    pub fn random(
        rng: &mut Prng,
        variant: SacVariant,
        in_channels: usize,
        out_channels: usize,
        k: usize,
        attention_kernel: usize,
        coord_channels: usize,
        residual: bool,
    ) -> Result<Self> {
        let c_att = variant.attention_channels(out_channels, in_channels, k);
        let att_w = fan_in_uniform(
            rng,
            &[c_att, coord_channels, attention_kernel, attention_kernel],
            coord_channels * attention_kernel * attention_kernel,
        );
        let attention_conv = ConvSpec::new(
            Tensor::param(&[c_att, coord_channels, attention_kernel, attention_kernel], att_w.to_vec()),
            Some(Tensor::param(&[c_att], vec![E::zero(); c_att])),
            1,
            attention_kernel / 2,
        )?;
        let main_w = fan_in_uniform(rng, &[out_channels, in_channels, k, k], in_channels * k * k);
        let main_conv = ConvSpec::new(
            Tensor::param(&[out_channels, in_channels, k, k], main_w.to_vec()),
            Some(Tensor::param(&[out_channels], vec![E::zero(); out_channels])),
            1,
            k / 2,
        )?;
        let follow_conv = if variant.adapt_k {
            let fw = fan_in_uniform(rng, &[out_channels, out_channels, 3, 3], out_channels * 9);
            Some(ConvSpec::new(
                Tensor::param(&[out_channels, out_channels, 3, 3], fw.to_vec()),
                Some(Tensor::param(&[out_channels], vec![E::zero(); out_channels])),
                1,
                1,
            )?)
        } else {
            None
        };
        SacLayer::new(variant, attention_conv, main_conv, follow_conv, residual)
    }

    pub fn in_channels(&self) -> usize {
        self.main_conv.in_channels()
    }

    pub fn out_channels(&self) -> usize {
        match &self.follow_conv {
            Some(f) => f.out_channels(),
            None => self.main_conv.out_channels(),
        }
    }

    pub fn attention_channels(&self) -> usize {
        self.attention_conv.out_channels()
    }
}

fn main_channels_mismatch<E: Elem>(
    main: &ConvSpec<E>,
    follow: &Option<ConvSpec<E>>,
) -> bool {
    let out = match follow {
        Some(f) => f.out_channels(),
        None => main.out_channels(),
    };
    out != main.in_channels()
}

/// Attention values for a layer: convolution over the coordinate map followed
/// by a sigmoid, so every value lies in (0, 1).
pub fn attention_map<E: Elem>(coord_map: &Tensor<E>, layer: &SacLayer<E>) -> Tensor<E> {
    let [_, c, _, _] = coord_map.dims4();
    assert_eq!(
        c,
        layer.attention_conv.in_channels(),
        "coordinate map has {} channels but the attention convolution expects {}",
        c,
        layer.attention_conv.in_channels()
    );
    conv2d_direct(coord_map, &layer.attention_conv).sigmoid()
}

fn validate_injected<E: Elem>(att: &Tensor<E>, layer: &SacLayer<E>) {
    let [_, c, _, _] = att.dims4();
    assert_eq!(
        c,
        layer.attention_channels(),
        "injected attention has {} channels but variant {} needs {}",
        c,
        layer.variant,
        layer.attention_channels()
    );
}

/// Efficient scheduling of the adaptive convolution.
///
/// S / IS: elementwise multiply the input by the attention (broadcast over
/// channels for S), then the static convolution. SK / ISK: unfold the input,
/// multiply by the attention (the K*K attention repeated across input
/// channels for SK), apply the static weight reshaped to a 1x1 convolution,
/// then the follow-up convolution. The residual adds the original
/// pre-attention input.
///
/// `injected_attention` bypasses the attention convolution (test hook).
pub fn sac_forward<E: Elem>(
    input: &Tensor<E>,
    coord_map: &Tensor<E>,
    layer: &SacLayer<E>,
    injected_attention: Option<&Tensor<E>>,
) -> Tensor<E> {
    assert!(
        !layer.variant.adapt_o,
        "output-channel adaptivity has no efficient scheduling; use sac_naive"
    );
    let att = match injected_attention {
        Some(a) => {
            validate_injected(a, layer);
            a.clone()
        }
        None => attention_map(coord_map, layer),
    };

    let pre = if !layer.variant.adapt_k {
        let gated = input.mul(&att);
        conv2d_direct(&gated, &layer.main_conv)
    } else {
        let k = layer.main_conv.kernel();
        let (o, i) = (
            layer.main_conv.out_channels(),
            layer.main_conv.in_channels(),
        );
        let cols = im2col(input, k, k / 2);
        let att_full = if layer.variant.adapt_i {
            att
        } else {
            att.tile_channels(i)
        };
        let gated = cols.mul(&att_full);
        let w1 = layer.main_conv.weight().reshape(&[o, i * k * k, 1, 1]);
        let spec1 = ConvSpec::new(w1, layer.main_conv.bias().cloned(), 1, 0)
            .expect("reshaped 1x1 spec is valid");
        conv2d_direct(&gated, &spec1)
    };
    let pre = match &layer.follow_conv {
        Some(f) => conv2d_direct(&pre, f),
        None => pre,
    };
    if layer.residual {
        pre.add(input)
    } else {
        pre
    }
}

/// Naive oracle: materializes the full adaptive weight
/// `W[m,n,p,q,i,j] = W_hat[m,n,i,j] * A[m,n,p,q,i,j]` (collapsed dimensions
/// broadcast) and evaluates the defining sum directly, then applies the same
/// follow-up convolution and residual as the scheduled path. Small shapes
/// only. Supports output-channel adaptivity, which the scheduling does not.
pub fn sac_naive<E: Elem>(
    input: &Tensor<E>,
    coord_map: &Tensor<E>,
    layer: &SacLayer<E>,
    injected_attention: Option<&Tensor<E>>,
) -> Tensor<E> {
    let att = match injected_attention {
        Some(a) => {
            validate_injected(a, layer);
            a.clone()
        }
        None => attention_map(coord_map, layer),
    };

    let [n, ci, h, w] = input.dims4();
    let (o, k) = (layer.main_conv.out_channels(), layer.main_conv.kernel());
    let kk = k * k;
    let pad = k / 2;
    let [an, ac, ah, aw] = att.dims4();
    assert_eq!(ac, layer.attention_channels(), "attention channel mismatch");

    let x = input.data();
    let wt = layer.main_conv.weight().data();
    let bias = layer.main_conv.bias().map(|b| b.to_vec());
    let ad = att.data();
    let v = layer.variant;

    let mut out = vec![E::zero(); n * o * h * w];
    for b in 0..n {
        let ab = if an == 1 { 0 } else { b };
        for m in 0..o {
            for p in 0..h {
                for q in 0..w {
                    let mut acc = bias.as_ref().map_or(E::zero(), |bv| bv[m]);
                    for c in 0..ci {
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
                                // Attention spatial index: kernel-adaptive
                                // variants read it at the output location,
                                // kernel-collapsed variants gate the input
                                // feature directly so the read follows the
                                // sampled pixel. A 1x1 map broadcasts.
                                let (ap, aq) = if ah == 1 && aw == 1 {
                                    (0, 0)
                                } else if v.adapt_k {
                                    (p, q)
                                } else {
                                    (ih as usize, iw as usize)
                                };
                                // attention channel for (m, c, i, j) with
                                // collapsed dimensions contributing factor 1
                                let mut ch = 0usize;
                                if v.adapt_o {
                                    ch = m;
                                }
                                if v.adapt_i {
                                    ch = ch * ci + c;
                                }
                                if v.adapt_k {
                                    ch = ch * kk + i * k + j;
                                }
                                let a = ad[((ab * ac + ch) * ah + ap) * aw + aq];
                                let w6 = wt[((m * ci + c) * k + i) * k + j] * a;
                                acc += w6
                                    * x[((b * ci + c) * h + ih as usize) * w + iw as usize];
                            }
                        }
                    }
                    out[((b * o + m) * h + p) * w + q] = acc;
                }
            }
        }
    }
    drop(x);
    drop(ad);

    let pre = Tensor::from_vec(&[n, o, h, w], out);
    let pre = match &layer.follow_conv {
        Some(f) => conv2d_direct(&pre, f),
        None => pre,
    };
    if layer.residual {
        let sum: Vec<E> = pre
            .data()
            .iter()
            .zip(input.data().iter())
            .map(|(&a, &b)| a + b)
            .collect();
        Tensor::from_vec(&[n, ci, h, w], sum)
    } else {
        pre.detach()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded, uniform_tensor};

    fn ident_conv(c: usize) -> ConvSpec<f64> {
        // 3x3 kernel that passes input through unchanged
        let mut w = vec![0.0; c * c * 9];
        for m in 0..c {
            w[(m * c + m) * 9 + 4] = 1.0;
        }
        ConvSpec::new(Tensor::from_f64s(&[c, c, 3, 3], &w), None, 1, 1).unwrap()
    }

    fn random_layer(
        rng: &mut Prng,
        variant: SacVariant,
        i: usize,
        o: usize,
        k: usize,
        residual: bool,
    ) -> SacLayer<f64> {
        SacLayer::random(rng, variant, i, o, k, 3, 3, residual).unwrap()
    }

    #[test]
    fn variant_names_follow_retained_dimensions() {
        assert_eq!(SacVariant::S.to_string(), "S");
        assert_eq!(SacVariant::IS.to_string(), "IS");
        assert_eq!(SacVariant::SK.to_string(), "SK");
        assert_eq!(SacVariant::ISK.to_string(), "ISK");
        assert_eq!("isk".parse::<SacVariant>().unwrap(), SacVariant::ISK);
    }

    #[test]
    fn attention_channel_counts() {
        assert_eq!(SacVariant::S.attention_channels(8, 4, 3), 1);
        assert_eq!(SacVariant::IS.attention_channels(8, 4, 3), 4);
        assert_eq!(SacVariant::SK.attention_channels(8, 4, 3), 9);
        assert_eq!(SacVariant::ISK.attention_channels(8, 4, 3), 36);
    }

    #[test]
    fn zero_attention_weights_give_half_attention() {
        let att = ConvSpec::new(
            Tensor::<f64>::zeros(&[1, 3, 7, 7]),
            Some(Tensor::zeros(&[1])),
            1,
            3,
        )
        .unwrap();
        let main = ident_conv(2);
        let layer = SacLayer::new(SacVariant::S, att, main, None, true).unwrap();
        let coord = Tensor::from_f64s(&[1, 3, 2, 2], &[1.0; 12]);
        let a = attention_map(&coord, &layer);
        for v in a.to_vec() {
            assert_eq!(v, 0.5);
        }
    }

    #[test]
    fn wrong_attention_channel_count_rejected() {
        let mut rng = seeded(1);
        let layer = random_layer(&mut rng, SacVariant::ISK, 4, 4, 3, false);
        // ISK with I=4, K=3 needs 36 channels
        assert_eq!(layer.attention_channels(), 36);
        let bad = Tensor::<f64>::full(&[1, 9, 2, 2], 1.0);
        let x = Tensor::<f64>::zeros(&[1, 4, 2, 2]);
        let coord = Tensor::<f64>::zeros(&[1, 3, 2, 2]);
        let res = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            sac_forward(&x, &coord, &layer, Some(&bad))
        }));
        assert!(res.is_err());
    }

    #[test]
    fn unit_attention_reduces_to_plain_convolution() {
        let mut rng = seeded(7);
        for variant in SacVariant::SCHEDULED {
            let mut layer = random_layer(&mut rng, variant, 3, 5, 3, false);
            layer.follow_conv = layer.follow_conv.map(|_| ident_conv(5));
            let x = uniform_tensor::<f64>(&mut rng, &[2, 3, 4, 6], -1.0, 1.0);
            let coord = uniform_tensor::<f64>(&mut rng, &[2, 3, 4, 6], -1.0, 1.0);
            let ones = Tensor::full(&[2, layer.attention_channels(), 4, 6], 1.0);
            let y = sac_forward(&x, &coord, &layer, Some(&ones));
            let direct = conv2d_direct(&x, &layer.main_conv);
            let (yd, dd) = (y.to_vec(), direct.to_vec());
            for (a, b) in yd.iter().zip(&dd) {
                let rel = (a - b).abs() / b.abs().max(1.0);
                assert!(rel <= 1e-12, "variant {variant}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn zero_attention_with_residual_is_identity() {
        let mut rng = seeded(11);
        for variant in SacVariant::SCHEDULED {
            // bias-free convs so the pre-residual branch is exactly zero
            let c_att = variant.attention_channels(3, 3, 3);
            let att = ConvSpec::new(
                uniform_tensor::<f64>(&mut rng, &[c_att, 3, 3, 3], -0.5, 0.5),
                None,
                1,
                1,
            )
            .unwrap();
            let main = ConvSpec::new(
                uniform_tensor::<f64>(&mut rng, &[3, 3, 3, 3], -0.5, 0.5),
                None,
                1,
                1,
            )
            .unwrap();
            let follow = variant.adapt_k.then(|| {
                ConvSpec::new(
                    uniform_tensor::<f64>(&mut rng, &[3, 3, 3, 3], -0.5, 0.5),
                    None,
                    1,
                    1,
                )
                .unwrap()
            });
            let layer = SacLayer::new(variant, att, main, follow, true).unwrap();
            let x = uniform_tensor::<f64>(&mut rng, &[1, 3, 4, 4], -1.0, 1.0);
            let coord = Tensor::zeros(&[1, 3, 4, 4]);
            let zeros = Tensor::zeros(&[1, layer.attention_channels(), 4, 4]);
            let y = sac_forward(&x, &coord, &layer, Some(&zeros));
            assert_eq!(y.to_vec(), x.to_vec(), "variant {variant}");
        }
    }

    #[test]
    fn scheduled_matches_naive_on_random_shapes() {
        let mut rng = seeded(42);
        for variant in SacVariant::SCHEDULED {
            for &k in &[1usize, 3] {
                for case in 0..6 {
                    let i = 1 + (case % 4);
                    let o = i; // residual needs matching channels
                    let h = 2 + (case % 5);
                    let w = 3 + (case % 4);
                    let layer =
                        random_layer(&mut rng, variant, i, o, k, case % 2 == 0);
                    let x = uniform_tensor::<f64>(&mut rng, &[2, i, h, w], -1.0, 1.0);
                    let coord = uniform_tensor::<f64>(&mut rng, &[2, 3, h, w], -2.0, 2.0);
                    let fast = sac_forward(&x, &coord, &layer, None);
                    let slow = sac_naive(&x, &coord, &layer, None);
                    let max_rel = fast
                        .to_vec()
                        .iter()
                        .zip(slow.to_vec().iter())
                        .map(|(a, b)| (a - b).abs() / b.abs().max(1e-12))
                        .fold(0.0f64, f64::max);
                    assert!(
                        max_rel <= 1e-10,
                        "variant {variant} K={k} case {case}: max rel {max_rel}"
                    );
                }
            }
        }
    }

    #[test]
    fn naive_single_pixel_closed_form() {
        // K=1, single pixel: out[m] = sum_n W[m,n] * A * X[n]
        let x = Tensor::from_f64s(&[1, 2, 1, 1], &[2.0, -3.0]);
        let w = Tensor::from_f64s(&[1, 2, 1, 1], &[0.5, 0.25]);
        let att_conv = ConvSpec::new(
            Tensor::<f64>::zeros(&[1, 3, 1, 1]),
            Some(Tensor::from_f64s(&[1], &[0.0])),
            1,
            0,
        )
        .unwrap();
        let main = ConvSpec::new(w, None, 1, 0).unwrap();
        let layer = SacLayer::new(SacVariant::S, att_conv, main, None, false).unwrap();
        let coord = Tensor::zeros(&[1, 3, 1, 1]);
        // zero attention conv -> sigmoid(0) = 0.5 everywhere
        let y = sac_naive(&x, &coord, &layer, None);
        let expected = 0.5 * (0.5 * 2.0 + 0.25 * (-3.0));
        assert!((y.item() - expected).abs() < 1e-12);
    }

    #[test]
    fn naive_supports_output_adaptivity() {
        let variant = SacVariant {
            adapt_o: true,
            adapt_i: false,
            adapt_s: true,
            adapt_k: false,
        };
        let mut rng = seeded(3);
        let att = ConvSpec::new(
            uniform_tensor::<f64>(&mut rng, &[2, 3, 1, 1], -0.5, 0.5),
            None,
            1,
            0,
        )
        .unwrap();
        let main = ConvSpec::new(
            uniform_tensor::<f64>(&mut rng, &[2, 2, 1, 1], -0.5, 0.5),
            None,
            1,
            0,
        )
        .unwrap();
        let layer = SacLayer::new(variant, att, main, None, false).unwrap();
        let x = uniform_tensor::<f64>(&mut rng, &[1, 2, 2, 2], -1.0, 1.0);
        let coord = uniform_tensor::<f64>(&mut rng, &[1, 3, 2, 2], -1.0, 1.0);
        let y = sac_naive(&x, &coord, &layer, None);
        assert_eq!(y.shape(), &[1, 2, 2, 2]);
        // and the scheduled path refuses it
        let res = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            sac_forward(&x, &coord, &layer, None)
        }));
        assert!(res.is_err());
    }

    #[test]
    fn gradients_flow_through_attention_and_main_paths() {
        use crate::tensor::finite_diff_check;
        let mut rng = seeded(19);
        let layer = random_layer(&mut rng, SacVariant::ISK, 2, 2, 3, true);
        let x = uniform_tensor::<f64>(&mut rng, &[1, 2, 4, 4], -1.0, 1.0);
        let coord = uniform_tensor::<f64>(&mut rng, &[1, 3, 4, 4], -1.0, 1.0);

        // input gradient
        let (l2, c2) = (clone_layer(&layer), coord.clone());
        let err = finite_diff_check(
            move |t| sac_forward(t, &c2, &l2, None).sum_all(),
            &x,
            1e-5,
        );
        assert!(err <= 1e-4, "input gradient error {err}");

        // main weight gradient
        let (x2, c2) = (x.clone(), coord.clone());
        let l2 = clone_layer(&layer);
        let w0 = layer.main_conv.weight().detach();
        let err = finite_diff_check(
            move |wt| {
                let main = ConvSpec::new(
                    wt.clone(),
                    l2.main_conv.bias().map(|b| b.detach()),
                    1,
                    1,
                )
                .unwrap();
                let layer = SacLayer::new(
                    l2.variant,
                    clone_spec(&l2.attention_conv),
                    main,
                    l2.follow_conv.as_ref().map(clone_spec),
                    l2.residual,
                )
                .unwrap();
                sac_forward(&x2, &c2, &layer, None).sum_all()
            },
            &w0,
            1e-5,
        );
        assert!(err <= 1e-4, "main weight gradient error {err}");

        // attention weight gradient
        let (x2, c2) = (x.clone(), coord.clone());
        let l2 = clone_layer(&layer);
        let aw0 = layer.attention_conv.weight().detach();
        let err = finite_diff_check(
            move |wt| {
                let att = ConvSpec::new(
                    wt.clone(),
                    l2.attention_conv.bias().map(|b| b.detach()),
                    1,
                    l2.attention_conv.padding(),
                )
                .unwrap();
                let layer = SacLayer::new(
                    l2.variant,
                    att,
                    clone_spec(&l2.main_conv),
                    l2.follow_conv.as_ref().map(clone_spec),
                    l2.residual,
                )
                .unwrap();
                sac_forward(&x2, &c2, &layer, None).sum_all()
            },
            &aw0,
            1e-5,
        );
        assert!(err <= 1e-4, "attention weight gradient error {err}");
    }

    fn clone_spec(s: &ConvSpec<f64>) -> ConvSpec<f64> {
        ConvSpec::new(
            s.weight().detach(),
            s.bias().map(|b| b.detach()),
            s.stride(),
            s.padding(),
        )
        .unwrap()
    }

    fn clone_layer(l: &SacLayer<f64>) -> SacLayer<f64> {
        SacLayer::new(
            l.variant,
            clone_spec(&l.attention_conv),
            clone_spec(&l.main_conv),
            l.follow_conv.as_ref().map(clone_spec),
            l.residual,
        )
        .unwrap()
    }
}
