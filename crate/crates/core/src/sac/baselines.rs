//! Prior attention mechanisms expressed in the adaptive-convolution framework:
//! squeeze-and-excitation (channel attention from global pooling), CBAM
//! (channel then spatial attention), the context-aggregation module (per-pixel
//! channel attention from max pooling; the IS special case), and
//! pixel-adaptive convolution (Gaussian kernel attention from guidance
//! features; the SK special case).

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::{fan_in_uniform, Prng};
use crate::tensor::{conv2d_direct, im2col, ConvSpec, Elem, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineKind {
    Se,
    Cbam,
    Cam,
    Pac,
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SE" => Ok(BaselineKind::Se),
            "CBAM" => Ok(BaselineKind::Cbam),
            "CAM" => Ok(BaselineKind::Cam),
            "PAC" => Ok(BaselineKind::Pac),
            other => Err(Error::Config(format!("unknown baseline kind '{other}'"))),
        }
    }
}

/// Squeeze-and-excitation: global average pooling and a two-layer 1x1
/// bottleneck produce one scale per channel, applied before the main conv.
pub struct SeParams<E: Elem> {
    pub fc1: ConvSpec<E>,
    pub fc2: ConvSpec<E>,
    pub main: ConvSpec<E>,
}

impl<E: Elem> SeParams<E> {
    pub fn random(rng: &mut Prng, channels: usize, reduction: usize) -> Result<Self> {
        let mid = (channels / reduction).max(1);
        Ok(SeParams {
            fc1: conv1x1(rng, channels, mid)?,
            fc2: conv1x1(rng, mid, channels)?,
            main: conv3x3(rng, channels, channels)?,
        })
    }
}

/// CBAM: channel attention (as SE) followed by spatial attention computed by
/// a 7x7 convolution over the channel mean and max.
pub struct CbamParams<E: Elem> {
    pub fc1: ConvSpec<E>,
    pub fc2: ConvSpec<E>,
    pub spatial: ConvSpec<E>,
    pub main: ConvSpec<E>,
}

impl<E: Elem> CbamParams<E> {
    pub fn random(rng: &mut Prng, channels: usize, reduction: usize) -> Result<Self> {
        let mid = (channels / reduction).max(1);
        let spatial = ConvSpec::new(
            fan_in_uniform(rng, &[1, 2, 7, 7], 2 * 49),
            Some(Tensor::from_vec(&[1], vec![E::zero()])),
            1,
            3,
        )?;
        Ok(CbamParams {
            fc1: conv1x1(rng, channels, mid)?,
            fc2: conv1x1(rng, mid, channels)?,
            spatial,
            main: conv3x3(rng, channels, channels)?,
        })
    }
}

/// Context-aggregation module: 7x7 max pooling followed by two 1x1
/// convolutions and a sigmoid give per-location channel attention.
pub struct CamParams<E: Elem> {
    pub pool_k: usize,
    pub conv1: ConvSpec<E>,
    pub conv2: ConvSpec<E>,
    pub main: ConvSpec<E>,
}

impl<E: Elem> CamParams<E> {
    pub fn random(rng: &mut Prng, channels: usize, reduction: usize) -> Result<Self> {
        let mid = (channels / reduction).max(1);
        Ok(CamParams {
            pool_k: 7,
            conv1: conv1x1(rng, channels, mid)?,
            conv2: conv1x1(rng, mid, channels)?,
            main: conv3x3(rng, channels, channels)?,
        })
    }
}

/// Pixel-adaptive convolution: kernel attention from a Gaussian over guidance
/// feature differences, applied through the unfold scheduling.
pub struct PacParams<E: Elem> {
    pub main: ConvSpec<E>,
}

impl<E: Elem> PacParams<E> {
    pub fn random(rng: &mut Prng, channels: usize, k: usize) -> Result<Self> {
        let main = ConvSpec::new(
            fan_in_uniform(rng, &[channels, channels, k, k], channels * k * k),
            Some(Tensor::from_vec(&[channels], vec![E::zero(); channels])),
            1,
            k / 2,
        )?;
        Ok(PacParams { main })
    }
}

pub enum BaselineParams<E: Elem> {
    Se(SeParams<E>),
    Cbam(CbamParams<E>),
    Cam(CamParams<E>),
    Pac(PacParams<E>),
}

impl<E: Elem> BaselineParams<E> {
    pub fn kind(&self) -> BaselineKind {
        match self {
            BaselineParams::Se(_) => BaselineKind::Se,
            BaselineParams::Cbam(_) => BaselineKind::Cbam,
            BaselineParams::Cam(_) => BaselineKind::Cam,
            BaselineParams::Pac(_) => BaselineKind::Pac,
        }
    }
}

fn conv1x1<E: Elem>(rng: &mut Prng, i: usize, o: usize) -> Result<ConvSpec<E>> {
    ConvSpec::new(
        fan_in_uniform(rng, &[o, i, 1, 1], i),
        Some(Tensor::from_vec(&[o], vec![E::zero(); o])),
        1,
        0,
    )
}

fn conv3x3<E: Elem>(rng: &mut Prng, i: usize, o: usize) -> Result<ConvSpec<E>> {
    ConvSpec::new(
        fan_in_uniform(rng, &[o, i, 3, 3], i * 9),
        Some(Tensor::from_vec(&[o], vec![E::zero(); o])),
        1,
        1,
    )
}

/// Channel attention of the squeeze-and-excitation path: `(N, C, 1, 1)`.
pub fn se_attention<E: Elem>(input: &Tensor<E>, p: &SeParams<E>) -> Tensor<E> {
    let pooled = input.global_avg_pool();
    let hidden = conv2d_direct(&pooled, &p.fc1).relu();
    conv2d_direct(&hidden, &p.fc2).sigmoid()
}

/// Per-location channel attention of the context-aggregation module:
/// `(N, C, H, W)`.
pub fn cam_attention<E: Elem>(input: &Tensor<E>, p: &CamParams<E>) -> Tensor<E> {
    let pooled = input.max_pool(p.pool_k);
    let hidden = conv2d_direct(&pooled, &p.conv1).relu();
    conv2d_direct(&hidden, &p.conv2).sigmoid()
}

/// Gaussian kernel attention from guidance features:
/// `A[(i,j), p, q] = exp(-0.5 * ||g(p,q) - g(p+i-K/2, q+j-K/2)||^2)`,
/// with out-of-bounds guidance treated as zero. Constant (not learned).
pub fn pac_attention<E: Elem>(guidance: &Tensor<E>, k: usize) -> Tensor<E> {
    assert!(k % 2 == 1, "kernel size must be odd");
    let [n, c, h, w] = guidance.dims4();
    let pad = k / 2;
    let g = guidance.data();
    let kk = k * k;
    let mut out = vec![E::zero(); n * kk * h * w];
    for b in 0..n {
        for i in 0..k {
            for j in 0..k {
                let ch = i * k + j;
                for p in 0..h {
                    for q in 0..w {
                        let ih = p as isize + i as isize - pad as isize;
                        let iw = q as isize + j as isize - pad as isize;
                        let mut d2 = 0.0f64;
                        for cc in 0..c {
                            let center = g[((b * c + cc) * h + p) * w + q].as_f64();
                            let neigh = if ih < 0 || ih >= h as isize || iw < 0 || iw >= w as isize
                            {
                                0.0
                            } else {
                                g[((b * c + cc) * h + ih as usize) * w + iw as usize].as_f64()
                            };
                            let d = center - neigh;
                            d2 += d * d;
                        }
                        out[((b * kk + ch) * h + p) * w + q] = E::of((-0.5 * d2).exp());
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n, kk, h, w], out)
}

/// Forward pass of a prior-work baseline. `guidance` is required by PAC and
/// ignored by the others.
pub fn baseline_forward<E: Elem>(
    input: &Tensor<E>,
    params: &BaselineParams<E>,
    guidance: Option<&Tensor<E>>,
) -> Tensor<E> {
    match params {
        BaselineParams::Se(p) => {
            let a = se_attention(input, p);
            conv2d_direct(&input.mul(&a), &p.main)
        }
        BaselineParams::Cbam(p) => {
            let ch_att = se_attention(
                input,
                &SeParams {
                    fc1: p.fc1.clone(),
                    fc2: p.fc2.clone(),
                    main: p.main.clone(),
                },
            );
            let x1 = input.mul(&ch_att);
            let pooled = Tensor::concat_channels(&[x1.channel_mean(), x1.channel_max()]);
            let sp_att = conv2d_direct(&pooled, &p.spatial).sigmoid();
            conv2d_direct(&x1.mul(&sp_att), &p.main)
        }
        BaselineParams::Cam(p) => {
            let a = cam_attention(input, p);
            conv2d_direct(&input.mul(&a), &p.main)
        }
        BaselineParams::Pac(p) => {
            let g = guidance.expect("pixel-adaptive convolution requires guidance features");
            let k = p.main.kernel();
            let i = p.main.in_channels();
            let att = pac_attention(g, k);
            let cols = im2col(input, k, k / 2);
            let gated = cols.mul(&att.tile_channels(i));
            let w1 = p
                .main
                .weight()
                .reshape(&[p.main.out_channels(), i * k * k, 1, 1]);
            let spec1 = ConvSpec::new(w1, p.main.bias().cloned(), 1, 0)
                .expect("reshaped 1x1 spec is valid");
            conv2d_direct(&gated, &spec1)
        }
    }
}
