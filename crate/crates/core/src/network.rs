//! The scaled-down segmentation backbone: five encoder stages of adaptive
//! blocks (downsampling before stages 2-4 only, so stages 4-5 stay at 1/8
//! resolution), per-stage prediction heads, and a three-block transposed-
//! convolution decoder with skip connections back to full resolution.

use std::io::{Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projection::LidarImage;
use crate::rng::{fan_in_uniform, seeded, Prng};
use crate::sac::{sac_forward, SacLayer, SacVariant};
use crate::tensor::{
    conv2d_direct, conv_transpose2d, BatchNorm, ConvSpec, DeconvSpec, Elem, Tensor,
};

/// Spatial downsampling factor of each stage output.
pub const RESOLUTION_FACTORS: [usize; 5] = [1, 2, 4, 8, 8];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionInput {
    /// The raw (x, y, z) coordinate map (3 channels).
    Coord3,
    /// The full projected feature stack (5 channels).
    Features5,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub blocks_per_stage: [usize; 5],
    pub stage_channels: [usize; 5],
    /// Channel multiplier for desk-scale runs.
    pub tiny_scale: f64,
    /// `None` builds the plain no-attention baseline.
    pub sac_variant: Option<SacVariant>,
    pub attention_kernel: usize,
    pub attention_input: AttentionInput,
    pub num_classes: usize,
    pub input_hw: (usize, usize),
    pub batch_norm: bool,
    pub leaky_slope: f64,
    /// Per-channel input normalization: `(value + offset) * scale` for
    /// (x, y, z, range, intensity).
    pub input_offsets: [f64; 5],
    pub input_scales: [f64; 5],
    /// Keep the 3x3 follow-up convolutions in baseline blocks, mirroring the
    /// kernel-adaptive block structure (the accounting twin).
    pub baseline_follow: bool,
    pub seed: u64,
}

impl NetworkConfig {
    /// Depth-21 layout: blocks (1, 1, 2, 2, 1), channels (64, 128, 256, 256,
    /// 256) before scaling.
    pub fn depth21(num_classes: usize, input_hw: (usize, usize)) -> Self {
        NetworkConfig {
            blocks_per_stage: [1, 1, 2, 2, 1],
            stage_channels: [64, 128, 256, 256, 256],
            tiny_scale: 1.0,
            sac_variant: Some(SacVariant::ISK),
            attention_kernel: 7,
            attention_input: AttentionInput::Coord3,
            num_classes,
            input_hw,
            batch_norm: true,
            leaky_slope: 0.1,
            input_offsets: [0.0, 0.0, 0.0, -20.0, -0.45],
            input_scales: [0.05, 0.05, 0.25, 0.05, 2.0],
            baseline_follow: false,
            seed: 0,
        }
    }

    /// Depth-53 layout: blocks (1, 2, 8, 8, 4).
    pub fn depth53(num_classes: usize, input_hw: (usize, usize)) -> Self {
        NetworkConfig {
            blocks_per_stage: [1, 2, 8, 8, 4],
            ..Self::depth21(num_classes, input_hw)
        }
    }

    /// Desk-scale ablation configuration: 64 x 512 input, channels scaled to
    /// one eighth, 3x3 attention kernel.
    pub fn tiny(sac_variant: Option<SacVariant>, seed: u64) -> Self {
        NetworkConfig {
            tiny_scale: 0.125,
            sac_variant,
            attention_kernel: 3,
            seed,
            ..Self::depth21(crate::data::classes::NUM_CLASSES, (64, 512))
        }
    }

    pub fn channels(&self, stage: usize) -> usize {
        ((self.stage_channels[stage] as f64 * self.tiny_scale).round() as usize).max(1)
    }

    pub fn coord_channels(&self) -> usize {
        match self.attention_input {
            AttentionInput::Coord3 => 3,
            AttentionInput::Features5 => 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.attention_kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "attention kernel must be odd, got {}",
                self.attention_kernel
            )));
        }
        if self.input_hw.0 % 8 != 0 || self.input_hw.1 % 8 != 0 {
            return Err(Error::Config(format!(
                "input dims must be divisible by 8, got {:?}",
                self.input_hw
            )));
        }
        if self.num_classes == 0 {
            return Err(Error::Config("num_classes must be positive".into()));
        }
        Ok(())
    }
}

/// Strided nearest sampling (top-left of each block), preserving true
/// coordinate values rather than averaged pseudo-coordinates.
pub fn downsample_coord_map<E: Elem>(coord_map: &Tensor<E>, factor: usize) -> Tensor<E> {
    assert!(factor >= 1, "factor must be positive");
    if factor == 1 {
        return coord_map.detach();
    }
    let [n, c, h, w] = coord_map.dims4();
    assert!(
        h % factor == 0 && w % factor == 0,
        "dims {h}x{w} not divisible by factor {factor}"
    );
    let (oh, ow) = (h / factor, w / factor);
    let x = coord_map.data();
    let mut out = vec![E::zero(); n * c * oh * ow];
    for bc in 0..n * c {
        for p in 0..oh {
            for q in 0..ow {
                out[bc * oh * ow + p * ow + q] = x[bc * h * w + p * factor * w + q * factor];
            }
        }
    }
    Tensor::from_vec(&[n, c, oh, ow], out)
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

struct ConvUnit<E: Elem> {
    conv: ConvSpec<E>,
    bn: Option<BatchNorm<E>>,
    slope: f64,
}

impl<E: Elem> ConvUnit<E> {
    fn new(
        rng: &mut Prng,
        i: usize,
        o: usize,
        k: usize,
        stride: usize,
        cfg: &NetworkConfig,
    ) -> Result<Self> {
        let w = fan_in_uniform(rng, &[o, i, k, k], i * k * k);
        let bias = if cfg.batch_norm {
            None
        } else {
            Some(Tensor::param(&[o], vec![E::zero(); o]))
        };
        Ok(ConvUnit {
            conv: ConvSpec::new(Tensor::param(&[o, i, k, k], w.to_vec()), bias, stride, k / 2)?,
            bn: cfg.batch_norm.then(|| BatchNorm::new(o, 1e-5, 0.1)),
            slope: cfg.leaky_slope,
        })
    }

    fn forward(&self, x: &Tensor<E>, training: bool) -> Tensor<E> {
        let mut y = conv2d_direct(x, &self.conv);
        if let Some(bn) = &self.bn {
            y = bn.forward(&y, training);
        }
        y.leaky_relu(self.slope)
    }
}

enum BlockKind<E: Elem> {
    Adaptive(SacLayer<E>),
    Plain {
        main: ConvSpec<E>,
        follow: Option<ConvSpec<E>>,
        residual: bool,
    },
}

/// One backbone block: the (adaptive or plain) first convolution with its
/// residual, then batch norm + activation, then a plain second convolution.
struct Block<E: Elem> {
    kind: BlockKind<E>,
    post_bn: Option<BatchNorm<E>>,
    slope: f64,
    second: ConvUnit<E>,
}

impl<E: Elem> Block<E> {
    fn new(rng: &mut Prng, channels: usize, cfg: &NetworkConfig) -> Result<Self> {
        let kind = match cfg.sac_variant {
            Some(variant) => BlockKind::Adaptive(SacLayer::random(
                rng,
                variant,
                channels,
                channels,
                3,
                cfg.attention_kernel,
                cfg.coord_channels(),
                true,
            )?),
            None => {
                let mw = fan_in_uniform(rng, &[channels, channels, 3, 3], channels * 9);
                let main = ConvSpec::new(
                    Tensor::param(&[channels, channels, 3, 3], mw.to_vec()),
                    Some(Tensor::param(&[channels], vec![E::zero(); channels])),
                    1,
                    1,
                )?;
                let follow = if cfg.baseline_follow {
                    let fw = fan_in_uniform(rng, &[channels, channels, 3, 3], channels * 9);
                    Some(ConvSpec::new(
                        Tensor::param(&[channels, channels, 3, 3], fw.to_vec()),
                        Some(Tensor::param(&[channels], vec![E::zero(); channels])),
                        1,
                        1,
                    )?)
                } else {
                    None
                };
                BlockKind::Plain {
                    main,
                    follow,
                    residual: true,
                }
            }
        };
        Ok(Block {
            kind,
            post_bn: cfg.batch_norm.then(|| BatchNorm::new(channels, 1e-5, 0.1)),
            slope: cfg.leaky_slope,
            second: ConvUnit::new(rng, channels, channels, 3, 1, cfg)?,
        })
    }

    fn forward(
        &self,
        x: &Tensor<E>,
        coord: &Tensor<E>,
        training: bool,
        attention_override: Option<f64>,
    ) -> Tensor<E> {
        let mut y = match &self.kind {
            BlockKind::Adaptive(layer) => {
                let injected = attention_override.map(|v| {
                    let [n, _, h, w] = x.dims4();
                    Tensor::full(&[n, layer.attention_channels(), h, w], E::of(v))
                });
                sac_forward(x, coord, layer, injected.as_ref())
            }
            BlockKind::Plain {
                main,
                follow,
                residual,
            } => {
                let mut y = conv2d_direct(x, main);
                if let Some(f) = follow {
                    y = conv2d_direct(&y, f);
                }
                if *residual {
                    y = y.add(x);
                }
                y
            }
        };
        if let Some(bn) = &self.post_bn {
            y = bn.forward(&y, training);
        }
        y = y.leaky_relu(self.slope);
        self.second.forward(&y, training)
    }
}

struct Stage<E: Elem> {
    entry: ConvUnit<E>,
    blocks: Vec<Block<E>>,
    factor: usize,
}

struct UpBlock<E: Elem> {
    deconv: DeconvSpec<E>,
    bn: Option<BatchNorm<E>>,
    slope: f64,
    conv: ConvUnit<E>,
}

impl<E: Elem> UpBlock<E> {
    fn new(rng: &mut Prng, i: usize, o: usize, cfg: &NetworkConfig) -> Result<Self> {
        let w = fan_in_uniform(rng, &[i, o, 2, 2], i * 4);
        Ok(UpBlock {
            deconv: DeconvSpec::new(Tensor::param(&[i, o, 2, 2], w.to_vec()), None, 2)?,
            bn: cfg.batch_norm.then(|| BatchNorm::new(o, 1e-5, 0.1)),
            slope: cfg.leaky_slope,
            conv: ConvUnit::new(rng, o, o, 3, 1, cfg)?,
        })
    }

    fn forward(&self, x: &Tensor<E>, skip: &Tensor<E>, training: bool) -> Tensor<E> {
        let mut y = conv_transpose2d(x, &self.deconv);
        if let Some(bn) = &self.bn {
            y = bn.forward(&y, training);
        }
        y = y.leaky_relu(self.slope);
        let y = self.conv.forward(&y, training);
        y.add(skip)
    }
}

/// Stage output: the feature map, its head logits, and the stage's
/// downsampling factor.
pub struct StageOutput<E: Elem> {
    pub feature: Tensor<E>,
    pub head_logits: Tensor<E>,
    pub resolution_factor: usize,
}

pub struct Network<E: Elem> {
    pub cfg: NetworkConfig,
    stages: Vec<Stage<E>>,
    ups: Vec<UpBlock<E>>,
    stage_heads: Vec<ConvSpec<E>>,
    final_head: ConvSpec<E>,
}

/// Normalized batched network input.
pub struct NetInput<E: Elem> {
    pub features: Tensor<E>,
    pub coord: Tensor<E>,
}

pub fn build_network<E: Elem>(cfg: &NetworkConfig) -> Result<Network<E>> {
    cfg.validate()?;
    let mut rng = seeded(cfg.seed);
    let mut stages = Vec::with_capacity(5);
    let mut in_ch = 5usize;
    for s in 0..5 {
        let out_ch = cfg.channels(s);
        let stride = if (1..=3).contains(&s) { 2 } else { 1 };
        let entry = ConvUnit::new(&mut rng, in_ch, out_ch, 3, stride, cfg)?;
        let blocks = (0..cfg.blocks_per_stage[s])
            .map(|_| Block::new(&mut rng, out_ch, cfg))
            .collect::<Result<Vec<_>>>()?;
        stages.push(Stage {
            entry,
            blocks,
            factor: RESOLUTION_FACTORS[s],
        });
        in_ch = out_ch;
    }

    // decoder: 1/8 -> 1/4 -> 1/2 -> 1/1 with skips from stages 3, 2, 1
    let ups = vec![
        UpBlock::new(&mut rng, cfg.channels(4), cfg.channels(2), cfg)?,
        UpBlock::new(&mut rng, cfg.channels(2), cfg.channels(1), cfg)?,
        UpBlock::new(&mut rng, cfg.channels(1), cfg.channels(0), cfg)?,
    ];

    let mut head = |i: usize| -> Result<ConvSpec<E>> {
        let c = cfg.channels(i);
        let w = fan_in_uniform(&mut rng, &[cfg.num_classes, c, 1, 1], c);
        ConvSpec::new(
            Tensor::param(&[cfg.num_classes, c, 1, 1], w.to_vec()),
            Some(Tensor::param(&[cfg.num_classes], vec![E::zero(); cfg.num_classes])),
            1,
            0,
        )
    };
    let stage_heads = (0..5).map(&mut head).collect::<Result<Vec<_>>>()?;
    let final_head = head(0)?;

    Ok(Network {
        cfg: cfg.clone(),
        stages,
        ups,
        stage_heads,
        final_head,
    })
}

impl<E: Elem> Network<E> {
    /// Stack images into a normalized batch. The coordinate map fed to the
    /// attention path gets the same per-channel normalization as the feature
    /// stack, so zeros at unmasked pixels stay zero.
    pub fn prepare_input(&self, images: &[&LidarImage<E>]) -> NetInput<E> {
        assert!(!images.is_empty(), "batch must be non-empty");
        let (h, w) = self.cfg.input_hw;
        let n = images.len();
        let npx = h * w;
        let mut feats = vec![E::zero(); n * 5 * npx];
        for (b, img) in images.iter().enumerate() {
            assert_eq!(
                (img.h, img.w),
                (h, w),
                "image dims {}x{} do not match network input {:?}",
                img.h,
                img.w,
                self.cfg.input_hw
            );
            let d = img.features.data();
            for c in 0..5 {
                let (off, sc) = (
                    E::of(self.cfg.input_offsets[c]),
                    E::of(self.cfg.input_scales[c]),
                );
                let dst = &mut feats[(b * 5 + c) * npx..][..npx];
                let src = &d[c * npx..(c + 1) * npx];
                for (o, &v) in dst.iter_mut().zip(src) {
                    *o = (v + off) * sc;
                }
            }
        }
        let features = Tensor::from_vec(&[n, 5, h, w], feats);
        let coord = match self.cfg.attention_input {
            AttentionInput::Coord3 => {
                let mut cd = vec![E::zero(); n * 3 * npx];
                let fd = features.data();
                for b in 0..n {
                    for c in 0..3 {
                        let src = &fd[(b * 5 + c) * npx..][..npx];
                        cd[(b * 3 + c) * npx..][..npx].copy_from_slice(src);
                    }
                }
                drop(fd);
                Tensor::from_vec(&[n, 3, h, w], cd)
            }
            AttentionInput::Features5 => features.detach(),
        };
        NetInput { features, coord }
    }

    fn run(
        &self,
        input: &NetInput<E>,
        training: bool,
        with_heads: bool,
        attention_override: Option<f64>,
    ) -> (Vec<StageOutput<E>>, Tensor<E>) {
        let coords: Vec<Tensor<E>> = [1usize, 2, 4, 8]
            .iter()
            .map(|&f| downsample_coord_map(&input.coord, f))
            .collect();

        let mut stage_feats: Vec<Tensor<E>> = Vec::with_capacity(5);
        let mut x = input.features.clone();
        for stage in &self.stages {
            let mut y = stage.entry.forward(&x, training);
            let coord = &coords[stage.factor.trailing_zeros() as usize];
            for block in &stage.blocks {
                y = block.forward(&y, coord, training, attention_override);
            }
            stage_feats.push(y.clone());
            x = y;
        }

        let mut d = stage_feats[4].clone();
        d = self.ups[0].forward(&d, &stage_feats[2], training);
        d = self.ups[1].forward(&d, &stage_feats[1], training);
        d = self.ups[2].forward(&d, &stage_feats[0], training);
        let final_logits = conv2d_direct(&d, &self.final_head);

        let outputs = if with_heads {
            stage_feats
                .into_iter()
                .enumerate()
                .map(|(i, feature)| {
                    let head_logits = conv2d_direct(&feature, &self.stage_heads[i]);
                    StageOutput {
                        feature,
                        head_logits,
                        resolution_factor: RESOLUTION_FACTORS[i],
                    }
                })
                .collect()
        } else {
            Vec::new()
        };
        (outputs, final_logits)
    }

    /// Training-mode forward: all five stage heads plus the full-resolution
    /// decoder logits.
    pub fn forward_train(&self, input: &NetInput<E>) -> (Vec<StageOutput<E>>, Tensor<E>) {
        self.run(input, true, true, None)
    }

    /// Inference-mode forward (running batch-norm statistics, heads skipped).
    pub fn forward_infer(&self, input: &NetInput<E>) -> Tensor<E> {
        self.run(input, false, false, None).1
    }

    /// Forward with every attention map forced to a constant (test hook).
    pub fn forward_with_attention(
        &self,
        input: &NetInput<E>,
        training: bool,
        attention_override: f64,
    ) -> (Vec<StageOutput<E>>, Tensor<E>) {
        self.run(input, training, true, Some(attention_override))
    }

    /// Named trainable parameters in construction order.
    pub fn params(&self) -> Vec<(String, Tensor<E>)> {
        let mut out = Vec::new();
        let push_conv = |out: &mut Vec<(String, Tensor<E>)>, name: String, c: &ConvSpec<E>| {
            out.push((format!("{name}.weight"), c.weight().clone()));
            if let Some(b) = c.bias() {
                out.push((format!("{name}.bias"), b.clone()));
            }
        };
        let push_bn = |out: &mut Vec<(String, Tensor<E>)>, name: String, bn: &Option<BatchNorm<E>>| {
            if let Some(bn) = bn {
                out.push((format!("{name}.gamma"), bn.gamma.clone()));
                out.push((format!("{name}.beta"), bn.beta.clone()));
            }
        };
        for (s, stage) in self.stages.iter().enumerate() {
            let sn = format!("stage{}", s + 1);
            push_conv(&mut out, format!("{sn}.entry"), &stage.entry.conv);
            push_bn(&mut out, format!("{sn}.entry.bn"), &stage.entry.bn);
            for (b, block) in stage.blocks.iter().enumerate() {
                let bn = format!("{sn}.block{b}");
                match &block.kind {
                    BlockKind::Adaptive(layer) => {
                        push_conv(&mut out, format!("{bn}.attention"), &layer.attention_conv);
                        push_conv(&mut out, format!("{bn}.main"), &layer.main_conv);
                        if let Some(f) = &layer.follow_conv {
                            push_conv(&mut out, format!("{bn}.follow"), f);
                        }
                    }
                    BlockKind::Plain { main, follow, .. } => {
                        push_conv(&mut out, format!("{bn}.main"), main);
                        if let Some(f) = follow {
                            push_conv(&mut out, format!("{bn}.follow"), f);
                        }
                    }
                }
                push_bn(&mut out, format!("{bn}.post.bn"), &block.post_bn);
                push_conv(&mut out, format!("{bn}.second"), &block.second.conv);
                push_bn(&mut out, format!("{bn}.second.bn"), &block.second.bn);
            }
        }
        for (u, up) in self.ups.iter().enumerate() {
            let un = format!("up{}", u + 1);
            out.push((format!("{un}.deconv.weight"), up.deconv.weight().clone()));
            if let Some(b) = up.deconv.bias() {
                out.push((format!("{un}.deconv.bias"), b.clone()));
            }
            push_bn(&mut out, format!("{un}.bn"), &up.bn);
            push_conv(&mut out, format!("{un}.conv"), &up.conv.conv);
            push_bn(&mut out, format!("{un}.conv.bn"), &up.conv.bn);
        }
        for (i, head) in self.stage_heads.iter().enumerate() {
            push_conv(&mut out, format!("head{}", i + 1), head);
        }
        push_conv(&mut out, "head_final".to_string(), &self.final_head);
        out
    }

    /// Batch-norm layers with stable names, for checkpointing running stats.
    fn batch_norms(&self) -> Vec<(String, &BatchNorm<E>)> {
        let mut out: Vec<(String, &BatchNorm<E>)> = Vec::new();
        for (s, stage) in self.stages.iter().enumerate() {
            let sn = format!("stage{}", s + 1);
            if let Some(bn) = &stage.entry.bn {
                out.push((format!("{sn}.entry.bn"), bn));
            }
            for (b, block) in stage.blocks.iter().enumerate() {
                let bn_name = format!("{sn}.block{b}");
                if let Some(bn) = &block.post_bn {
                    out.push((format!("{bn_name}.post.bn"), bn));
                }
                if let Some(bn) = &block.second.bn {
                    out.push((format!("{bn_name}.second.bn"), bn));
                }
            }
        }
        for (u, up) in self.ups.iter().enumerate() {
            let un = format!("up{}", u + 1);
            if let Some(bn) = &up.bn {
                out.push((format!("{un}.bn"), bn));
            }
            if let Some(bn) = &up.conv.bn {
                out.push((format!("{un}.conv.bn"), bn));
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grads(&self) {
        for (_, t) in self.params() {
            t.zero_grad();
        }
    }

    // -----------------------------------------------------------------------
    // Checkpoints: config.json + manifest.json + weights.bin (packed tensor
    // snapshots; the manifest lists name, shape, and byte offset per entry).
    // -----------------------------------------------------------------------

    pub fn save_checkpoint(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

        let cfg_path = dir.join("config.json");
        std::fs::write(&cfg_path, serde_json::to_string_pretty(&self.cfg)?)
            .map_err(|e| Error::io(&cfg_path, e))?;

        let weights_path = dir.join("weights.bin");
        let mut f = std::io::BufWriter::new(
            std::fs::File::create(&weights_path).map_err(|e| Error::io(&weights_path, e))?,
        );
        let mut manifest = Vec::new();
        let mut offset = 0u64;
        let mut dump = |name: String, t: &Tensor<E>, f: &mut dyn Write| -> Result<()> {
            crate::tensor::write_snapshot_to(f, t).map_err(|e| Error::io(&weights_path, e))?;
            let bytes = (crate::tensor::SNAPSHOT_HEADER_BYTES + t.numel() * 8) as u64;
            manifest.push(serde_json::json!({
                "name": name,
                "shape": t.shape(),
                "offset": offset,
            }));
            offset += bytes;
            Ok(())
        };
        for (name, t) in self.params() {
            dump(name, &t, &mut f)?;
        }
        for (name, bn) in self.batch_norms() {
            let c = bn.channels();
            dump(
                format!("{name}.running_mean"),
                &Tensor::from_vec(&[c], bn.running_mean()),
                &mut f,
            )?;
            dump(
                format!("{name}.running_var"),
                &Tensor::from_vec(&[c], bn.running_var()),
                &mut f,
            )?;
        }
        f.flush().map_err(|e| Error::io(&weights_path, e))?;
        drop(f);

        let man_path = dir.join("manifest.json");
        std::fs::write(
            &man_path,
            serde_json::to_string_pretty(&serde_json::Value::Array(manifest))?,
        )
        .map_err(|e| Error::io(&man_path, e))?;
        Ok(())
    }

    pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Network<E>> {
        let dir = dir.as_ref();
        let cfg_path = dir.join("config.json");
        let cfg: NetworkConfig = serde_json::from_str(
            &std::fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?,
        )?;
        let net = build_network::<E>(&cfg)?;

        let man_path = dir.join("manifest.json");
        let manifest: Vec<serde_json::Value> = serde_json::from_str(
            &std::fs::read_to_string(&man_path).map_err(|e| Error::io(&man_path, e))?,
        )?;
        let weights_path = dir.join("weights.bin");
        let mut f = std::fs::File::open(&weights_path).map_err(|e| Error::io(&weights_path, e))?;

        let mut by_offset: std::collections::HashMap<String, u64> = std::collections::HashMap::new();
        for entry in &manifest {
            let name = entry["name"]
                .as_str()
                .ok_or_else(|| Error::Other("manifest entry without name".into()))?;
            let offset = entry["offset"]
                .as_u64()
                .ok_or_else(|| Error::Other("manifest entry without offset".into()))?;
            by_offset.insert(name.to_string(), offset);
        }

        let mut read_named = |name: &str| -> Result<Vec<E>> {
            let &offset = by_offset
                .get(name)
                .ok_or_else(|| Error::Other(format!("checkpoint missing tensor '{name}'")))?;
            f.seek(SeekFrom::Start(offset))
                .map_err(|e| Error::io(&weights_path, e))?;
            let t = crate::tensor::read_snapshot_from::<E>(&mut f)
                .map_err(|e| Error::io(&weights_path, e))?;
            Ok(t.to_vec())
        };

        for (name, t) in net.params() {
            let data = read_named(&name)?;
            if data.len() != t.numel() {
                return Err(Error::Dimension(format!(
                    "checkpoint tensor '{name}' has {} values, expected {}",
                    data.len(),
                    t.numel()
                )));
            }
            t.update_data(|d| d.copy_from_slice(&data));
        }
        for (name, bn) in net.batch_norms() {
            let mean = read_named(&format!("{name}.running_mean"))?;
            let var = read_named(&format!("{name}.running_var"))?;
            bn.set_running_stats(mean, var);
        }
        Ok(net)
    }
}

/// Per-pixel argmax over the channel dimension of `(N, C, H, W)` logits.
pub fn argmax_channels<E: Elem>(logits: &Tensor<E>) -> Vec<u32> {
    let [n, c, h, w] = logits.dims4();
    let hw = h * w;
    let d = logits.data();
    let mut out = vec![0u32; n * hw];
    for b in 0..n {
        for px in 0..hw {
            let mut best = d[b * c * hw + px];
            let mut best_c = 0u32;
            for ch in 1..c {
                let v = d[(b * c + ch) * hw + px];
                if v > best {
                    best = v;
                    best_c = ch as u32;
                }
            }
            out[b * hw + px] = best_c;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_scene, SceneConfig};
    use crate::projection::{build_lidar_image, ProjectionConfig};

    fn tiny_cfg(variant: Option<SacVariant>) -> NetworkConfig {
        let mut cfg = NetworkConfig::tiny(variant, 7);
        cfg.tiny_scale = 1.0 / 16.0;
        cfg.input_hw = (16, 64);
        cfg
    }

    fn tiny_image(cfg: &NetworkConfig) -> LidarImage<f64> {
        let (h, w) = cfg.input_hw;
        let scene = SceneConfig::for_image(h, w, 3);
        let proj = ProjectionConfig::from_degrees(h, w, 3.0, 25.0).unwrap();
        build_lidar_image(&generate_scene(&scene), &proj)
    }

    #[test]
    fn downsample_coord_map_rules() {
        let m = Tensor::<f64>::from_f64s(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(downsample_coord_map(&m, 1).to_vec(), m.to_vec());
        let d = downsample_coord_map(&m, 2);
        assert_eq!(d.shape(), &[1, 1, 1, 1]);
        assert_eq!(d.item(), 1.0); // top-left rule
    }

    #[test]
    fn downsampled_values_exist_in_input() {
        let vals: Vec<f64> = (0..3 * 8 * 8).map(|i| (i as f64).sin()).collect();
        let m = Tensor::<f64>::from_f64s(&[1, 3, 8, 8], &vals);
        for factor in [2usize, 4, 8] {
            for v in downsample_coord_map(&m, factor).to_vec() {
                assert!(vals.contains(&v), "value {v} not from the input");
            }
        }
    }

    #[test]
    #[should_panic(expected = "not divisible")]
    fn downsample_rejects_non_divisible() {
        let m = Tensor::<f64>::zeros(&[1, 1, 6, 6]);
        let _ = downsample_coord_map(&m, 4);
    }

    #[test]
    fn smoke_end_to_end_and_stage_resolutions() {
        let cfg = tiny_cfg(Some(SacVariant::ISK));
        let net = build_network::<f64>(&cfg).unwrap();
        let img = tiny_image(&cfg);
        let input = net.prepare_input(&[&img]);
        let (stages, final_logits) = net.forward_train(&input);
        assert_eq!(stages.len(), 5);
        let (h, w) = cfg.input_hw;
        for (s, out) in stages.iter().enumerate() {
            let f = RESOLUTION_FACTORS[s];
            assert_eq!(out.resolution_factor, f);
            assert_eq!(out.head_logits.shape(), &[1, cfg.num_classes, h / f, w / f]);
        }
        assert_eq!(final_logits.shape(), &[1, cfg.num_classes, h, w]);
    }

    #[test]
    fn zero_input_gives_finite_logits() {
        let cfg = tiny_cfg(Some(SacVariant::S));
        let net = build_network::<f64>(&cfg).unwrap();
        let (h, w) = cfg.input_hw;
        let input = NetInput {
            features: Tensor::zeros(&[1, 5, h, w]),
            coord: Tensor::zeros(&[1, 3, h, w]),
        };
        let (_, logits) = net.forward_train(&input);
        assert!(logits.to_vec().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn forward_is_deterministic_and_heads_are_taps() {
        let cfg = tiny_cfg(Some(SacVariant::SK));
        let net = build_network::<f64>(&cfg).unwrap();
        let img = tiny_image(&cfg);
        let input = net.prepare_input(&[&img]);
        let a = net.forward_infer(&input).to_vec();
        let b = net.forward_infer(&input).to_vec();
        assert_eq!(a, b);
        // heads are read-only taps: training-mode batch statistics differ from
        // running statistics, so compare two head-inclusive runs instead
        let (_, with_heads) = net.run(&input, false, true, None);
        assert_eq!(with_heads.to_vec(), a);
    }

    #[test]
    fn attention_override_matches_plain_twin_with_shared_weights() {
        let cfg = tiny_cfg(Some(SacVariant::ISK));
        let sac_net = build_network::<f64>(&cfg).unwrap();
        let mut twin_cfg = cfg.clone();
        twin_cfg.sac_variant = None;
        twin_cfg.baseline_follow = true;
        let twin = build_network::<f64>(&twin_cfg).unwrap();

        // transplant shared weights (the twin lacks only attention convs)
        let sac_params: std::collections::HashMap<String, Tensor<f64>> =
            sac_net.params().into_iter().collect();
        for (name, t) in twin.params() {
            let src = sac_params
                .get(&name)
                .unwrap_or_else(|| panic!("twin parameter {name} missing from the SAC net"));
            let data = src.to_vec();
            t.update_data(|d| d.copy_from_slice(&data));
        }

        let img = tiny_image(&cfg);
        let input = sac_net.prepare_input(&[&img]);
        let (_, sac_logits) = sac_net.forward_with_attention(&input, true, 1.0);
        let (_, twin_logits) = twin.forward_train(&input);
        let max_rel = sac_logits
            .to_vec()
            .iter()
            .zip(twin_logits.to_vec().iter())
            .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
            .fold(0.0f64, f64::max);
        assert!(max_rel <= 1e-9, "transplant mismatch {max_rel}");
    }

    #[test]
    fn checkpoint_round_trip_exact() {
        let cfg = tiny_cfg(Some(SacVariant::IS));
        let net = build_network::<f64>(&cfg).unwrap();
        let img = tiny_image(&cfg);
        let input = net.prepare_input(&[&img]);
        // run one training pass so running stats are non-trivial
        let _ = net.forward_train(&input);
        let before = net.forward_infer(&input).to_vec();

        let dir = std::env::temp_dir().join("sacseg_ckpt_test");
        let _ = std::fs::remove_dir_all(&dir);
        net.save_checkpoint(&dir).unwrap();
        let back = Network::<f64>::load_checkpoint(&dir).unwrap();
        let after = back.forward_infer(&input).to_vec();
        assert_eq!(before, after);
    }

    #[test]
    fn odd_attention_kernel_required() {
        let mut cfg = tiny_cfg(Some(SacVariant::S));
        cfg.attention_kernel = 4;
        assert!(build_network::<f64>(&cfg).is_err());
    }

    #[test]
    fn end_to_end_gradient_subsample() {
        use crate::loss::{multi_layer_loss, LossConfig};
        use crate::tensor::finite_diff_check_param;

        let mut cfg = tiny_cfg(Some(SacVariant::ISK));
        cfg.input_hw = (8, 16);
        cfg.batch_norm = false; // keep the check cheap and well-conditioned
        let net = build_network::<f64>(&cfg).unwrap();
        let (h, w) = cfg.input_hw;
        let scene = SceneConfig::for_image(h, w, 9);
        let proj = ProjectionConfig::from_degrees(h, w, 3.0, 25.0).unwrap();
        let img = build_lidar_image::<f64>(&generate_scene(&scene), &proj);
        let input = net.prepare_input(&[&img]);

        let mut lcfg = LossConfig::new(cfg.num_classes);
        lcfg.stage_weights = [1.0, 1.0, 1.0, 1.0, 1.0];
        let labels = img.label_map.clone().unwrap();
        let pyramid: [Vec<u32>; 5] = crate::loss::label_pyramid(
            &labels,
            h,
            w,
            cfg.num_classes,
            lcfg.ignore_class,
        )
        .unwrap()
        .try_into()
        .unwrap();
        let weights = vec![1.0; cfg.num_classes];

        let loss_of = |net: &Network<f64>| {
            let (stages, final_logits) = net.forward_train(&input);
            let stage_logits = [
                final_logits,
                stages[1].head_logits.clone(),
                stages[2].head_logits.clone(),
                stages[3].head_logits.clone(),
                stages[4].head_logits.clone(),
            ];
            multi_layer_loss(&stage_logits, &pyramid, &weights, &lcfg)
        };

        // pick one mid-network weight tensor and check >= 50 coordinates
        let params = net.params();
        let (pname, ptensor) = params
            .iter()
            .find(|(n, _)| n == "stage2.block0.main.weight")
            .unwrap();
        let stride = (ptensor.numel() / 50).max(1);
        let coords: Vec<usize> = (0..ptensor.numel()).step_by(stride).collect();
        assert!(coords.len() >= 50, "sampled only {} coordinates", coords.len());
        let err = finite_diff_check_param(|| loss_of(&net), ptensor, 1e-5, &coords);
        assert!(err <= 1e-4, "{pname} gradient error {err}");
    }
}
