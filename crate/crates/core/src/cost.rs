//! Parameter and MAC accounting.
//!
//! A convolution contributes `O*I*K*K` parameters (plus `O` bias) and
//! `O*I*K*K*H_out*W_out` MACs; a transposed convolution `I*O*K*K*H_in*W_in`
//! MACs. Batch-norm affine pairs count as parameters but no MACs;
//! activations are free. The "extra" tally covers the attention convolutions
//! and their gating multiplies — everything the adaptive layers add on top
//! of the static-convolution twin. Percentages are relative to that twin
//! (total minus extra). The enumeration mirrors network construction exactly,
//! anchored by a test comparing against a built network's parameter count.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{NetworkConfig, RESOLUTION_FACTORS};

#[derive(Clone, Debug)]
pub struct LayerCost {
    pub name: String,
    pub params: u64,
    pub macs: u64,
    /// Added by the adaptive attention path (the Table-1 "extra" tally).
    pub attention_extra: bool,
}

#[derive(Clone, Debug, Default)]
pub struct CostReport {
    pub layers: Vec<LayerCost>,
}

impl CostReport {
    pub fn params_total(&self) -> u64 {
        self.layers.iter().map(|l| l.params).sum()
    }

    pub fn macs_total(&self) -> u64 {
        self.layers.iter().map(|l| l.macs).sum()
    }

    pub fn params_extra(&self) -> u64 {
        self.layers.iter().filter(|l| l.attention_extra).map(|l| l.params).sum()
    }

    pub fn macs_extra(&self) -> u64 {
        self.layers.iter().filter(|l| l.attention_extra).map(|l| l.macs).sum()
    }

    pub fn extra_params_pct(&self) -> f64 {
        let base = self.params_total() - self.params_extra();
        100.0 * self.params_extra() as f64 / base as f64
    }

    pub fn extra_macs_pct(&self) -> f64 {
        let base = self.macs_total() - self.macs_extra();
        100.0 * self.macs_extra() as f64 / base as f64
    }

    /// One CSV row per layer plus a totals row.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let io = |e| Error::io(path, e);
        writeln!(f, "layer,params,macs,attention_extra").map_err(io)?;
        for l in &self.layers {
            writeln!(f, "{},{},{},{}", l.name, l.params, l.macs, l.attention_extra).map_err(io)?;
        }
        writeln!(
            f,
            "total,{},{},extra={}+{}",
            self.params_total(),
            self.macs_total(),
            self.params_extra(),
            self.macs_extra()
        )
        .map_err(io)?;
        Ok(())
    }
}

fn conv_cost(o: u64, i: u64, k: u64, h_out: u64, w_out: u64, bias: bool) -> (u64, u64) {
    let params = o * i * k * k + if bias { o } else { 0 };
    let macs = o * i * k * k * h_out * w_out;
    (params, macs)
}

/// Symbolic cost enumeration of a network configuration.
pub fn network_cost(cfg: &NetworkConfig) -> CostReport {
    let mut layers = Vec::new();
    let (h, w) = cfg.input_hw;
    let classes = cfg.num_classes as u64;
    let bn_params = |c: u64| if cfg.batch_norm { 2 * c } else { 0 };
    let conv_bias = !cfg.batch_norm;

    let mut push = |name: String, params: u64, macs: u64, extra: bool| {
        layers.push(LayerCost {
            name,
            params,
            macs,
            attention_extra: extra,
        });
    };

    let mut in_ch = 5u64;
    for s in 0..5 {
        let c = cfg.channels(s) as u64;
        let (hs, ws) = (
            (h / RESOLUTION_FACTORS[s]) as u64,
            (w / RESOLUTION_FACTORS[s]) as u64,
        );
        let sn = format!("stage{}", s + 1);
        let (p, m) = conv_cost(c, in_ch, 3, hs, ws, conv_bias);
        push(format!("{sn}.entry"), p + bn_params(c), m, false);

        for b in 0..cfg.blocks_per_stage[s] {
            let bn = format!("{sn}.block{b}");
            match cfg.sac_variant {
                Some(v) => {
                    let c_att =
                        v.attention_channels(c as usize, c as usize, 3) as u64;
                    let ka = cfg.attention_kernel as u64;
                    let (p, m) = conv_cost(
                        c_att,
                        cfg.coord_channels() as u64,
                        ka,
                        hs,
                        ws,
                        true,
                    );
                    // gating multiply: one MAC per gated element
                    let gate = if v.adapt_k { c * 9 } else { c } * hs * ws;
                    push(format!("{bn}.attention"), p, m + gate, true);

                    let (p, m) = conv_cost(c, c, 3, hs, ws, true);
                    push(format!("{bn}.main"), p, m, false);
                    if v.adapt_k {
                        let (p, m) = conv_cost(c, c, 3, hs, ws, true);
                        push(format!("{bn}.follow"), p, m, false);
                    }
                }
                None => {
                    let (p, m) = conv_cost(c, c, 3, hs, ws, true);
                    push(format!("{bn}.main"), p, m, false);
                    if cfg.baseline_follow {
                        let (p, m) = conv_cost(c, c, 3, hs, ws, true);
                        push(format!("{bn}.follow"), p, m, false);
                    }
                }
            }
            push(format!("{bn}.post.bn"), bn_params(c), 0, false);
            let (p, m) = conv_cost(c, c, 3, hs, ws, conv_bias);
            push(format!("{bn}.second"), p + bn_params(c), m, false);
        }
        in_ch = c;
    }

    // decoder: 1/8 -> 1/4 -> 1/2 -> 1/1 with channels ch(4)->ch(2)->ch(1)->ch(0)
    let up_io = [
        (cfg.channels(4) as u64, cfg.channels(2) as u64, 8u64),
        (cfg.channels(2) as u64, cfg.channels(1) as u64, 4),
        (cfg.channels(1) as u64, cfg.channels(0) as u64, 2),
    ];
    for (u, &(i, o, fin)) in up_io.iter().enumerate() {
        let un = format!("up{}", u + 1);
        let (h_in, w_in) = ((h as u64) / fin, (w as u64) / fin);
        let (h_out, w_out) = (h_in * 2, w_in * 2);
        let p = i * o * 4; // 2x2 transposed kernel, no bias
        let m = i * o * 4 * h_in * w_in;
        push(format!("{un}.deconv"), p + bn_params(o), m, false);
        let (p, m) = conv_cost(o, o, 3, h_out, w_out, conv_bias);
        push(format!("{un}.conv"), p + bn_params(o), m, false);
    }

    for s in 0..5 {
        let c = cfg.channels(s) as u64;
        let (hs, ws) = (
            (h / RESOLUTION_FACTORS[s]) as u64,
            (w / RESOLUTION_FACTORS[s]) as u64,
        );
        let (p, m) = conv_cost(classes, c, 1, hs, ws, true);
        push(format!("head{}", s + 1), p, m, false);
    }
    let (p, m) = conv_cost(classes, cfg.channels(0) as u64, 1, h as u64, w as u64, true);
    push("head_final".to_string(), p, m, false);

    CostReport { layers }
}
