//! Frequency blocks and the encoder/decoder network.
//!
//! Scale `i` (1-based) carries `2^i·C` channels at `H/2^i × W/2^i`. Encoder
//! stages downsample and then run their blocks; the bottleneck runs at the
//! deepest scale; decoder stages add the matching encoder output, run their
//! blocks and upsample. A head conv lifts the input to `C` channels and a tail
//! conv maps back to `C_in`.

mod checkpoint;
mod layers;
mod net;

use sha2::{Digest, Sha256};

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use layers::{Conv, Facm, FacmOutput, Ffn, FreBlock, LayerNorm, Sca, Upsample, LN_EPS};
pub use net::{build_frenet, Cost, FreqSkipStore, Frenet, Layout, Trace};

use crate::config::{join_list, write_kv, KvDoc};
use crate::error::{config_err, Error, Result};

/// Architecture hyperparameters and ablation toggles.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub in_channels: usize,
    pub width: usize,
    /// Blocks per encoder scale, shallowest first. Its length is the scale count.
    pub enc_blocks: Vec<usize>,
    pub bottleneck_blocks: usize,
    /// Blocks per decoder scale, shallowest first.
    pub dec_blocks: Vec<usize>,
    pub grid_target: usize,
    pub ffn_expand: f64,
    /// Spatial size the network is built for; modulation kernels are sized
    /// from the patch grid at each scale.
    pub input_h: usize,
    pub input_w: usize,
    pub use_freq_skip: bool,
    pub use_spatial_skip: bool,
    pub use_local_branch: bool,
    pub use_global_branch: bool,
    pub use_pooling_variant: bool,
    pub global_residual: bool,
    /// Feed the stored spectrum to every decoder block at a scale, or only the first.
    pub freq_skip_all_blocks: bool,
}

impl NetworkConfig {
    /// Width 32, 24 blocks, on 128×128 RAW packed to 4×64×64.
    pub fn frenet() -> Self {
        Self {
            in_channels: 4,
            width: 32,
            enc_blocks: vec![4, 3, 2],
            bottleneck_blocks: 6,
            dec_blocks: vec![4, 3, 2],
            grid_target: 8,
            ffn_expand: 2.0,
            input_h: 64,
            input_w: 64,
            use_freq_skip: true,
            use_spatial_skip: true,
            use_local_branch: true,
            use_global_branch: true,
            use_pooling_variant: false,
            global_residual: false,
            freq_skip_all_blocks: true,
        }
    }

    /// Width 64, 20 blocks.
    pub fn frenet_plus() -> Self {
        Self {
            width: 64,
            enc_blocks: vec![4, 3, 1],
            bottleneck_blocks: 4,
            dec_blocks: vec![4, 3, 1],
            ..Self::frenet()
        }
    }

    /// Width 4, two scales, one block everywhere, on 4×16×16.
    pub fn tiny() -> Self {
        Self {
            width: 4,
            enc_blocks: vec![1, 1],
            bottleneck_blocks: 1,
            dec_blocks: vec![1, 1],
            input_h: 16,
            input_w: 16,
            ..Self::frenet()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "frenet" => Ok(Self::frenet()),
            "frenet_plus" => Ok(Self::frenet_plus()),
            "tiny" => Ok(Self::tiny()),
            other => config_err!("unknown preset {other:?} (expected frenet, frenet_plus or tiny)"),
        }
    }

    pub fn with_input(mut self, h: usize, w: usize) -> Self {
        self.input_h = h;
        self.input_w = w;
        self
    }

    pub fn scales(&self) -> usize {
        self.enc_blocks.len()
    }

    pub fn total_blocks(&self) -> usize {
        self.enc_blocks.iter().sum::<usize>() + self.bottleneck_blocks + self.dec_blocks.iter().sum::<usize>()
    }

    /// Channels at scale `i`.
    pub fn channels_at(&self, i: usize) -> usize {
        self.width << i
    }

    /// Spatial size at scale `i`.
    pub fn hw_at(&self, i: usize) -> (usize, usize) {
        (self.input_h >> i, self.input_w >> i)
    }

    pub fn ffn_hidden(&self, c: usize) -> usize {
        (self.ffn_expand * c as f64).ceil() as usize
    }

    /// Lists every violated constraint in one error.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let l = self.scales();
        if self.in_channels == 0 {
            bad.push("in_channels must be ≥ 1".to_string());
        }
        if self.width == 0 || self.width % 2 != 0 {
            bad.push(format!("width {} must be positive and even", self.width));
        }
        if l == 0 {
            bad.push("at least one scale is required".into());
        }
        if self.dec_blocks.len() != l {
            bad.push(format!(
                "{} encoder scales but {} decoder scales",
                l,
                self.dec_blocks.len()
            ));
        }
        if self.grid_target == 0 {
            bad.push("grid_target must be ≥ 1".into());
        }
        if !(self.ffn_expand.is_finite() && self.ffn_expand > 0.0) {
            bad.push(format!("ffn_expand {} must be positive", self.ffn_expand));
        }
        if !self.use_local_branch && !self.use_global_branch {
            bad.push("at least one of use_local_branch / use_global_branch must be true".into());
        }
        if self.use_pooling_variant && !self.use_local_branch {
            bad.push("use_pooling_variant replaces the local branch, which is disabled".into());
        }
        for (name, d) in [("input_h", self.input_h), ("input_w", self.input_w)] {
            if !d.is_power_of_two() {
                bad.push(format!("{name} {d} must be a power of two"));
            } else if l < usize::BITS as usize && d < (1 << l) {
                bad.push(format!("{name} {d} must be divisible by 2^{l}"));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid network config: {}", bad.join("; "))))
        }
    }

    /// Reads network keys, starting from `preset` when given.
    pub fn from_kv(doc: &mut KvDoc) -> Result<Self> {
        let base = match doc.take_str("preset") {
            Some(p) => Some(Self::preset(&p)?),
            None => None,
        };
        fn get<V: std::str::FromStr>(doc: &mut KvDoc, key: &str, base: Option<V>) -> Result<V> {
            match (doc.take(key)?, base) {
                (Some(v), _) | (None, Some(v)) => Ok(v),
                (None, None) => config_err!("missing required key {key} (or set preset)"),
            }
        }
        fn list(doc: &mut KvDoc, key: &str, base: Option<Vec<usize>>) -> Result<Vec<usize>> {
            match (doc.take_list(key)?, base) {
                (Some(v), _) | (None, Some(v)) => Ok(v),
                (None, None) => config_err!("missing required key {key} (or set preset)"),
            }
        }
        let b = base.as_ref();
        let cfg = Self {
            in_channels: get(doc, "in_channels", b.map(|b| b.in_channels))?,
            width: get(doc, "width", b.map(|b| b.width))?,
            enc_blocks: list(doc, "enc_blocks", b.map(|b| b.enc_blocks.clone()))?,
            bottleneck_blocks: get(doc, "bottleneck_blocks", b.map(|b| b.bottleneck_blocks))?,
            dec_blocks: list(doc, "dec_blocks", b.map(|b| b.dec_blocks.clone()))?,
            grid_target: get(doc, "grid_target", b.map(|b| b.grid_target))?,
            ffn_expand: get(doc, "ffn_expand", b.map(|b| b.ffn_expand))?,
            input_h: get(doc, "input_h", b.map(|b| b.input_h))?,
            input_w: get(doc, "input_w", b.map(|b| b.input_w))?,
            use_freq_skip: get(doc, "use_freq_skip", b.map(|b| b.use_freq_skip))?,
            use_spatial_skip: get(doc, "use_spatial_skip", b.map(|b| b.use_spatial_skip))?,
            use_local_branch: get(doc, "use_local_branch", b.map(|b| b.use_local_branch))?,
            use_global_branch: get(doc, "use_global_branch", b.map(|b| b.use_global_branch))?,
            use_pooling_variant: get(doc, "use_pooling_variant", b.map(|b| b.use_pooling_variant))?,
            global_residual: get(doc, "global_residual", b.map(|b| b.global_residual))?,
            freq_skip_all_blocks: get(doc, "freq_skip_all_blocks", b.map(|b| b.freq_skip_all_blocks))?,
        };
        let scales: Option<usize> = doc.take("scales")?;
        if let Some(l) = scales {
            if l != cfg.scales() {
                return config_err!("scales = {l} but enc_blocks lists {} scales", cfg.scales());
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text: every key, fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        write_kv(&mut s, "in_channels", self.in_channels);
        write_kv(&mut s, "width", self.width);
        write_kv(&mut s, "scales", self.scales());
        write_kv(&mut s, "enc_blocks", join_list(&self.enc_blocks));
        write_kv(&mut s, "bottleneck_blocks", self.bottleneck_blocks);
        write_kv(&mut s, "dec_blocks", join_list(&self.dec_blocks));
        write_kv(&mut s, "grid_target", self.grid_target);
        write_kv(&mut s, "ffn_expand", self.ffn_expand);
        write_kv(&mut s, "input_h", self.input_h);
        write_kv(&mut s, "input_w", self.input_w);
        write_kv(&mut s, "use_freq_skip", self.use_freq_skip);
        write_kv(&mut s, "use_spatial_skip", self.use_spatial_skip);
        write_kv(&mut s, "use_local_branch", self.use_local_branch);
        write_kv(&mut s, "use_global_branch", self.use_global_branch);
        write_kv(&mut s, "use_pooling_variant", self.use_pooling_variant);
        write_kv(&mut s, "global_residual", self.global_residual);
        write_kv(&mut s, "freq_skip_all_blocks", self.freq_skip_all_blocks);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut doc = KvDoc::parse(text)?;
        let cfg = Self::from_kv(&mut doc)?;
        doc.finish()?;
        Ok(cfg)
    }

    /// SHA-256 of the canonical text.
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.to_text().as_bytes()).into()
    }
}
