use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: usize = 16_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Mamba,
    MambaMlp,
    ExtBimamba,
    InnBimamba,
    CausalAttn,
    BidirAttn,
}

impl BlockKind {
    pub const ALL: [BlockKind; 6] = [
        BlockKind::Mamba,
        BlockKind::MambaMlp,
        BlockKind::ExtBimamba,
        BlockKind::InnBimamba,
        BlockKind::CausalAttn,
        BlockKind::BidirAttn,
    ];

    /// Output at frame `t` depends only on frames `<= t`.
    pub fn is_causal(self) -> bool {
        matches!(
            self,
            BlockKind::Mamba | BlockKind::MambaMlp | BlockKind::CausalAttn
        )
    }

    pub fn is_attention(self) -> bool {
        matches!(self, BlockKind::CausalAttn | BlockKind::BidirAttn)
    }

    pub fn is_mamba_family(self) -> bool {
        !self.is_attention()
    }

    pub fn has_mlp(self) -> bool {
        matches!(
            self,
            BlockKind::MambaMlp | BlockKind::CausalAttn | BlockKind::BidirAttn
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            BlockKind::Mamba => "mamba",
            BlockKind::MambaMlp => "mamba_mlp",
            BlockKind::ExtBimamba => "ext_bimamba",
            BlockKind::InnBimamba => "inn_bimamba",
            BlockKind::CausalAttn => "causal_attn",
            BlockKind::BidirAttn => "bidir_attn",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown block kind `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizePreset {
    Base,
    Small,
    Custom,
}

impl SizePreset {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Self::Base),
            "small" => Ok(Self::Small),
            _ => Err(Error::Config(format!("unknown size preset `{s}` (base or small)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayerSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrontendSpec {
    pub layers: Vec<ConvLayerSpec>,
}

impl FrontendSpec {
    /// The 7-layer waveform encoder: kernels (10,3,3,3,3,2,2), strides
    /// (5,2,2,2,2,2,2), giving a 400-sample receptive field and a
    /// 320-sample hop at 16 kHz.
    pub fn standard(channels: usize) -> Self {
        let kernels = [10, 3, 3, 3, 3, 2, 2];
        let strides = [5, 2, 2, 2, 2, 2, 2];
        Self {
            layers: kernels
                .iter()
                .zip(strides)
                .map(|(&kernel, stride)| ConvLayerSpec {
                    channels,
                    kernel,
                    stride,
                })
                .collect(),
        }
    }

    pub fn hop(&self) -> usize {
        self.layers.iter().map(|l| l.stride).product()
    }

    pub fn receptive_field(&self) -> usize {
        let mut rf = 1;
        let mut jump = 1;
        for l in &self.layers {
            rf += (l.kernel - 1) * jump;
            jump *= l.stride;
        }
        rf
    }

    /// Output length of every conv layer for `samples` input samples.
    pub fn layer_lengths(&self, samples: usize) -> Result<Vec<usize>> {
        let mut len = samples;
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            if len < l.kernel {
                return Err(Error::InvalidLength(format!(
                    "{samples} samples too short: conv layer {i} sees {len} < kernel {}",
                    l.kernel
                )));
            }
            len = (len - l.kernel) / l.stride + 1;
            out.push(len);
        }
        Ok(out)
    }

    /// Sample ranges covering consecutive runs of at most `chunk` frames.
    /// Running the conv stack on each range yields exactly that run of
    /// frames.
    pub fn chunks(&self, samples: usize, chunk: usize) -> Result<Vec<std::ops::Range<usize>>> {
        let frames = self.frames(samples)?;
        let (hop, rf) = (self.hop(), self.receptive_field());
        Ok((0..frames)
            .step_by(chunk.max(1))
            .map(|a| {
                let b = (a + chunk.max(1)).min(frames);
                hop * a..hop * (b - 1) + rf
            })
            .collect())
    }

    /// Encoder frame count for a waveform of `samples` samples.
    pub fn frames(&self, samples: usize) -> Result<usize> {
        Ok(*self
            .layer_lengths(samples)?
            .last()
            .ok_or_else(|| Error::Config("empty frontend".into()))?)
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map(|l| l.channels).unwrap_or(1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosConvSpec {
    pub kernel: usize,
    pub groups: usize,
}

/// Complete description of an encoder: frontend, positional conv and the
/// block stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub block_kind: BlockKind,
    pub n_layers: usize,
    pub d_model: usize,
    pub d_state: usize,
    pub expand: usize,
    pub conv_kernel: usize,
    pub n_heads: usize,
    pub mlp_ratio: f64,
    pub preset: SizePreset,
    pub frontend: FrontendSpec,
    pub pos_conv: PosConvSpec,
}

const MAMBA_STATE: usize = 16;
const MAMBA_EXPAND: usize = 2;
const MAMBA_CONV: usize = 4;

impl EncoderConfig {
    /// Base: `d = 768`, small: `d = 384`; 12 layers each, 512-channel frontend,
    /// positional conv kernel 128 / 16 groups.
    ///
    /// Mamba+MLP presets size the MLP so that one layer carries the same
    /// parameter budget as an attention layer of equal width.
    pub fn preset(kind: BlockKind, size: SizePreset) -> Self {
        let (d_model, n_heads) = match size {
            SizePreset::Base | SizePreset::Custom => (768, 12),
            SizePreset::Small => (384, 6),
        };
        let mut cfg = Self {
            block_kind: kind,
            n_layers: 12,
            d_model,
            d_state: MAMBA_STATE,
            expand: MAMBA_EXPAND,
            conv_kernel: MAMBA_CONV,
            n_heads,
            mlp_ratio: 4.0,
            preset: size,
            frontend: FrontendSpec::standard(512),
            pos_conv: PosConvSpec {
                kernel: 128,
                groups: 16,
            },
        };
        if kind == BlockKind::MambaMlp {
            cfg.mlp_ratio = cfg.budget_matched_mlp_ratio();
        }
        cfg
    }

    /// A tiny configuration for tests and desk-scale runs.
    pub fn tiny(kind: BlockKind, d_model: usize, n_layers: usize) -> Self {
        Self {
            block_kind: kind,
            n_layers,
            d_model,
            d_state: 4,
            expand: 2,
            conv_kernel: 4,
            n_heads: 2,
            mlp_ratio: 2.0,
            preset: SizePreset::Custom,
            frontend: FrontendSpec::standard(8),
            pos_conv: PosConvSpec {
                kernel: 8,
                groups: 2,
            },
        }
    }

    /// MLP ratio whose hidden width makes a Mamba+MLP layer hold as many
    /// parameters as an attention layer of the same width.
    fn budget_matched_mlp_ratio(&self) -> f64 {
        let d = self.d_model;
        let attn = Self {
            block_kind: BlockKind::CausalAttn,
            ..self.clone()
        };
        let mamba = Self {
            block_kind: BlockKind::Mamba,
            ..self.clone()
        };
        let target = attn.layer_param_count() as f64 - mamba.layer_param_count() as f64;
        // norm (2d) + fc1 (d·h + h) + fc2 (h·d + d)
        let hidden = ((target - 3.0 * d as f64) / (2.0 * d as f64 + 1.0)).round();
        hidden / d as f64
    }

    pub fn d_inner(&self) -> usize {
        self.expand * self.d_model
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.mlp_ratio * self.d_model as f64).round() as usize
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn hop(&self) -> usize {
        self.frontend.hop()
    }

    pub fn receptive_field(&self) -> usize {
        self.frontend.receptive_field()
    }

    pub fn frames(&self, samples: usize) -> Result<usize> {
        self.frontend.frames(samples)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.frontend.layers.is_empty() {
            return bad("d_model and frontend must be non-empty".into());
        }
        if self.block_kind.is_attention() && (self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads)) {
            return bad(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.block_kind.is_mamba_family()
            && (self.d_state == 0 || self.expand == 0 || self.conv_kernel == 0)
        {
            return bad("mamba blocks need d_state, expand, conv_kernel >= 1".into());
        }
        if self.block_kind.has_mlp() && self.mlp_hidden() == 0 {
            return bad("mlp hidden width rounds to zero".into());
        }
        if self.pos_conv.groups == 0
            || !self.d_model.is_multiple_of(self.pos_conv.groups)
            || self.pos_conv.kernel == 0
        {
            return bad(format!(
                "positional conv groups {} must divide d_model {}",
                self.pos_conv.groups, self.d_model
            ));
        }
        if self.frontend.layers.iter().any(|l| l.kernel == 0 || l.stride == 0 || l.channels == 0) {
            return bad("frontend layers need positive kernel, stride, channels".into());
        }
        Ok(())
    }

    /// Canonical text form (TOML).
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
