//! Analytic peak-memory model. Lengths are treated as continuous
//! (`samples / stride`), so the estimate tends to the parameter bytes as
//! the duration goes to zero.

use crate::blocks::config::{BlockKind, EncoderConfig, SAMPLE_RATE};
use crate::blocks::frontend::CHUNK_FRAMES;

/// Bytes of one scalar in the default (64-bit) mode.
pub const F64_BYTES: u64 = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MemoryEstimate {
    pub params: f64,
    pub frontend: f64,
    pub states: f64,
    pub layer: f64,
    /// Attention probability maps alone.
    pub scores: f64,
}

impl MemoryEstimate {
    pub fn total(&self) -> u64 {
        (self.params + self.states + self.frontend.max(self.layer)).ceil() as u64
    }
}

/// Scalars held by one layer's forward pass (its cache in training).
fn layer_scalars(cfg: &EncoderConfig, frames: f64) -> (f64, f64) {
    let (d, di, n) = (cfg.d_model as f64, cfg.d_inner() as f64, cfg.d_state as f64);
    let path = 5.0 * di + 2.0 * n + 2.0;
    let core = |paths: f64| 2.0 * d + 6.0 * di + paths * (path + di);
    let mlp = 2.0 * d + 2.0 * cfg.mlp_hidden() as f64;
    let per_frame = match cfg.block_kind {
        BlockKind::Mamba => core(1.0),
        BlockKind::MambaMlp => core(1.0) + mlp,
        BlockKind::InnBimamba => core(2.0),
        BlockKind::ExtBimamba => 2.0 * core(1.0),
        BlockKind::CausalAttn | BlockKind::BidirAttn => 7.0 * d + mlp,
    };
    let scores = if cfg.block_kind.is_attention() {
        cfg.n_heads as f64 * frames * frames
    } else {
        0.0
    };
    (per_frame * frames, scores)
}

/// Continuous per-layer output lengths of the frontend and the frame count.
fn lengths(cfg: &EncoderConfig, seconds: f64) -> (Vec<f64>, f64) {
    let mut len = seconds * SAMPLE_RATE as f64;
    let mut out = vec![len];
    for l in &cfg.frontend.layers {
        len /= l.stride as f64;
        out.push(len);
    }
    (out, len)
}

/// Peak bytes of an inference forward pass over `batch` inputs of
/// `seconds` each, with `scalar_bytes` per value. The conv stack runs in
/// chunks of `CHUNK_FRAMES` frames.
pub fn estimate_breakdown(cfg: &EncoderConfig, seconds: f64, batch: usize, scalar_bytes: u64) -> MemoryEstimate {
    let b = scalar_bytes as f64;
    let batch = batch as f64;
    let (_, frames) = lengths(cfg, seconds);
    let chunk = (CHUNK_FRAMES * cfg.hop()) as f64 / SAMPLE_RATE as f64;
    let (lens, _) = lengths(cfg, seconds.min(chunk));
    let mut stack: f64 = 0.0;
    let mut c_in = 1.0;
    for (i, l) in cfg.frontend.layers.iter().enumerate() {
        let c = l.channels as f64;
        stack = stack.max(lens[i] * c_in + lens[i + 1] * c);
        c_in = c;
    }
    let feats = frames * cfg.frontend.out_channels() as f64;
    let (layer, scores) = layer_scalars(cfg, frames);
    MemoryEstimate {
        params: cfg.param_count() as f64 * b,
        frontend: batch * (feats + stack + 4.0 * frames * cfg.d_model as f64) * b,
        states: batch * (cfg.n_layers + 1) as f64 * frames * cfg.d_model as f64 * b,
        layer: batch * (layer + scores) * b,
        scores: batch * scores * b,
    }
}

pub fn estimate_peak_memory(cfg: &EncoderConfig, seconds: f64, batch: usize, scalar_bytes: u64) -> u64 {
    estimate_breakdown(cfg, seconds, batch, scalar_bytes).total()
}

/// Peak bytes of one training step: parameters, gradients and two
/// optimizer moments, plus every layer's cache and one layer's backward
/// temporaries.
pub fn estimate_training_peak_memory(cfg: &EncoderConfig, seconds: f64, batch: usize, scalar_bytes: u64) -> u64 {
    let b = scalar_bytes as f64;
    let (lens, frames) = lengths(cfg, seconds);
    let mut frontend = 0.0;
    let mut c_in = 1.0;
    for (i, l) in cfg.frontend.layers.iter().enumerate() {
        frontend += lens[i] * c_in + lens[i + 1] * l.channels as f64;
        c_in = l.channels as f64;
    }
    let (layer, scores) = layer_scalars(cfg, frames);
    let one = layer + scores;
    let acts = frontend
        + 6.0 * frames * cfg.d_model as f64
        + (cfg.n_layers + 1) as f64 * frames * cfg.d_model as f64
        + (cfg.n_layers as f64 + 1.0) * one;
    (4.0 * cfg.param_count() as f64 * b + batch as f64 * acts * b).ceil() as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::config::SizePreset;

    #[test]
    fn zero_length_is_parameters_only() {
        for kind in BlockKind::ALL {
            let cfg = EncoderConfig::preset(kind, SizePreset::Small);
            let params = cfg.param_count() as u64 * F64_BYTES;
            assert_eq!(estimate_peak_memory(&cfg, 0.0, 1, F64_BYTES), params);
            assert!(estimate_peak_memory(&cfg, 1e-9, 1, F64_BYTES) - params < 1000);
        }
    }

    #[test]
    fn doubling_growth_follows_term_structure() {
        let attn = EncoderConfig::preset(BlockKind::BidirAttn, SizePreset::Base);
        let mamba = EncoderConfig::preset(BlockKind::Mamba, SizePreset::Base);
        // score maps dominate from 160 s at base width
        for s in [160.0, 320.0] {
            let a = estimate_peak_memory(&attn, 2.0 * s, 1, 4) as f64 / estimate_peak_memory(&attn, s, 1, 4) as f64;
            assert!(a >= 3.0, "{a}");
        }
        for s in [5.0, 40.0, 160.0] {
            let m = estimate_peak_memory(&mamba, 2.0 * s, 1, 4) as f64 / estimate_peak_memory(&mamba, s, 1, 4) as f64;
            assert!(m <= 2.1, "{m}");
        }
        assert!(
            estimate_training_peak_memory(&mamba, 10.0, 1, 8) > estimate_peak_memory(&mamba, 10.0, 1, 8)
        );
    }
}
