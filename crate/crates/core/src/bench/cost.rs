//! Closed-form multiply-accumulate counts. One MAC is one multiply-add; an
//! `[m x k]·[k x n]` product is `m·k·n`; activations, norms and softmax are
//! free; convolutions count every tap including padding.

use crate::blocks::config::{BlockKind, EncoderConfig, SAMPLE_RATE};
use crate::blocks::frontend::CHUNK_FRAMES;
use crate::error::Result;

/// MACs of one selective-scan path (depthwise conv, selection projections,
/// scan) per frame.
fn conv_ssm_per_frame(cfg: &EncoderConfig) -> u64 {
    let (d, n, k) = (cfg.d_inner() as u64, cfg.d_state as u64, cfg.conv_kernel as u64);
    d * k + d * (2 * n + 1) + d * (3 * n + 1)
}

fn mamba_core_per_frame(cfg: &EncoderConfig, paths: u64) -> u64 {
    let (d, di) = (cfg.d_model as u64, cfg.d_inner() as u64);
    d * 2 * di + di * d + paths * conv_ssm_per_frame(cfg)
}

fn mlp_per_frame(cfg: &EncoderConfig) -> u64 {
    2 * cfg.d_model as u64 * cfg.mlp_hidden() as u64
}

/// Length-independent MACs of one encoder layer per frame.
pub fn layer_macs_per_frame(cfg: &EncoderConfig) -> u64 {
    let d = cfg.d_model as u64;
    match cfg.block_kind {
        BlockKind::Mamba => mamba_core_per_frame(cfg, 1),
        BlockKind::MambaMlp => mamba_core_per_frame(cfg, 1) + mlp_per_frame(cfg),
        BlockKind::InnBimamba => mamba_core_per_frame(cfg, 2),
        BlockKind::ExtBimamba => 2 * mamba_core_per_frame(cfg, 1),
        BlockKind::CausalAttn | BlockKind::BidirAttn => 4 * d * d + mlp_per_frame(cfg),
    }
}

/// MACs of one layer that scale with `L²`: the score map and the
/// probability-value product.
pub fn layer_quadratic_macs(cfg: &EncoderConfig, frames: u64) -> u64 {
    if cfg.block_kind.is_attention() {
        2 * frames * frames * cfg.d_model as u64
    } else {
        0
    }
}

/// Feature projection plus positional conv, per frame.
fn frame_level_frontend(cfg: &EncoderConfig) -> u64 {
    let d = cfg.d_model as u64;
    let c = cfg.frontend.out_channels() as u64;
    c * d + d * (d / cfg.pos_conv.groups as u64) * cfg.pos_conv.kernel as u64
}

/// Exact MACs of one inference forward pass over `samples` samples,
/// including the chunk overlap of the conv stack; equal to what the
/// instrumented counter records.
pub fn total_macs(cfg: &EncoderConfig, samples: usize) -> Result<u64> {
    let mut total = 0u64;
    for r in cfg.frontend.chunks(samples, CHUNK_FRAMES)? {
        let lens = cfg.frontend.layer_lengths(r.len())?;
        let mut c_in = 1u64;
        for (l, &len) in cfg.frontend.layers.iter().zip(&lens) {
            total += l.channels as u64 * c_in * l.kernel as u64 * len as u64;
            c_in = l.channels as u64;
        }
    }
    let frames = cfg.frontend.frames(samples)? as u64;
    total += frames * frame_level_frontend(cfg);
    total += cfg.n_layers as u64 * (frames * layer_macs_per_frame(cfg) + layer_quadratic_macs(cfg, frames));
    Ok(total)
}

/// Steady-state MACs per second of audio for an input of `seconds`: every
/// rate uses the ideal frame rate `SAMPLE_RATE / hop`, so length-linear
/// models give the same value at every length.
pub fn count_macs(cfg: &EncoderConfig, seconds: f64) -> f64 {
    let sr = SAMPLE_RATE as f64;
    let mut per_sec = 0.0;
    let mut c_in = 1.0;
    let mut stride = 1.0;
    for l in &cfg.frontend.layers {
        stride *= l.stride as f64;
        per_sec += l.channels as f64 * c_in * l.kernel as f64 * sr / stride;
        c_in = l.channels as f64;
    }
    let fps = sr / cfg.hop() as f64;
    per_sec += fps * (frame_level_frontend(cfg) + cfg.n_layers as u64 * layer_macs_per_frame(cfg)) as f64;
    let frames = fps * seconds;
    if cfg.block_kind.is_attention() {
        per_sec += cfg.n_layers as f64 * 2.0 * frames * frames * cfg.d_model as f64 / seconds;
    }
    per_sec
}
