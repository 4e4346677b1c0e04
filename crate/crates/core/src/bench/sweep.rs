//! Length sweep over configurations: MACs/sec, RTF and the memory
//! estimate, with CSV and two-panel SVG output.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bench::cost::count_macs;
use crate::bench::memory::estimate_peak_memory;
use crate::bench::rtf::measure_rtf;
use crate::blocks::config::EncoderConfig;
use crate::blocks::encoder::Encoder;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_LENGTHS: [f64; 7] = [5.0, 10.0, 20.0, 40.0, 80.0, 160.0, 320.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub model: String,
    pub seconds: f64,
    pub macs_per_sec: f64,
    /// Empty when timing was skipped or the row is predicted to run out
    /// of memory.
    pub rtf_mean: Option<f64>,
    pub rtf_std: Option<f64>,
    pub est_peak_bytes: u64,
    pub predicted_oom: bool,
}

#[derive(Clone, Debug)]
pub struct SweepOptions {
    pub lengths: Vec<f64>,
    pub budget_bytes: u64,
    /// Timed runs per row; 0 skips timing.
    pub runs: usize,
    pub seed: u64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            lengths: DEFAULT_LENGTHS.to_vec(),
            budget_bytes: u64::MAX,
            runs: 10,
            seed: 0,
        }
    }
}

pub fn sweep<T: Scalar>(models: &[(String, EncoderConfig)], opts: &SweepOptions) -> Result<Vec<SweepRow>> {
    if models.is_empty() {
        return Err(Error::Config("sweep needs at least one model".into()));
    }
    let bytes = std::mem::size_of::<T>() as u64;
    let mut rows = Vec::new();
    for (name, cfg) in models {
        let encoder = Encoder::new(cfg)?;
        let params = if opts.runs > 0 {
            Some(encoder.init::<T>(&mut ChaCha8Rng::seed_from_u64(opts.seed)))
        } else {
            None
        };
        for &seconds in &opts.lengths {
            let est = estimate_peak_memory(cfg, seconds, 1, bytes);
            let oom = est > opts.budget_bytes;
            let timing = match (&params, oom) {
                (Some(p), false) => Some(measure_rtf(&encoder, p, seconds, opts.runs)?),
                _ => None,
            };
            rows.push(SweepRow {
                model: name.clone(),
                seconds,
                macs_per_sec: count_macs(cfg, seconds),
                rtf_mean: timing.map(|t| t.0),
                rtf_std: timing.map(|t| t.1),
                est_peak_bytes: est,
                predicted_oom: oom,
            });
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::format(path, e.to_string())))
        .collect()
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Two panels sharing a log2 length axis: MACs/sec (G) left, RTF right.
/// Predicted-OOM points are drawn as crosses on the MACs panel.
pub fn render_svg(rows: &[SweepRow]) -> String {
    let (pw, ph, margin) = (360.0, 260.0, 50.0);
    let mut models: Vec<&str> = Vec::new();
    for r in rows {
        if !models.contains(&r.model.as_str()) {
            models.push(&r.model);
        }
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.seconds.log2()).collect();
    let (xmin, xmax) = bounds(&xs);
    let gmacs: Vec<f64> = rows.iter().map(|r| r.macs_per_sec / 1e9).collect();
    let rtfs: Vec<f64> = rows.iter().filter_map(|r| r.rtf_mean).collect();
    let mut svg = String::new();
    let width = 2.0 * (pw + 2.0 * margin);
    let height = ph + 2.0 * margin + 20.0 * models.len() as f64;
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let panels = [("MACs (G/sec)", gmacs.clone(), 0.0), ("Real-time factor", rtfs.clone(), pw + 2.0 * margin)];
    for (title, values, ox) in &panels {
        let (ymin, ymax) = bounds(values);
        let (ymin, ymax) = (ymin.min(0.0), ymax.max(ymin + 1e-12));
        let x0 = ox + margin;
        let _ = writeln!(
            svg,
            r#"<rect x="{x0}" y="{margin}" width="{pw}" height="{ph}" fill="none" stroke="black"/><text x="{}" y="{}" text-anchor="middle">{title}</text>"#,
            x0 + pw / 2.0,
            margin - 10.0
        );
        let px = |x: f64| x0 + (x - xmin) / (xmax - xmin).max(1e-12) * pw;
        let py = |y: f64| margin + ph - (y - ymin) / (ymax - ymin) * ph;
        let mut ticks: Vec<f64> = rows.iter().map(|r| r.seconds).collect();
        ticks.sort_by(f64::total_cmp);
        ticks.dedup();
        for s in &ticks {
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" text-anchor="middle">{s}</text>"#,
                px(s.log2()),
                margin + ph + 15.0
            );
        }
        let _ = writeln!(svg, r#"<text x="{x0}" y="{}">{:.3}</text>"#, margin + ph - 2.0, ymin);
        let _ = writeln!(svg, r#"<text x="{x0}" y="{}">{:.3}</text>"#, margin + 10.0, ymax);
        for (mi, m) in models.iter().enumerate() {
            let color = PALETTE[mi % PALETTE.len()];
            let is_macs = *ox == 0.0;
            let pts: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.model == *m && (is_macs || r.rtf_mean.is_some()) && !(is_macs && r.predicted_oom))
                .map(|r| {
                    let y = if is_macs { r.macs_per_sec / 1e9 } else { r.rtf_mean.unwrap_or(0.0) };
                    (px(r.seconds.log2()), py(y))
                })
                .collect();
            if pts.len() > 1 {
                let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
                let _ = writeln!(
                    svg,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                    path.join(" ")
                );
            }
            for (x, y) in &pts {
                let _ = writeln!(svg, r#"<circle cx="{x:.1}" cy="{y:.1}" r="2.5" fill="{color}"/>"#);
            }
            if is_macs {
                for r in rows.iter().filter(|r| r.model == *m && r.predicted_oom) {
                    let (x, y) = (px(r.seconds.log2()), py(r.macs_per_sec / 1e9).max(margin));
                    let _ = writeln!(
                        svg,
                        r#"<path d="M{} {} L{} {} M{} {} L{} {}" stroke="{color}" stroke-width="2"/>"#,
                        x - 4.0, y - 4.0, x + 4.0, y + 4.0, x - 4.0, y + 4.0, x + 4.0, y - 4.0
                    );
                }
            }
        }
    }
    for (mi, m) in models.iter().enumerate() {
        let y = margin + ph + 35.0 + 20.0 * mi as f64;
        let _ = writeln!(
            svg,
            r#"<rect x="{margin}" y="{}" width="12" height="4" fill="{}"/><text x="{}" y="{y}">{m}</text>"#,
            y - 6.0,
            PALETTE[mi % PALETTE.len()],
            margin + 18.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn bounds(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo.is_finite() {
        (lo, hi)
    } else {
        (0.0, 1.0)
    }
}

pub fn write_svg(path: &Path, rows: &[SweepRow]) -> Result<()> {
    std::fs::write(path, render_svg(rows)).map_err(|e| Error::io(path, e))
}
