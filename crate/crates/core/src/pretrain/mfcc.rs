//! 39-dimensional MFCC targets on the encoder's 20 ms frame grid.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::blocks::config::SAMPLE_RATE;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

pub const WINDOW: usize = 400;
pub const HOP: usize = 320;
pub const N_FFT: usize = 512;
pub const N_MELS: usize = 40;
pub const N_CEPS: usize = 13;
pub const DELTA_WIDTH: usize = 2;
pub const LOG_FLOOR: f64 = 1e-10;
pub const MFCC_DIM: usize = 3 * N_CEPS;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters `[N_MELS x (N_FFT/2 + 1)]` spaced evenly on the mel
/// scale between 0 Hz and Nyquist.
pub fn mel_filterbank() -> Vec<Vec<f64>> {
    let nyq = SAMPLE_RATE as f64 / 2.0;
    let top = hz_to_mel(nyq);
    let edges: Vec<f64> = (0..N_MELS + 2)
        .map(|i| mel_to_hz(top * i as f64 / (N_MELS + 1) as f64))
        .collect();
    let bins = N_FFT / 2 + 1;
    (0..N_MELS)
        .map(|m| {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * SAMPLE_RATE as f64 / N_FFT as f64;
                    ((f - l) / (c - l)).min((r - f) / (r - c)).max(0.0)
                })
                .collect()
        })
        .collect()
}

pub fn hamming(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Regression deltas over `±DELTA_WIDTH` frames with edge replication.
pub fn deltas(c: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = c.len();
    let denom: f64 = 2.0 * (1..=DELTA_WIDTH).map(|k| (k * k) as f64).sum::<f64>();
    (0..n)
        .map(|t| {
            (0..c[t].len())
                .map(|j| {
                    (1..=DELTA_WIDTH)
                        .map(|k| {
                            let fwd = c[(t + k).min(n - 1)][j];
                            let bwd = c[t.saturating_sub(k)][j];
                            k as f64 * (fwd - bwd)
                        })
                        .sum::<f64>()
                        / denom
                })
                .collect()
        })
        .collect()
}

/// Reusable MFCC pipeline: Hamming window, 512-point power spectrum,
/// 40 mel filters, floored log, orthonormal DCT-II to 13 coefficients,
/// then first and second deltas.
pub struct MfccExtractor {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    filters: Vec<Vec<f64>>,
    dct: Vec<Vec<f64>>,
}

impl Default for MfccExtractor {
    fn default() -> Self {
        Self::new()
    }
}

impl MfccExtractor {
    pub fn new() -> Self {
        let dct = (0..N_CEPS)
            .map(|k| {
                let s = if k == 0 {
                    (1.0 / N_MELS as f64).sqrt()
                } else {
                    (2.0 / N_MELS as f64).sqrt()
                };
                (0..N_MELS)
                    .map(|m| s * (PI * k as f64 * (m as f64 + 0.5) / N_MELS as f64).cos())
                    .collect()
            })
            .collect();
        Self {
            fft: FftPlanner::new().plan_fft_forward(N_FFT),
            window: hamming(WINDOW),
            filters: mel_filterbank(),
            dct,
        }
    }

    pub fn frames(samples: usize) -> Result<usize> {
        if samples < WINDOW {
            return Err(Error::InvalidLength(format!(
                "{samples} samples is shorter than one {WINDOW}-sample window"
            )));
        }
        Ok((samples - WINDOW) / HOP + 1)
    }

    /// Static cepstra only, `[frames][N_CEPS]`.
    pub fn cepstra<T: Scalar>(&self, wave: &[T]) -> Result<Vec<Vec<f64>>> {
        let n = Self::frames(wave.len())?;
        let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
        let mut out = Vec::with_capacity(n);
        for t in 0..n {
            let seg = &wave[t * HOP..t * HOP + WINDOW];
            for (i, b) in buf.iter_mut().enumerate() {
                let v = if i < WINDOW {
                    seg[i].to_f64_lossy() * self.window[i]
                } else {
                    0.0
                };
                *b = Complex::new(v, 0.0);
            }
            self.fft.process(&mut buf);
            let power: Vec<f64> = buf[..N_FFT / 2 + 1].iter().map(|c| c.norm_sqr()).collect();
            let logmel: Vec<f64> = self
                .filters
                .iter()
                .map(|f| f.iter().zip(&power).map(|(w, p)| w * p).sum::<f64>().max(LOG_FLOOR).ln())
                .collect();
            out.push(
                self.dct
                    .iter()
                    .map(|row| row.iter().zip(&logmel).map(|(a, b)| a * b).sum())
                    .collect(),
            );
        }
        Ok(out)
    }

    /// `[frames x 39]`: cepstra, deltas, delta-deltas.
    pub fn compute<T: Scalar>(&self, wave: &[T]) -> Result<Tensor<T>> {
        let c = self.cepstra(wave)?;
        let d = deltas(&c);
        let dd = deltas(&d);
        let mut data = Vec::with_capacity(c.len() * MFCC_DIM);
        for t in 0..c.len() {
            for v in c[t].iter().chain(&d[t]).chain(&dd[t]) {
                data.push(T::lit(*v));
            }
        }
        Tensor::new(&[c.len(), MFCC_DIM], data)
    }
}

pub fn compute_mfcc<T: Scalar>(wave: &[T]) -> Result<Tensor<T>> {
    MfccExtractor::new().compute(wave)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::config::FrontendSpec;

    /// Textbook pipeline: direct DFT sums, per-frame loops, DCT-II by formula.
    fn reference_mfcc(wave: &[f64]) -> Vec<Vec<f64>> {
        let n = (wave.len() - 400) / 320 + 1;
        let fb = mel_filterbank();
        (0..n)
            .map(|t| {
                let frame: Vec<f64> = (0..400)
                    .map(|i| wave[t * 320 + i] * (0.54 - 0.46 * (2.0 * PI * i as f64 / 399.0).cos()))
                    .collect();
                let power: Vec<f64> = (0..=256)
                    .map(|k| {
                        let (mut re, mut im) = (0.0, 0.0);
                        for (i, &x) in frame.iter().enumerate() {
                            let ang = -2.0 * PI * (k * i) as f64 / 512.0;
                            re += x * ang.cos();
                            im += x * ang.sin();
                        }
                        re * re + im * im
                    })
                    .collect();
                let logmel: Vec<f64> = fb
                    .iter()
                    .map(|f| f.iter().zip(&power).map(|(a, b)| a * b).sum::<f64>().max(1e-10).ln())
                    .collect();
                (0..13)
                    .map(|k| {
                        let norm = if k == 0 { (1.0f64 / 40.0).sqrt() } else { (2.0f64 / 40.0).sqrt() };
                        norm * (0..40)
                            .map(|m| logmel[m] * (PI * k as f64 * (2 * m + 1) as f64 / 80.0).cos())
                            .sum::<f64>()
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn tone_matches_textbook_pipeline() {
        let wave: Vec<f64> = (0..4000)
            .map(|i| 0.5 * (2.0 * PI * 440.0 * i as f64 / 16000.0).sin())
            .collect();
        let got = compute_mfcc(&wave).unwrap();
        let want = reference_mfcc(&wave);
        assert_eq!(got.rows(), want.len());
        for (t, row) in want.iter().enumerate() {
            for (j, &w) in row.iter().enumerate() {
                assert!((got.at2(t, j) - w).abs() < 1e-6, "frame {t} coeff {j}");
            }
        }
    }

    #[test]
    fn silence_is_flat() {
        let m = compute_mfcc(&vec![0.0f64; 1200]).unwrap();
        let c0 = (N_MELS as f64).sqrt() * LOG_FLOOR.ln();
        for t in 0..m.rows() {
            assert!((m.at2(t, 0) - c0).abs() < 1e-9);
            for j in 1..MFCC_DIM {
                assert!(m.at2(t, j).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn frame_grid_matches_frontend() {
        let f = FrontendSpec::standard(1);
        for n in [400usize, 719, 720, 16_000, 33_333] {
            let m = compute_mfcc(&vec![0.1f32; n]).unwrap();
            assert_eq!(m.rows(), f.frames(n).unwrap());
            assert_eq!(m.last_dim(), 39);
        }
        assert!(matches!(compute_mfcc(&[0.0f64; 399]), Err(Error::InvalidLength(_))));
    }

    #[test]
    fn deltas_of_a_ramp_are_constant() {
        let c: Vec<Vec<f64>> = (0..10).map(|t| vec![2.0 * t as f64]).collect();
        let d = deltas(&c);
        for v in &d[2..8] {
            assert!((v[0] - 2.0).abs() < 1e-12);
        }
    }
}
