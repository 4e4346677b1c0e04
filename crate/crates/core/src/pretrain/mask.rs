//! Span masking: every frame starts a span independently with probability
//! `start_prob`; spans cover `span_len` frames (truncated at the end) and
//! may overlap.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSpec {
    pub start_prob: f64,
    pub span_len: usize,
    pub seed: u64,
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self {
            start_prob: 0.08,
            span_len: 10,
            seed: 0,
        }
    }
}

impl MaskSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.start_prob) || self.span_len == 0 {
            return Err(Error::Config(format!(
                "mask needs 0 <= start_prob < 1 and span_len >= 1, got {} / {}",
                self.start_prob, self.span_len
            )));
        }
        Ok(())
    }

    /// Probability that frame `j` is masked.
    pub fn frame_prob(&self, j: usize) -> f64 {
        1.0 - (1.0 - self.start_prob).powi((j + 1).min(self.span_len) as i32)
    }

    /// Deterministic mask for the `stream`-th draw under this spec's seed.
    pub fn sample(&self, frames: usize, stream: u64) -> Vec<bool> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        sample_mask(frames, self, &mut rng)
    }
}

pub fn sample_mask(frames: usize, spec: &MaskSpec, rng: &mut impl Rng) -> Vec<bool> {
    let mut mask = vec![false; frames];
    for start in 0..frames {
        if rng.random::<f64>() < spec.start_prob {
            let end = (start + spec.span_len).min(frames);
            mask[start..end].fill(true);
        }
    }
    mask
}

/// Replaces masked rows of `x` by `mask_emb`; returns the masked tensor and
/// the masked frame indices (possibly empty).
pub fn apply_mask<T: Scalar>(
    x: &Tensor<T>,
    mask_emb: &Tensor<T>,
    spec: &MaskSpec,
    rng: &mut impl Rng,
) -> Result<(Tensor<T>, Vec<usize>)> {
    spec.validate()?;
    let (len, d) = x.dims2()?;
    if mask_emb.len() != d {
        return Err(Error::dim(format!("mask embedding width {} != {d}", mask_emb.len())));
    }
    let mask = sample_mask(len, spec, rng);
    let mut out = x.clone();
    let mut idx = Vec::new();
    for (t, &m) in mask.iter().enumerate() {
        if m {
            out.row_mut(t).copy_from_slice(mask_emb.data());
            idx.push(t);
        }
    }
    Ok((out, idx))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coverage_matches_the_stated_process() {
        let spec = MaskSpec::default();
        let frames = 50;
        let trials = 10_000;
        let mut counts = vec![0usize; frames];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..trials {
            for (c, m) in counts.iter_mut().zip(sample_mask(frames, &spec, &mut rng)) {
                *c += m as usize;
            }
        }
        let mut total_mean = 0.0;
        let mut total_var = 0.0;
        for (j, &c) in counts.iter().enumerate() {
            let p = spec.frame_prob(j);
            let sigma = (p * (1.0 - p) / trials as f64).sqrt();
            let got = c as f64 / trials as f64;
            assert!((got - p).abs() < 5.0 * sigma, "frame {j}: {got} vs {p}");
            total_mean += p;
            total_var += p * (1.0 - p);
        }
        // interior frames reach the steady state 1 - (1 - p)^l
        let steady = 1.0 - (1.0 - 0.08f64).powi(10);
        assert!((spec.frame_prob(30) - steady).abs() < 1e-15);
        let fraction = counts.iter().sum::<usize>() as f64 / trials as f64;
        // frames are positively correlated, so only a loose bound on the total
        assert!((fraction - total_mean).abs() < 5.0 * (total_var * 10.0 / trials as f64).sqrt());
    }

    #[test]
    fn zero_probability_and_determinism() {
        let spec = MaskSpec {
            start_prob: 0.0,
            ..MaskSpec::default()
        };
        assert!(spec.sample(100, 3).iter().all(|&m| !m));
        let spec = MaskSpec::default();
        assert_eq!(spec.sample(200, 5), spec.sample(200, 5));
        assert_ne!(spec.sample(200, 5), spec.sample(200, 6));
    }

    #[test]
    fn apply_mask_replaces_rows() {
        let x = Tensor::<f64>::from_f64(&[30, 2], &(0..60).map(|v| v as f64).collect::<Vec<_>>()).unwrap();
        let emb = Tensor::vector(vec![-1.0, -2.0]);
        let spec = MaskSpec {
            start_prob: 0.2,
            span_len: 3,
            seed: 0,
        };
        let (y, idx) = apply_mask(&x, &emb, &spec, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(!idx.is_empty());
        for t in 0..30 {
            if idx.contains(&t) {
                assert_eq!(y.row(t), emb.data());
            } else {
                assert_eq!(y.row(t), x.row(t));
            }
        }
        // the masked set is a union of spans of length 3 (truncated at the end)
        for &t in &idx {
            let run_start = (0..=t).rev().take_while(|s| idx.contains(s)).last().unwrap();
            let run_end = (t..30).take_while(|s| idx.contains(s)).last().unwrap() + 1;
            assert!(run_end - run_start >= 3 || run_end == 30);
        }
    }
}
