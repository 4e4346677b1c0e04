//! Wall-clock real-time factor of the inference forward pass.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::blocks::config::SAMPLE_RATE;
use crate::blocks::encoder::Encoder;
use crate::blocks::params::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Deterministic noise-plus-tone input of `seconds`.
pub fn synthetic_wave<T: Scalar>(seconds: f64, seed: u64) -> Vec<T> {
    let n = (seconds * SAMPLE_RATE as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.05).expect("valid sigma");
    (0..n)
        .map(|i| {
            let t = i as f64 / SAMPLE_RATE as f64;
            T::lit(0.3 * (2.0 * std::f64::consts::PI * 220.0 * t).sin() + noise.sample(&mut rng))
        })
        .collect()
}

/// Mean and sample standard deviation of forward time over audio
/// duration across `runs` timed runs, after one untimed warmup run.
pub fn measure_rtf<T: Scalar>(
    encoder: &Encoder,
    params: &ParamStore<T>,
    seconds: f64,
    runs: usize,
) -> Result<(f64, f64)> {
    if runs == 0 {
        return Err(Error::Config("measure_rtf needs at least one run".into()));
    }
    let wave = synthetic_wave::<T>(seconds, 0);
    encoder.forward(params, &wave)?;
    let mut rtf = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        let out = encoder.forward(params, &wave)?;
        rtf.push(start.elapsed().as_secs_f64() / seconds);
        drop(out);
    }
    let mean = rtf.iter().sum::<f64>() / runs as f64;
    let std = if runs > 1 {
        (rtf.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (runs - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok((mean, std))
}
