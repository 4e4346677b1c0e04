//! Masked-prediction training loop with dynamic loss scaling.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::encoder::Encoder;
use crate::blocks::params::ParamStore;
use crate::error::{Error, Result};
use crate::pretrain::loss::PredictionHead;
use crate::pretrain::mask::MaskSpec;
use crate::pretrain::optim::{Adam, LossScaleState, TrainSchedule};
use crate::scalar::Scalar;

/// One utterance with frame-level targets.
#[derive(Clone, Debug)]
pub struct TrainItem<T> {
    pub wave: Vec<T>,
    pub labels: Vec<usize>,
}

impl<T> TrainItem<T> {
    pub fn seconds(&self) -> f64 {
        self.wave.len() as f64 / crate::blocks::config::SAMPLE_RATE as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub scale: f64,
    pub lr: f64,
    /// The update was skipped because of a non-finite gradient.
    pub skipped: bool,
}

/// Mask for item `item` at `step`; never empty, so every utterance
/// contributes to the loss.
pub fn training_mask(spec: &MaskSpec, frames: usize, step: usize, item: usize) -> Vec<bool> {
    let stream = ((step as u64) << 20) | item as u64;
    let mut m = spec.sample(frames, stream);
    if !m.iter().any(|&b| b) {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
        rng.set_stream(stream);
        let start = rng.random_range(0..frames);
        let end = (start + spec.span_len).min(frames);
        m[start..end].fill(true);
    }
    m
}

fn masked_indices(m: &[bool]) -> Vec<usize> {
    m.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
}

pub struct Pretrainer<T> {
    pub encoder: Encoder,
    pub head: PredictionHead,
    /// Encoder and head parameters in one store.
    pub params: ParamStore<T>,
    pub adam: Adam<T>,
    pub scale: LossScaleState,
    pub schedule: TrainSchedule,
    pub mask: MaskSpec,
    pub step: usize,
}

impl<T: Scalar> Pretrainer<T> {
    pub fn new(
        encoder: Encoder,
        head: PredictionHead,
        params: ParamStore<T>,
        schedule: TrainSchedule,
        mask: MaskSpec,
        growth_interval: u64,
    ) -> Result<Self> {
        schedule.validate()?;
        mask.validate()?;
        encoder.check_params(&params)?;
        let adam = Adam::from_schedule(&params, &schedule);
        Ok(Self {
            encoder,
            head,
            params,
            adam,
            scale: LossScaleState::new(growth_interval),
            schedule,
            mask,
            step: 0,
        })
    }

    /// One optimizer step over `batch`. With `inject_overflow` the scaled
    /// gradients are poisoned to exercise the overflow path.
    pub fn train_step(&mut self, batch: &[&TrainItem<T>], inject_overflow: bool) -> Result<StepMetrics> {
        if batch.is_empty() {
            return Err(Error::Config("empty training batch".into()));
        }
        let top = self.encoder.blocks.len();
        let scale = T::lit(self.scale.scale);
        let mut grads = ParamStore::new();
        let (mut loss, mut correct, mut masked) = (0.0, 0, 0);
        for (i, item) in batch.iter().enumerate() {
            let frames = self.encoder.cfg.frames(item.wave.len())?;
            let mask = training_mask(&self.mask, frames, self.step, i);
            let idx = masked_indices(&mask);
            let (states, cache) = self.encoder.forward_train(&self.params, &item.wave, Some(&mask))?;
            let out = self
                .head
                .loss(&self.params, states.last(), &item.labels, &idx, Some(&mut grads))?;
            loss += out.loss.to_f64_lossy();
            correct += out.correct;
            masked += out.masked;
            let dx = out.dx.expect("gradient requested");
            self.encoder.backward(&self.params, &cache, top, &dx, &mut grads)?;
        }
        let n = batch.len() as f64;
        // gradients of the scaled mean loss
        grads.scale_all(scale / T::lit(n));
        if inject_overflow {
            if let Some((_, t)) = grads.iter_mut().next() {
                t.data_mut()[0] = T::infinity();
            }
        }
        let lr = self.schedule.lr(self.step);
        let overflow = !grads.all_finite();
        let apply = self.scale.update(overflow)?;
        if apply {
            grads.scale_all(T::one() / scale);
            self.adam.step(&mut self.params, &grads, lr)?;
        }
        let m = StepMetrics {
            step: self.step,
            loss: loss / n,
            accuracy: correct as f64 / masked as f64,
            scale: self.scale.scale,
            lr,
            skipped: !apply,
        };
        self.step += 1;
        Ok(m)
    }

    /// Masked-frame prediction accuracy with deterministic evaluation masks.
    pub fn evaluate(&self, items: &[TrainItem<T>], seed: u64) -> Result<f64> {
        let spec = MaskSpec { seed, ..self.mask };
        let (mut correct, mut total) = (0, 0);
        for (i, item) in items.iter().enumerate() {
            let frames = self.encoder.cfg.frames(item.wave.len())?;
            let mask = training_mask(&spec, frames, usize::MAX >> 44, i);
            let states = self
                .encoder
                .forward_train(&self.params, &item.wave, Some(&mask))?
                .0;
            let out = self
                .head
                .loss(&self.params, states.last(), &item.labels, &masked_indices(&mask), None)?;
            correct += out.correct;
            total += out.masked;
        }
        Ok(correct as f64 / total.max(1) as f64)
    }
}

/// Yields batches of item indices, each covering at least `seconds` of
/// audio (or one item), reshuffling every epoch.
pub struct Batcher {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
    durations: Vec<f64>,
    seconds: f64,
}

impl Batcher {
    pub fn new(durations: Vec<f64>, seconds: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..durations.len()).collect();
        order.shuffle(&mut rng);
        Self {
            order,
            pos: 0,
            rng,
            durations,
            seconds,
        }
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut acc = 0.0;
        while out.is_empty() || acc < self.seconds {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            let i = self.order[self.pos];
            self.pos += 1;
            if out.contains(&i) {
                break;
            }
            acc += self.durations[i];
            out.push(i);
        }
        out
    }
}

/// Exponential moving average with span `window` (`α = 2/(window+1)`).
pub fn ema(values: &[f64], window: usize) -> Vec<f64> {
    let a = 2.0 / (window as f64 + 1.0);
    let mut out = Vec::with_capacity(values.len());
    let mut cur = None;
    for &v in values {
        let next = match cur {
            None => v,
            Some(c) => a * v + (1.0 - a) * c,
        };
        cur = Some(next);
        out.push(next);
    }
    out
}
