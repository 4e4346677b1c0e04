//! Adam, the warmup/decay schedule and dynamic loss scaling.

use serde::{Deserialize, Serialize};

use crate::blocks::params::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    pub total_steps: usize,
    pub warmup_fraction: f64,
    pub peak_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Audio seconds per optimizer step.
    pub batch_seconds: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            total_steps: 400,
            warmup_fraction: 0.08,
            peak_lr: 5e-4,
            beta1: 0.9,
            beta2: 0.98,
            adam_eps: 1e-6,
            batch_seconds: 8.0,
        }
    }
}

impl TrainSchedule {
    pub fn warmup_steps(&self) -> usize {
        (self.warmup_fraction * self.total_steps as f64).ceil() as usize
    }

    /// Learning rate at 0-based `step`: linear warmup to `peak_lr`, then
    /// linear decay reaching 0 at `total_steps`.
    pub fn lr(&self, step: usize) -> f64 {
        let w = self.warmup_steps();
        if step >= self.total_steps {
            0.0
        } else if step < w {
            self.peak_lr * (step + 1) as f64 / w as f64
        } else {
            self.peak_lr * (self.total_steps - step) as f64 / (self.total_steps - w) as f64
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.warmup_fraction)
            || self.peak_lr <= 0.0
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || self.adam_eps <= 0.0
            || self.batch_seconds <= 0.0
        {
            return Err(Error::Config(format!("invalid training schedule {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    m: ParamStore<T>,
    v: ParamStore<T>,
    pub t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamStore<T>, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn from_schedule(params: &ParamStore<T>, s: &TrainSchedule) -> Self {
        Self::new(params, s.beta1, s.beta2, s.adam_eps)
    }

    /// One bias-corrected update. Parameters without a gradient entry are
    /// left untouched.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &ParamStore<T>, lr: f64) -> Result<()> {
        self.t += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::one() - T::lit(self.beta1.powi(self.t as i32));
        let c2 = T::one() - T::lit(self.beta2.powi(self.t as i32));
        let (lr, eps) = (T::lit(lr), T::lit(self.eps));
        for (name, g) in grads.iter() {
            let p = params.get_mut(name)?;
            p.check_same_shape(g)?;
            let m = self.m.get_mut(name)?;
            let v = self.v.get_mut(name)?;
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *pv -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

pub const INITIAL_LOSS_SCALE: f64 = 32768.0;
pub const MIN_LOSS_SCALE: f64 = 1.0 / 1024.0;
pub const DEFAULT_GROWTH_INTERVAL: u64 = 2000;

/// Halve on overflow (skipping the update), double after
/// `growth_interval` consecutive clean steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossScaleState {
    pub scale: f64,
    pub clean_streak: u64,
    pub growth_interval: u64,
}

impl Default for LossScaleState {
    fn default() -> Self {
        Self::new(DEFAULT_GROWTH_INTERVAL)
    }
}

impl LossScaleState {
    pub fn new(growth_interval: u64) -> Self {
        Self {
            scale: INITIAL_LOSS_SCALE,
            clean_streak: 0,
            growth_interval,
        }
    }

    /// Records one step. Returns whether the update should be applied.
    pub fn update(&mut self, overflow: bool) -> Result<bool> {
        if overflow {
            self.scale *= 0.5;
            self.clean_streak = 0;
            if self.scale < MIN_LOSS_SCALE {
                return Err(Error::Divergence(format!(
                    "loss scale fell to {} after repeated gradient overflow",
                    self.scale
                )));
            }
            return Ok(false);
        }
        self.clean_streak += 1;
        if self.clean_streak == self.growth_interval {
            self.scale *= 2.0;
            self.clean_streak = 0;
        }
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use proptest::prelude::*;

    #[test]
    fn schedule_shape() {
        let s = TrainSchedule {
            total_steps: 100,
            ..TrainSchedule::default()
        };
        assert_eq!(s.warmup_steps(), 8);
        assert!((s.lr(7) - 5e-4).abs() < 1e-18);
        assert!((s.lr(0) - 5e-4 / 8.0).abs() < 1e-18);
        assert!(s.lr(8) <= 5e-4 && s.lr(50) < s.lr(8));
        assert!((s.lr(99) - 5e-4 / 92.0).abs() < 1e-15);
        assert_eq!(s.lr(100), 0.0);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::<f64>::vector(vec![3.0, -2.0, 0.5, 4.0]));
        let target = [1.0, 1.0, -1.0, 0.0];
        let loss = |p: &ParamStore<f64>| -> f64 {
            p.get("w").unwrap().data().iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum()
        };
        let l0 = loss(&p);
        let mut adam = Adam::new(&p, 0.9, 0.999, 1e-8);
        for _ in 0..100 {
            let g: Vec<f64> = p.get("w").unwrap().data().iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
            let mut gs = ParamStore::new();
            gs.insert("w", Tensor::vector(g));
            adam.step(&mut p, &gs, 0.1).unwrap();
        }
        assert!(loss(&p) < 0.1 * l0, "{} vs {l0}", loss(&p));
    }

    #[test]
    fn loss_scale_contract() {
        let mut s = LossScaleState::new(3);
        assert!(!s.update(true).unwrap());
        assert_eq!(s.scale, INITIAL_LOSS_SCALE / 2.0);
        for _ in 0..3 {
            assert!(s.update(false).unwrap());
        }
        assert_eq!(s.scale, INITIAL_LOSS_SCALE);
        let mut s = LossScaleState::new(10);
        let mut result = Ok(false);
        for _ in 0..26 {
            result = s.update(true);
            if result.is_err() {
                break;
            }
        }
        assert!(matches!(result, Err(Error::Divergence(_))));
    }

    fn reference(pattern: &[bool], w: u64) -> Option<f64> {
        let (mut scale, mut streak) = (32768.0f64, 0u64);
        for &overflow in pattern {
            if overflow {
                scale /= 2.0;
                streak = 0;
                if scale < 1.0 / 1024.0 {
                    return None;
                }
            } else {
                streak += 1;
                if streak == w {
                    scale *= 2.0;
                    streak = 0;
                }
            }
        }
        Some(scale)
    }

    proptest! {
        #[test]
        fn matches_reference_simulator(
            pattern in prop::collection::vec(prop::bool::weighted(0.3), 0..300),
            w in 1u64..20,
        ) {
            let mut s = LossScaleState::new(w);
            let mut got = Some(0.0);
            for &o in &pattern {
                if s.update(o).is_err() {
                    got = None;
                    break;
                }
            }
            if got.is_some() {
                got = Some(s.scale);
            }
            prop_assert_eq!(got, reference(&pattern, w));
        }
    }
}
