//! Masked-prediction objective: cosine similarity between projected frames
//! and learned code embeddings, scaled by `1/τ`, cross-entropy on masked
//! frames only.

use crate::blocks::layers::Linear;
use crate::blocks::params::{Init, ParamSpec, ParamStore};
use crate::error::{Error, Result};
use crate::numerics::ops::{matmul, matmul_nt, matmul_tn};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

pub const CODES: &str = "head.codes";
pub const DEFAULT_TAU: f64 = 0.1;
/// Smoothing inside vector norms: `‖v‖ ≈ sqrt(‖v‖² + ε²)`.
const NORM_EPS: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct PredictionHead {
    pub proj: Linear,
    pub n_codes: usize,
    pub dim: usize,
    pub tau: f64,
}

#[derive(Clone, Debug)]
pub struct LossOutput<T> {
    /// Mean cross-entropy over masked frames.
    pub loss: T,
    /// Masked frames whose arg-max code equals the target.
    pub correct: usize,
    pub masked: usize,
    /// Gradient with respect to the layer output, when requested.
    pub dx: Option<Tensor<T>>,
}

impl LossOutput<f64> {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.masked as f64
    }
}

/// Rows scaled to unit (smoothed) norm, with the norms.
fn normalize<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<T>) {
    let d = x.last_dim();
    let eps2 = T::lit(NORM_EPS * NORM_EPS);
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = &mut out.data_mut()[r * d..(r + 1) * d];
        let n = (row.iter().map(|&v| v * v).sum::<T>() + eps2).sqrt();
        for v in row.iter_mut() {
            *v /= n;
        }
        norms.push(n);
    }
    (out, norms)
}

/// Back-propagates through [`normalize`]: `dx = (g - x̂ (x̂·g)) / n`.
fn normalize_backward<T: Scalar>(xhat: &Tensor<T>, norms: &[T], g: &Tensor<T>) -> Tensor<T> {
    let d = xhat.last_dim();
    let mut out = g.clone();
    for (r, &n) in norms.iter().enumerate() {
        let xh = xhat.row(r);
        let gr = g.row(r);
        let dot: T = xh.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for (j, o) in out.data_mut()[r * d..(r + 1) * d].iter_mut().enumerate() {
            *o = (gr[j] - xh[j] * dot) / n;
        }
    }
    out
}

impl PredictionHead {
    pub fn new(d_model: usize, dim: usize, n_codes: usize) -> Self {
        Self {
            proj: Linear::new("head.proj", d_model, dim, true),
            n_codes,
            dim,
            tau: DEFAULT_TAU,
        }
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut v = self.proj.specs();
        v.push(ParamSpec::new(CODES, &[self.n_codes, self.dim], Init::Uniform(1.0)));
        v
    }

    /// Code logits `[rows x n_codes]` for every row of `x`.
    pub fn logits<T: Scalar>(&self, p: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (uhat, _) = normalize(&self.proj.forward(p, x)?);
        let (ehat, _) = normalize(p.get(CODES)?);
        Ok(matmul_nt(&uhat, &ehat)?.scale(T::lit(1.0 / self.tau)))
    }

    /// Loss over the frames in `masked`; with `grads` set, parameter
    /// gradients are accumulated there and `dx` is returned.
    pub fn loss<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        x: &Tensor<T>,
        labels: &[usize],
        masked: &[usize],
        grads: Option<&mut ParamStore<T>>,
    ) -> Result<LossOutput<T>> {
        let (len, d) = x.dims2()?;
        if labels.len() != len {
            return Err(Error::dim(format!("{} labels for {len} frames", labels.len())));
        }
        if masked.is_empty() {
            return Err(Error::EmptyMask);
        }
        let m = masked.len();
        let mut rows = Vec::with_capacity(m * d);
        for &t in masked {
            if t >= len {
                return Err(Error::dim(format!("masked index {t} >= {len} frames")));
            }
            let y = labels[t];
            if y >= self.n_codes {
                return Err(Error::LabelOutOfRange {
                    label: y,
                    n_classes: self.n_codes,
                });
            }
            rows.extend_from_slice(x.row(t));
        }
        let xm = Tensor::new(&[m, d], rows)?;
        let u = self.proj.forward(p, &xm)?;
        let (uhat, un) = normalize(&u);
        let codes = p.get(CODES)?;
        let (ehat, en) = normalize(codes);
        let inv_tau = T::lit(1.0 / self.tau);
        let logits = matmul_nt(&uhat, &ehat)?.scale(inv_tau);
        let k = self.n_codes;
        let mut loss = T::zero();
        let mut correct = 0;
        let mut dlogits = Tensor::zeros(&[m, k]);
        let inv_m = T::one() / T::lit(m as f64);
        for i in 0..m {
            let row = logits.row(i);
            let y = labels[masked[i]];
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = row.iter().map(|&v| (v - mx).exp()).sum();
            let lse = mx + z.ln();
            loss += lse - row[y];
            let arg = row
                .iter()
                .enumerate()
                .fold(0, |b, (j, &v)| if v > row[b] { j } else { b });
            correct += (arg == y) as usize;
            let dr = dlogits.row_mut(i);
            for (j, dv) in dr.iter_mut().enumerate() {
                *dv = (row[j] - lse).exp() * inv_m;
            }
            dr[y] -= inv_m;
        }
        let loss = loss * inv_m;
        let dx = match grads {
            None => None,
            Some(g) => {
                let dcos = dlogits.scale(inv_tau);
                let duhat = matmul(&dcos, &ehat)?;
                let dehat = matmul_tn(&dcos, &uhat)?;
                g.accumulate(CODES, &normalize_backward(&ehat, &en, &dehat))?;
                let du = normalize_backward(&uhat, &un, &duhat);
                let dxm = self.proj.backward(p, &xm, &du, g)?;
                let mut dx = Tensor::zeros(&[len, d]);
                for (i, &t) in masked.iter().enumerate() {
                    for (o, &v) in dx.row_mut(t).iter_mut().zip(dxm.row(i)) {
                        *o += v;
                    }
                }
                Some(dx)
            }
        };
        Ok(LossOutput {
            loss,
            correct,
            masked: m,
            dx,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, max_rel_err};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(k: usize) -> (PredictionHead, ParamStore<f64>, Tensor<f64>, Vec<usize>) {
        let head = PredictionHead::new(4, 3, k);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = ParamStore::from_specs(&head.specs(), &mut rng);
        p.insert("head.proj.bias", ParamSpec::new("b", &[3], Init::Uniform(0.5)).materialize(&mut rng));
        let x = ParamSpec::new("x", &[6, 4], Init::Uniform(1.0)).materialize(&mut rng);
        let labels = vec![0, 2, 1, 3 % k, 1, 0];
        (head, p, x, labels)
    }

    #[test]
    fn zero_projection_gives_uniform_loss() {
        let (head, mut p, x, _) = setup(2);
        for name in ["head.proj.weight", "head.proj.bias"] {
            let t = p.get_mut(name).unwrap();
            *t = Tensor::zeros(t.shape());
        }
        let out = head.loss(&p, &x, &[0, 1, 1, 0, 1, 0], &[1, 3, 4], None).unwrap();
        assert!((out.loss - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn matches_direct_softmax_cross_entropy() {
        let (head, p, x, labels) = setup(4);
        let masked = [0, 2, 3, 5];
        let got = head.loss(&p, &x, &labels, &masked, None).unwrap().loss;
        // oracle: explicit cosine and softmax per frame
        let w = p.get("head.proj.weight").unwrap();
        let b = p.get("head.proj.bias").unwrap();
        let codes = p.get(CODES).unwrap();
        let mut want = 0.0;
        for &t in &masked {
            let u: Vec<f64> = (0..3)
                .map(|j| (0..4).map(|i| x.at2(t, i) * w.at2(i, j)).sum::<f64>() + b.data()[j])
                .collect();
            let nu = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            let logits: Vec<f64> = (0..4)
                .map(|c| {
                    let e = codes.row(c);
                    let ne = e.iter().map(|v| v * v).sum::<f64>().sqrt();
                    u.iter().zip(e).map(|(a, b)| a * b).sum::<f64>() / (nu * ne) / 0.1
                })
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            want -= (logits[labels[t]].exp() / z).ln();
        }
        want /= masked.len() as f64;
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (head, p, x, labels) = setup(4);
        let masked = [1, 2, 5];
        let mut g = ParamStore::new();
        let out = head.loss(&p, &x, &labels, &masked, Some(&mut g)).unwrap();
        let fd = finite_diff_grad(
            |xp: &Tensor<f64>| Ok(head.loss(&p, xp, &labels, &masked, None)?.loss),
            &x,
            1e-6,
        )
        .unwrap();
        let dx = out.dx.unwrap();
        assert!(max_rel_err(&dx, &fd, fd.max_abs() * 1e-3) < 1e-4);
        for name in ["head.proj.weight", "head.proj.bias", CODES] {
            let fd = finite_diff_grad(
                |v: &Tensor<f64>| {
                    let mut q = p.clone();
                    *q.get_mut(name)? = v.clone();
                    Ok(head.loss(&q, &x, &labels, &masked, None)?.loss)
                },
                p.get(name).unwrap(),
                1e-6,
            )
            .unwrap();
            let e = max_rel_err(g.get(name).unwrap(), &fd, fd.max_abs() * 1e-3);
            assert!(e < 1e-4, "{name}: {e}");
        }
    }

    #[test]
    fn empty_mask_is_an_error_and_sharp_logits_vanish() {
        let (mut head, p, x, labels) = setup(4);
        assert!(matches!(head.loss(&p, &x, &labels, &[], None), Err(Error::EmptyMask)));
        // targets set to each frame's arg-max code; loss falls toward 0 as τ → 0
        let logits = head.logits(&p, &x).unwrap();
        let argmax: Vec<usize> = (0..6)
            .map(|t| {
                let r = logits.row(t);
                (0..4).fold(0, |b, j| if r[j] > r[b] { j } else { b })
            })
            .collect();
        head.tau = 1e-4;
        let out = head.loss(&p, &x, &argmax, &[0, 1, 2, 3, 4, 5], None).unwrap();
        assert!(out.loss < 1e-6, "{}", out.loss);
        assert_eq!(out.correct, 6);
    }
}
