//! Convolutional CTC head: a stack of residual stride-1 convolutions over
//! the encoder output followed by a projection to the vocabulary plus blank.

use crate::blocks::layers::Linear;
use crate::blocks::params::{Init, ParamSpec, ParamStore};
use crate::error::Result;
use crate::numerics::ops::{conv1d, conv1d_backward, gelu, gelu_grad, Conv1dSpec, Padding};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

pub const HEAD_LAYERS: usize = 12;
pub const HEAD_KERNEL: usize = 3;

#[derive(Clone, Debug)]
pub struct AsrHead {
    pub width: usize,
    pub n_layers: usize,
    /// Output classes including blank.
    pub n_classes: usize,
    pub causal: bool,
    out: Linear,
}

#[derive(Clone, Debug)]
pub struct AsrHeadCache<T> {
    /// Input of each conv layer, `[width x L]`.
    inputs: Vec<Tensor<T>>,
    pre: Vec<Tensor<T>>,
    last: Tensor<T>,
}

fn conv_w(i: usize) -> String {
    format!("asr.conv{i}.weight")
}

fn conv_b(i: usize) -> String {
    format!("asr.conv{i}.bias")
}

impl AsrHead {
    pub fn new(width: usize, n_classes: usize, causal: bool) -> Self {
        Self::with_layers(width, HEAD_LAYERS, n_classes, causal)
    }

    pub fn with_layers(width: usize, n_layers: usize, n_classes: usize, causal: bool) -> Self {
        Self {
            width,
            n_layers,
            n_classes,
            causal,
            out: Linear::new("asr.out", width, n_classes, true),
        }
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let bound = 0.5 / ((self.width * HEAD_KERNEL) as f64).sqrt();
        let mut v = Vec::new();
        for i in 0..self.n_layers {
            v.push(ParamSpec::new(conv_w(i), &[self.width, self.width, HEAD_KERNEL], Init::Uniform(bound)));
            v.push(ParamSpec::new(conv_b(i), &[self.width], Init::Zeros));
        }
        v.extend(self.out.specs());
        v
    }

    fn spec(&self) -> Conv1dSpec {
        let padding = if self.causal { Padding::Causal } else { Padding::Same };
        Conv1dSpec::new(1, padding, 1)
    }

    /// Logits `[L x n_classes]` for encoder output `x: [L x width]`.
    pub fn forward<T: Scalar>(&self, p: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_train(p, x)?.0)
    }

    pub fn forward_train<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        x: &Tensor<T>,
    ) -> Result<(Tensor<T>, AsrHeadCache<T>)> {
        let spec = self.spec();
        let mut h = x.transpose()?;
        let mut inputs = Vec::with_capacity(self.n_layers);
        let mut pres = Vec::with_capacity(self.n_layers);
        for i in 0..self.n_layers {
            let pre = conv1d(&h, p.get(&conv_w(i))?, Some(p.get(&conv_b(i))?), &spec)?;
            let next = h.add(&pre.map(gelu))?;
            inputs.push(h);
            pres.push(pre);
            h = next;
        }
        let last = h.transpose()?;
        let logits = self.out.forward(p, &last)?;
        Ok((
            logits,
            AsrHeadCache {
                inputs,
                pre: pres,
                last,
            },
        ))
    }

    /// Accumulates parameter gradients and returns the gradient of the
    /// encoder output.
    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        cache: &AsrHeadCache<T>,
        dlogits: &Tensor<T>,
        g: &mut ParamStore<T>,
    ) -> Result<Tensor<T>> {
        let spec = self.spec();
        let mut dh = self.out.backward(p, &cache.last, dlogits, g)?.transpose()?;
        for i in (0..self.n_layers).rev() {
            let dpre = cache.pre[i].zip_map(&dh, |x, d| d * gelu_grad(x))?;
            let (dx, dw, db) = conv1d_backward(&cache.inputs[i], p.get(&conv_w(i))?, &dpre, &spec)?;
            g.accumulate(&conv_w(i), &dw)?;
            g.accumulate(&conv_b(i), &db)?;
            dh.add_assign(&dx)?;
        }
        dh.transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, max_rel_err};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(causal: bool) -> (AsrHead, ParamStore<f64>, Tensor<f64>) {
        let head = AsrHead::with_layers(3, 2, 4, causal);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = ParamStore::from_specs(&head.specs(), &mut rng);
        for (_, t) in p.iter_mut() {
            *t = t.map(|v| v * 3.0 + 0.05);
        }
        let x = Tensor::new(&[5, 3], (0..15).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap();
        (head, p, x)
    }

    #[test]
    fn length_preserved_and_causal() {
        for causal in [false, true] {
            let (head, p, x) = setup(causal);
            let y = head.forward(&p, &x).unwrap();
            assert_eq!(y.shape(), [5, 4]);
            let mut x2 = x.clone();
            x2.row_mut(4)[0] += 1.0;
            let y2 = head.forward(&p, &x2).unwrap();
            let same = (0..4).all(|t| y.row(t) == y2.row(t));
            assert_eq!(same, causal);
        }
        let head = AsrHead::new(8, 6, false);
        assert_eq!(head.specs().len(), 2 * HEAD_LAYERS + 2);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for causal in [false, true] {
            let (head, p, x) = setup(causal);
            let up = Tensor::new(&[5, 4], (0..20).map(|i| (i as f64 * 0.37).cos()).collect()).unwrap();
            let mut g = ParamStore::new();
            let (_, cache) = head.forward_train(&p, &x).unwrap();
            let dx = head.backward(&p, &cache, &up, &mut g).unwrap();
            let fd = finite_diff_grad(|x| head.forward(&p, x)?.dot(&up), &x, 1e-6).unwrap();
            assert!(max_rel_err(&dx, &fd, 1e-6) < 1e-5);
            for name in ["asr.conv0.weight", "asr.conv1.bias", "asr.out.weight"] {
                let fd = finite_diff_grad(
                    |w| {
                        let mut q = p.clone();
                        *q.get_mut(name).unwrap() = w.clone();
                        head.forward(&q, &x)?.dot(&up)
                    },
                    p.get(name).unwrap(),
                    1e-6,
                )
                .unwrap();
                assert!(max_rel_err(g.get(name).unwrap(), &fd, 1e-6) < 1e-5, "{name}");
            }
        }
    }
}
