//! Pre-norm multi-head self-attention.
//!
//! The causal variant computes the full score map but leaves masked
//! positions out of the softmax entirely (they never enter the max or the
//! normalizer), so outputs at frame `t` are bitwise independent of frames
//! after `t`.

use crate::blocks::layers::{Linear, Norm};
use crate::blocks::params::{join, ParamSpec, ParamStore};
use crate::error::Result;
use crate::numerics::counter;
use crate::numerics::ops::LayerNormCache;
use crate::numerics::Tensor;
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct SelfAttention {
    pub norm: Norm,
    pub qkv: Linear,
    pub out: Linear,
    pub d_model: usize,
    pub n_heads: usize,
    pub causal: bool,
}

#[derive(Clone, Debug)]
pub struct AttentionCache<T> {
    norm: LayerNormCache<T>,
    normed: Tensor<T>,
    qkv: Tensor<T>,
    /// One `[L x L]` probability map per head; masked entries are zero.
    probs: Vec<Vec<T>>,
    context: Tensor<T>,
}

impl SelfAttention {
    pub fn new(prefix: &str, d_model: usize, n_heads: usize, causal: bool) -> Self {
        Self {
            norm: Norm::new(join(prefix, "norm"), d_model),
            qkv: Linear::new(join(prefix, "qkv"), d_model, 3 * d_model, true),
            out: Linear::new(join(prefix, "out"), d_model, d_model, true),
            d_model,
            n_heads,
            causal,
        }
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut v = self.norm.specs();
        v.extend(self.qkv.specs());
        v.extend(self.out.specs());
        v
    }

    fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Number of keys visible from query `t`.
    fn visible(&self, t: usize, len: usize) -> usize {
        if self.causal {
            t + 1
        } else {
            len
        }
    }

    /// Returns `x + out(attend(norm(x)))`.
    pub fn forward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        x: &Tensor<T>,
    ) -> Result<(Tensor<T>, AttentionCache<T>)> {
        let (len, d) = x.dims2()?;
        let dh = self.head_dim();
        let scale = T::one() / T::lit(dh as f64).sqrt();
        let (normed, norm) = self.norm.forward(p, x)?;
        let qkv = self.qkv.forward(p, &normed)?;
        let qd = qkv.data();
        let w = 3 * d;
        let mut context = vec![T::zero(); len * d];
        let mut probs = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let (qo, ko, vo) = (h * dh, d + h * dh, 2 * d + h * dh);
            let mut pm = vec![T::zero(); len * len];
            for t in 0..len {
                let q = &qd[t * w + qo..t * w + qo + dh];
                let row = &mut pm[t * len..(t + 1) * len];
                for (s, r) in row.iter_mut().enumerate() {
                    let k = &qd[s * w + ko..s * w + ko + dh];
                    let mut acc = T::zero();
                    for (&a, &b) in q.iter().zip(k) {
                        acc += a * b;
                    }
                    *r = acc * scale;
                }
                let vis = self.visible(t, len);
                let m = row[..vis].iter().fold(T::neg_infinity(), |m, &v| m.max(v));
                let mut z = T::zero();
                for r in row[..vis].iter_mut() {
                    *r = (*r - m).exp();
                    z += *r;
                }
                for r in row[..vis].iter_mut() {
                    *r /= z;
                }
                row[vis..].fill(T::zero());
                let ctx = &mut context[t * d + qo..t * d + qo + dh];
                for (s, &pv) in row[..vis].iter().enumerate() {
                    let v = &qd[s * w + vo..s * w + vo + dh];
                    for (c, &vv) in ctx.iter_mut().zip(v) {
                        *c += pv * vv;
                    }
                }
            }
            probs.push(pm);
        }
        // score map and probability-value product, both counted as dense L x L
        counter::add(2 * (len * len * d) as u64);
        let context = Tensor::new(&[len, d], context)?;
        let mut y = self.out.forward(p, &context)?;
        y.add_assign(x)?;
        Ok((
            y,
            AttentionCache {
                norm,
                normed,
                qkv,
                probs,
                context,
            },
        ))
    }

    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        cache: &AttentionCache<T>,
        dy: &Tensor<T>,
        g: &mut ParamStore<T>,
    ) -> Result<Tensor<T>> {
        let (len, d) = dy.dims2()?;
        let dh = self.head_dim();
        let scale = T::one() / T::lit(dh as f64).sqrt();
        let dctx = self.out.backward(p, &cache.context, dy, g)?;
        let (qd, cd) = (cache.qkv.data(), dctx.data());
        let w = 3 * d;
        let mut dqkv = vec![T::zero(); len * w];
        let mut dp = vec![T::zero(); len];
        for (h, pm) in cache.probs.iter().enumerate() {
            let (qo, ko, vo) = (h * dh, d + h * dh, 2 * d + h * dh);
            for t in 0..len {
                let vis = self.visible(t, len);
                let prow = &pm[t * len..t * len + vis];
                let gc = &cd[t * d + qo..t * d + qo + dh];
                let mut dot = T::zero();
                for s in 0..vis {
                    let v = &qd[s * w + vo..s * w + vo + dh];
                    let mut acc = T::zero();
                    for (&a, &b) in gc.iter().zip(v) {
                        acc += a * b;
                    }
                    dp[s] = acc;
                    dot += acc * prow[s];
                    let dv = &mut dqkv[s * w + vo..s * w + vo + dh];
                    for (o, &c) in dv.iter_mut().zip(gc) {
                        *o += prow[s] * c;
                    }
                }
                for s in 0..vis {
                    let ds = prow[s] * (dp[s] - dot) * scale;
                    if ds == T::zero() {
                        continue;
                    }
                    for j in 0..dh {
                        let kq = qd[s * w + ko + j];
                        let qq = qd[t * w + qo + j];
                        dqkv[t * w + qo + j] += ds * kq;
                        dqkv[s * w + ko + j] += ds * qq;
                    }
                }
            }
        }
        let dqkv = Tensor::new(&[len, w], dqkv)?;
        let dnormed = self.qkv.backward(p, &cache.normed, &dqkv, g)?;
        let mut dx = self.norm.backward(p, &cache.norm, &dnormed, g)?;
        dx.add_assign(dy)?;
        Ok(dx)
    }
}
