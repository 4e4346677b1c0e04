//! Linear, layer-norm and MLP layers with explicit backward passes.

use crate::blocks::params::{join, Init, ParamSpec, ParamStore};
use crate::error::Result;
use crate::numerics::ops::{
    add_row_bias, gelu, gelu_grad, layer_norm_backward, layer_norm_forward, matmul, matmul_nt,
    matmul_tn, LayerNormCache,
};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

pub const LN_EPS: f64 = 1e-5;

/// `y = x W (+ b)` with `W: [d_in x d_out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub d_in: usize,
    pub d_out: usize,
    pub bias: bool,
}

impl Linear {
    pub fn new(name: impl Into<String>, d_in: usize, d_out: usize, bias: bool) -> Self {
        Self {
            name: name.into(),
            d_in,
            d_out,
            bias,
        }
    }

    fn w(&self) -> String {
        join(&self.name, "weight")
    }

    fn b(&self) -> String {
        join(&self.name, "bias")
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut v = vec![ParamSpec::new(
            self.w(),
            &[self.d_in, self.d_out],
            Init::Uniform(1.0 / (self.d_in as f64).sqrt()),
        )];
        if self.bias {
            v.push(ParamSpec::new(self.b(), &[self.d_out], Init::Zeros));
        }
        v
    }

    pub fn forward<T: Scalar>(&self, p: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut y = matmul(x, p.get(&self.w())?)?;
        if self.bias {
            add_row_bias(&mut y, p.get(&self.b())?)?;
        }
        Ok(y)
    }

    /// Accumulates weight/bias gradients into `g` and returns `dx`.
    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        g: &mut ParamStore<T>,
    ) -> Result<Tensor<T>> {
        let w = p.get(&self.w())?;
        g.accumulate(&self.w(), &matmul_tn(x, dy)?)?;
        if self.bias {
            g.accumulate(&self.b(), &dy.sum_rows()?)?;
        }
        matmul_nt(dy, w)
    }
}

/// Layer norm over the last axis with learned gain and bias.
#[derive(Clone, Debug)]
pub struct Norm {
    pub name: String,
    pub d: usize,
}

impl Norm {
    pub fn new(name: impl Into<String>, d: usize) -> Self {
        Self {
            name: name.into(),
            d,
        }
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        vec![
            ParamSpec::new(join(&self.name, "gain"), &[self.d], Init::Ones),
            ParamSpec::new(join(&self.name, "bias"), &[self.d], Init::Zeros),
        ]
    }

    pub fn forward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        x: &Tensor<T>,
    ) -> Result<(Tensor<T>, LayerNormCache<T>)> {
        layer_norm_forward(
            x,
            p.get(&join(&self.name, "gain"))?,
            p.get(&join(&self.name, "bias"))?,
            T::lit(LN_EPS),
        )
    }

    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        cache: &LayerNormCache<T>,
        dy: &Tensor<T>,
        g: &mut ParamStore<T>,
    ) -> Result<Tensor<T>> {
        let (dx, dgain, dbias) =
            layer_norm_backward(cache, p.get(&join(&self.name, "gain"))?, dy)?;
        g.accumulate(&join(&self.name, "gain"), &dgain)?;
        g.accumulate(&join(&self.name, "bias"), &dbias)?;
        Ok(dx)
    }
}

/// Pre-norm two-layer GELU MLP with residual: `x + fc2(gelu(fc1(norm(x))))`.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub norm: Norm,
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Clone, Debug)]
pub struct MlpCache<T> {
    norm: LayerNormCache<T>,
    normed: Tensor<T>,
    pre: Tensor<T>,
    act: Tensor<T>,
}

impl Mlp {
    pub fn new(prefix: &str, d: usize, hidden: usize) -> Self {
        Self {
            norm: Norm::new(join(prefix, "norm"), d),
            fc1: Linear::new(join(prefix, "fc1"), d, hidden, true),
            fc2: Linear::new(join(prefix, "fc2"), hidden, d, true),
        }
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut v = self.norm.specs();
        v.extend(self.fc1.specs());
        v.extend(self.fc2.specs());
        v
    }

    pub fn forward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        x: &Tensor<T>,
    ) -> Result<(Tensor<T>, MlpCache<T>)> {
        let (normed, norm) = self.norm.forward(p, x)?;
        let pre = self.fc1.forward(p, &normed)?;
        let act = pre.map(gelu);
        let y = x.add(&self.fc2.forward(p, &act)?)?;
        Ok((
            y,
            MlpCache {
                norm,
                normed,
                pre,
                act,
            },
        ))
    }

    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        cache: &MlpCache<T>,
        dy: &Tensor<T>,
        g: &mut ParamStore<T>,
    ) -> Result<Tensor<T>> {
        let dact = self.fc2.backward(p, &cache.act, dy, g)?;
        let dpre = dact.zip_map(&cache.pre, |d, x| d * gelu_grad(x))?;
        let dnormed = self.fc1.backward(p, &cache.normed, &dpre, g)?;
        let mut dx = self.norm.backward(p, &cache.norm, &dnormed, g)?;
        dx.add_assign(dy)?;
        Ok(dx)
    }
}
