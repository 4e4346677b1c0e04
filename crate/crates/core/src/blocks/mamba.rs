//! Mamba mixer: input projection into a value and a gate stream, causal
//! depthwise conv + SiLU + selective scan on the value stream, SiLU gating,
//! output projection.

use crate::blocks::layers::{Linear, Norm};
use crate::blocks::params::{join, Init, ParamSpec, ParamStore};
use crate::error::Result;
use crate::numerics::ops::{conv1d, conv1d_backward, silu, silu_grad, Conv1dSpec, LayerNormCache, Padding};
use crate::numerics::Tensor;
use crate::scalar::Scalar;
use crate::ssm::{selective_scan, selective_scan_backward, SsmParams};

/// Causal depthwise conv followed by SiLU and the selective scan.
#[derive(Clone, Debug)]
pub struct ConvSsm {
    pub prefix: String,
    pub channels: usize,
    pub d_state: usize,
    pub kernel: usize,
}

#[derive(Clone, Debug)]
pub struct ConvSsmCache<T> {
    input_t: Tensor<T>,
    pre: Tensor<T>,
    act: Tensor<T>,
}

impl ConvSsm {
    fn n(&self, s: &str) -> String {
        join(&self.prefix, s)
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let (d, n, k) = (self.channels, self.d_state, self.kernel);
        let sel = 1.0 / (d as f64).sqrt();
        vec![
            ParamSpec::new(self.n("conv.weight"), &[d, 1, k], Init::Uniform(1.0 / (k as f64).sqrt())),
            ParamSpec::new(self.n("conv.bias"), &[d], Init::Zeros),
            ParamSpec::new(self.n("ssm.a_log"), &[d, n], Init::SsmLogDecay),
            ParamSpec::new(self.n("ssm.w_b"), &[d, n], Init::Uniform(sel)),
            ParamSpec::new(self.n("ssm.w_c"), &[d, n], Init::Uniform(sel)),
            ParamSpec::new(self.n("ssm.w_delta"), &[d, 1], Init::Uniform(0.1 * sel)),
            ParamSpec::new(self.n("ssm.delta_bias"), &[1], Init::Const(0.05f64.exp_m1().ln())),
            ParamSpec::new(self.n("ssm.d_skip"), &[d], Init::Ones),
        ]
    }

    pub fn ssm_params<T: Scalar>(&self, p: &ParamStore<T>) -> Result<SsmParams<T>> {
        Ok(SsmParams {
            a_log: p.get(&self.n("ssm.a_log"))?.clone(),
            w_b: p.get(&self.n("ssm.w_b"))?.clone(),
            w_c: p.get(&self.n("ssm.w_c"))?.clone(),
            w_delta: p.get(&self.n("ssm.w_delta"))?.clone(),
            delta_bias: p.scalar(&self.n("ssm.delta_bias"))?,
            d_skip: p.get(&self.n("ssm.d_skip"))?.clone(),
        })
    }

    fn conv_spec(&self) -> Conv1dSpec {
        Conv1dSpec::new(1, Padding::Causal, self.channels)
    }

    pub fn forward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        u: &Tensor<T>,
    ) -> Result<(Tensor<T>, ConvSsmCache<T>)> {
        let input_t = u.transpose()?;
        let conv = conv1d(
            &input_t,
            p.get(&self.n("conv.weight"))?,
            Some(p.get(&self.n("conv.bias"))?),
            &self.conv_spec(),
        )?;
        let pre = conv.transpose()?;
        let act = pre.map(silu);
        let y = selective_scan(&act, &self.ssm_params(p)?)?;
        Ok((y, ConvSsmCache { input_t, pre, act }))
    }

    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        cache: &ConvSsmCache<T>,
        dy: &Tensor<T>,
        g: &mut ParamStore<T>,
    ) -> Result<Tensor<T>> {
        let sg = selective_scan_backward(&cache.act, &self.ssm_params(p)?, dy)?;
        g.accumulate(&self.n("ssm.a_log"), &sg.a_log)?;
        g.accumulate(&self.n("ssm.w_b"), &sg.w_b)?;
        g.accumulate(&self.n("ssm.w_c"), &sg.w_c)?;
        g.accumulate(&self.n("ssm.w_delta"), &sg.w_delta)?;
        g.accumulate_scalar(&self.n("ssm.delta_bias"), sg.delta_bias)?;
        g.accumulate(&self.n("ssm.d_skip"), &sg.d_skip)?;
        let dpre = sg.x.zip_map(&cache.pre, |d, x| d * silu_grad(x))?;
        let (dinput_t, dw, db) = conv1d_backward(
            &cache.input_t,
            p.get(&self.n("conv.weight"))?,
            &dpre.transpose()?,
            &self.conv_spec(),
        )?;
        g.accumulate(&self.n("conv.weight"), &dw)?;
        g.accumulate(&self.n("conv.bias"), &db)?;
        dinput_t.transpose()
    }
}

/// One conv+SSM path, or a forward path plus a time-reversed path whose
/// output is re-reversed and summed.
#[derive(Clone, Debug)]
pub enum Mixer {
    Causal(ConvSsm),
    Bidirectional { fwd: ConvSsm, bwd: ConvSsm },
}

#[derive(Clone, Debug)]
pub enum MixerCache<T> {
    Causal(ConvSsmCache<T>),
    Bidirectional {
        fwd: ConvSsmCache<T>,
        bwd: ConvSsmCache<T>,
    },
}

/// Pre-norm Mamba mixer without the residual connection.
#[derive(Clone, Debug)]
pub struct MambaCore {
    pub norm: Norm,
    pub in_proj: Linear,
    pub mixer: Mixer,
    pub out_proj: Linear,
    pub d_inner: usize,
}

#[derive(Clone, Debug)]
pub struct MambaCoreCache<T> {
    norm: LayerNormCache<T>,
    normed: Tensor<T>,
    gate: Tensor<T>,
    mixed: Tensor<T>,
    gated: Tensor<T>,
    mixer: MixerCache<T>,
}

impl MambaCore {
    /// `bidirectional` duplicates only the conv+SSM path (shared projections).
    pub fn new(
        prefix: &str,
        d_model: usize,
        d_inner: usize,
        d_state: usize,
        kernel: usize,
        bidirectional: bool,
    ) -> Self {
        let path = |name: &str| ConvSsm {
            prefix: join(prefix, name),
            channels: d_inner,
            d_state,
            kernel,
        };
        let mixer = if bidirectional {
            Mixer::Bidirectional {
                fwd: path("fwd"),
                bwd: path("bwd"),
            }
        } else {
            Mixer::Causal(path("mixer"))
        };
        Self {
            norm: Norm::new(join(prefix, "norm"), d_model),
            in_proj: Linear::new(join(prefix, "in_proj"), d_model, 2 * d_inner, false),
            mixer,
            out_proj: Linear::new(join(prefix, "out_proj"), d_inner, d_model, false),
            d_inner,
        }
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut v = self.norm.specs();
        v.extend(self.in_proj.specs());
        match &self.mixer {
            Mixer::Causal(m) => v.extend(m.specs()),
            Mixer::Bidirectional { fwd, bwd } => {
                v.extend(fwd.specs());
                v.extend(bwd.specs());
            }
        }
        v.extend(self.out_proj.specs());
        v
    }

    pub fn forward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        x: &Tensor<T>,
    ) -> Result<(Tensor<T>, MambaCoreCache<T>)> {
        let (normed, norm) = self.norm.forward(p, x)?;
        let proj = self.in_proj.forward(p, &normed)?;
        let value = proj.slice_cols(0, self.d_inner)?;
        let gate = proj.slice_cols(self.d_inner, 2 * self.d_inner)?;
        let (mixed, mixer) = match &self.mixer {
            Mixer::Causal(m) => {
                let (y, c) = m.forward(p, &value)?;
                (y, MixerCache::Causal(c))
            }
            Mixer::Bidirectional { fwd, bwd } => {
                let (yf, cf) = fwd.forward(p, &value)?;
                let (yb, cb) = bwd.forward(p, &value.reverse_rows())?;
                (
                    yf.add(&yb.reverse_rows())?,
                    MixerCache::Bidirectional { fwd: cf, bwd: cb },
                )
            }
        };
        let gated = mixed.zip_map(&gate, |m, z| m * silu(z))?;
        let out = self.out_proj.forward(p, &gated)?;
        Ok((
            out,
            MambaCoreCache {
                norm,
                normed,
                gate,
                mixed,
                gated,
                mixer,
            },
        ))
    }

    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        cache: &MambaCoreCache<T>,
        dout: &Tensor<T>,
        g: &mut ParamStore<T>,
    ) -> Result<Tensor<T>> {
        let dgated = self.out_proj.backward(p, &cache.gated, dout, g)?;
        let dmixed = dgated.zip_map(&cache.gate, |d, z| d * silu(z))?;
        let mut dgate = dgated.zip_map(&cache.mixed, |d, m| d * m)?;
        for (dz, &z) in dgate.data_mut().iter_mut().zip(cache.gate.data()) {
            *dz *= silu_grad(z);
        }
        let dvalue = match (&self.mixer, &cache.mixer) {
            (Mixer::Causal(m), MixerCache::Causal(c)) => m.backward(p, c, &dmixed, g)?,
            (Mixer::Bidirectional { fwd, bwd }, MixerCache::Bidirectional { fwd: cf, bwd: cb }) => {
                let mut dv = fwd.backward(p, cf, &dmixed, g)?;
                let dvb = bwd.backward(p, cb, &dmixed.reverse_rows(), g)?;
                dv.add_assign(&dvb.reverse_rows())?;
                dv
            }
            _ => unreachable!("cache built by the same mixer"),
        };
        let dproj = Tensor::concat_cols(&[&dvalue, &dgate])?;
        let dnormed = self.in_proj.backward(p, &cache.normed, &dproj, g)?;
        self.norm.backward(p, &cache.norm, &dnormed, g)
    }
}
