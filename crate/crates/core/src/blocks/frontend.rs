//! Waveform encoder: strided conv stack, feature projection, optional
//! masking and the convolutional positional embedding.

use crate::blocks::config::{EncoderConfig, FrontendSpec};
use crate::blocks::layers::{Linear, Norm};
use crate::blocks::params::{Init, ParamSpec, ParamStore};
use crate::error::{Error, Result};
use crate::numerics::ops::{
    conv1d, conv1d_backward, gelu, gelu_grad, Conv1dSpec, LayerNormCache, Padding,
};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

pub const MASK_EMB: &str = "mask_emb";
/// Frames per conv-stack chunk in inference, bounding the memory of the
/// sample-rate activations.
pub const CHUNK_FRAMES: usize = 512;

#[derive(Clone, Debug)]
pub struct Frontend {
    convs: Vec<(usize, usize, usize, usize)>, // (c_in, c_out, kernel, stride)
    spec: FrontendSpec,
    norm: Norm,
    proj: Linear,
    d_model: usize,
    pos_kernel: usize,
    pos_groups: usize,
    pos_padding: Padding,
}

#[derive(Clone, Debug)]
pub struct FrontendCache<T> {
    conv_in: Vec<Tensor<T>>,
    conv_pre: Vec<Tensor<T>>,
    norm: LayerNormCache<T>,
    normed: Tensor<T>,
    mask: Vec<bool>,
    pos_in: Tensor<T>,
    pos_pre: Tensor<T>,
}

fn conv_name(i: usize) -> String {
    format!("frontend.conv{i}.weight")
}

impl Frontend {
    pub fn new(cfg: &EncoderConfig) -> Self {
        let mut c_in = 1;
        let convs = cfg
            .frontend
            .layers
            .iter()
            .map(|l| {
                let c = (c_in, l.channels, l.kernel, l.stride);
                c_in = l.channels;
                c
            })
            .collect();
        let c = cfg.frontend.out_channels();
        Self {
            convs,
            spec: cfg.frontend.clone(),
            norm: Norm::new("frontend.norm", c),
            proj: Linear::new("frontend.proj", c, cfg.d_model, true),
            d_model: cfg.d_model,
            pos_kernel: cfg.pos_conv.kernel,
            pos_groups: cfg.pos_conv.groups,
            pos_padding: if cfg.block_kind.is_causal() {
                Padding::Causal
            } else {
                Padding::Same
            },
        }
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut v: Vec<ParamSpec> = self
            .convs
            .iter()
            .enumerate()
            .map(|(i, &(ci, co, k, _))| {
                let bound = (6.0 / (ci * k) as f64).sqrt();
                ParamSpec::new(conv_name(i), &[co, ci, k], Init::Uniform(bound))
            })
            .collect();
        v.extend(self.norm.specs());
        v.extend(self.proj.specs());
        let d = self.d_model;
        let fan_in = d / self.pos_groups * self.pos_kernel;
        v.push(ParamSpec::new(MASK_EMB, &[d], Init::Uniform(1.0)));
        v.push(ParamSpec::new(
            "pos_conv.weight",
            &[d, d / self.pos_groups, self.pos_kernel],
            Init::Uniform(1.0 / (fan_in as f64).sqrt()),
        ));
        v.push(ParamSpec::new("pos_conv.bias", &[d], Init::Zeros));
        v
    }

    fn pos_spec(&self) -> Conv1dSpec {
        Conv1dSpec::new(1, self.pos_padding, self.pos_groups)
    }

    /// Maps `samples` to `[frames x d_model]`. Rows where `mask` is true are
    /// replaced by the learned mask embedding before the positional conv.
    pub fn forward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        wave: &[T],
        mask: Option<&[bool]>,
    ) -> Result<Tensor<T>> {
        Ok(self.run(p, wave, mask, false)?.0)
    }

    pub fn forward_train<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        wave: &[T],
        mask: Option<&[bool]>,
    ) -> Result<(Tensor<T>, FrontendCache<T>)> {
        let (y, c) = self.run(p, wave, mask, true)?;
        Ok((y, c.expect("cache requested")))
    }

    fn run<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        wave: &[T],
        mask: Option<&[bool]>,
        keep: bool,
    ) -> Result<(Tensor<T>, Option<FrontendCache<T>>)> {
        if wave.is_empty() {
            return Err(Error::InvalidLength("empty waveform".into()));
        }
        let mut conv_in = Vec::new();
        let mut conv_pre = Vec::new();
        let feats = if keep {
            let mut x = Tensor::new(&[1, wave.len()], wave.to_vec())?;
            for (i, &(_, _, _, stride)) in self.convs.iter().enumerate() {
                let spec = Conv1dSpec::new(stride, Padding::Valid, 1);
                let pre = conv1d(&x, p.get(&conv_name(i))?, None, &spec)?;
                let act = pre.map(gelu);
                conv_in.push(x);
                conv_pre.push(pre);
                x = act;
            }
            x.transpose()?
        } else {
            self.chunked_features(p, wave)?
        };
        let (normed, norm) = self.norm.forward(p, &feats)?;
        let mut h = self.proj.forward(p, &normed)?;
        let frames = h.rows();
        let mask_vec = match mask {
            Some(m) if m.len() != frames => {
                return Err(Error::dim(format!(
                    "mask length {} != frame count {frames}",
                    m.len()
                )))
            }
            Some(m) => m.to_vec(),
            None => vec![false; frames],
        };
        if mask_vec.iter().any(|&b| b) {
            let emb = p.get(MASK_EMB)?.data().to_vec();
            for (t, _) in mask_vec.iter().enumerate().filter(|(_, &b)| b) {
                h.row_mut(t).copy_from_slice(&emb);
            }
        }
        let pos_in = h.transpose()?;
        let pos_pre = conv1d(
            &pos_in,
            p.get("pos_conv.weight")?,
            Some(p.get("pos_conv.bias")?),
            &self.pos_spec(),
        )?;
        let y = h.add(&pos_pre.map(gelu).transpose()?)?;
        let cache = keep.then_some(FrontendCache {
            conv_in,
            conv_pre,
            norm,
            normed,
            mask: mask_vec,
            pos_in,
            pos_pre,
        });
        Ok((y, cache))
    }

    /// Conv stack over hop-aligned chunks, as `[frames x channels]`.
    fn chunked_features<T: Scalar>(&self, p: &ParamStore<T>, wave: &[T]) -> Result<Tensor<T>> {
        let ranges = self.spec.chunks(wave.len(), CHUNK_FRAMES)?;
        let c = self.spec.out_channels();
        let mut data = Vec::with_capacity(self.spec.frames(wave.len())? * c);
        for r in ranges {
            let mut x = Tensor::new(&[1, r.len()], wave[r].to_vec())?;
            for (i, &(_, _, _, stride)) in self.convs.iter().enumerate() {
                let spec = Conv1dSpec::new(stride, Padding::Valid, 1);
                let mut pre = conv1d(&x, p.get(&conv_name(i))?, None, &spec)?;
                drop(x);
                pre.data_mut().iter_mut().for_each(|v| *v = gelu(*v));
                x = pre;
            }
            data.extend_from_slice(x.transpose()?.data());
        }
        Tensor::new(&[data.len() / c, c], data)
    }

    /// Accumulates parameter gradients given the gradient of the output.
    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        cache: &FrontendCache<T>,
        dy: &Tensor<T>,
        g: &mut ParamStore<T>,
    ) -> Result<()> {
        let dpre = cache
            .pos_pre
            .zip_map(&dy.transpose()?, |x, d| d * gelu_grad(x))?;
        let (dpos_in, dw, db) = conv1d_backward(
            &cache.pos_in,
            p.get("pos_conv.weight")?,
            &dpre,
            &self.pos_spec(),
        )?;
        g.accumulate("pos_conv.weight", &dw)?;
        g.accumulate("pos_conv.bias", &db)?;
        let mut dh = dy.add(&dpos_in.transpose()?)?;
        let d = self.d_model;
        let mut demb = vec![T::zero(); d];
        for (t, &m) in cache.mask.iter().enumerate() {
            if m {
                for (e, v) in demb.iter_mut().zip(dh.row_mut(t)) {
                    *e += *v;
                    *v = T::zero();
                }
            }
        }
        g.accumulate(MASK_EMB, &Tensor::new(&[d], demb)?)?;
        let dnormed = self.proj.backward(p, &cache.normed, &dh, g)?;
        let dfeats = self.norm.backward(p, &cache.norm, &dnormed, g)?;
        let mut dx = dfeats.transpose()?;
        for i in (0..self.convs.len()).rev() {
            let stride = self.convs[i].3;
            let dpre = cache.conv_pre[i].zip_map(&dx, |x, d| d * gelu_grad(x))?;
            let spec = Conv1dSpec::new(stride, Padding::Valid, 1);
            let (dxi, dw, _) =
                conv1d_backward(&cache.conv_in[i], p.get(&conv_name(i))?, &dpre, &spec)?;
            g.accumulate(&conv_name(i), &dw)?;
            dx = dxi;
        }
        Ok(())
    }
}
