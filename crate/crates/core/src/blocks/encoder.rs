use rand::Rng;

use crate::blocks::block::{BlockCache, EncoderBlock};
use crate::blocks::config::EncoderConfig;
use crate::blocks::frontend::{Frontend, FrontendCache};
use crate::blocks::params::{ParamSpec, ParamStore};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Hidden states of every layer: index 0 is the frontend output, index `i`
/// the output of block `i` (1-based), each `[frames x d_model]`.
#[derive(Clone, Debug)]
pub struct LayerStates<T> {
    pub states: Vec<Tensor<T>>,
}

impl<T: Scalar> LayerStates<T> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn frames(&self) -> usize {
        self.states[0].rows()
    }

    pub fn layer(&self, i: usize) -> Result<&Tensor<T>> {
        self.states.get(i).ok_or_else(|| {
            Error::Config(format!(
                "layer {i} requested but encoder has {} blocks",
                self.states.len() - 1
            ))
        })
    }

    pub fn last(&self) -> &Tensor<T> {
        self.states.last().expect("at least the frontend state")
    }
}

#[derive(Clone, Debug)]
pub struct EncoderCache<T> {
    frontend: FrontendCache<T>,
    blocks: Vec<BlockCache<T>>,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    pub frontend: Frontend,
    pub blocks: Vec<EncoderBlock>,
}

impl Encoder {
    pub fn new(cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg: cfg.clone(),
            frontend: Frontend::new(cfg),
            blocks: (0..cfg.n_layers).map(|i| EncoderBlock::new(cfg, i)).collect(),
        })
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut v = self.frontend.specs();
        for b in &self.blocks {
            v.extend(b.specs());
        }
        v
    }

    pub fn init<T: Scalar>(&self, rng: &mut impl Rng) -> ParamStore<T> {
        ParamStore::from_specs(&self.specs(), rng)
    }

    /// Checks that `p` holds every parameter with the expected shape.
    pub fn check_params<T: Scalar>(&self, p: &ParamStore<T>) -> Result<()> {
        for s in self.specs() {
            let t = p.get(&s.name)?;
            if t.shape() != s.shape.as_slice() {
                return Err(Error::dim(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    s.name,
                    t.shape(),
                    s.shape
                )));
            }
        }
        Ok(())
    }

    pub fn forward<T: Scalar>(&self, p: &ParamStore<T>, wave: &[T]) -> Result<LayerStates<T>> {
        let mut states = Vec::with_capacity(self.blocks.len() + 1);
        states.push(self.frontend.forward(p, wave, None)?);
        for b in &self.blocks {
            let (y, _) = b.forward(p, states.last().expect("non-empty"))?;
            states.push(y);
        }
        Ok(LayerStates { states })
    }

    pub fn forward_train<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        wave: &[T],
        mask: Option<&[bool]>,
    ) -> Result<(LayerStates<T>, EncoderCache<T>)> {
        let (h0, frontend) = self.frontend.forward_train(p, wave, mask)?;
        let mut states = vec![h0];
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, c) = b.forward(p, states.last().expect("non-empty"))?;
            states.push(y);
            blocks.push(c);
        }
        Ok((LayerStates { states }, EncoderCache { frontend, blocks }))
    }

    /// Back-propagates `dy`, the gradient of layer state `layer`, down to the
    /// frontend parameters.
    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        cache: &EncoderCache<T>,
        layer: usize,
        dy: &Tensor<T>,
        g: &mut ParamStore<T>,
    ) -> Result<()> {
        if layer > self.blocks.len() {
            return Err(Error::Config(format!(
                "layer {layer} out of range for {} blocks",
                self.blocks.len()
            )));
        }
        let mut d = dy.clone();
        for i in (0..layer).rev() {
            d = self.blocks[i].backward(p, &cache.blocks[i], &d, g)?;
        }
        self.frontend.backward(p, &cache.frontend, &d, g)
    }
}

impl EncoderConfig {
    /// Parameters in one block of this configuration.
    pub fn layer_param_count(&self) -> usize {
        EncoderBlock::new(self, 0).specs().iter().map(ParamSpec::numel).sum()
    }

    pub fn param_count(&self) -> usize {
        let frontend: usize = Frontend::new(self).specs().iter().map(ParamSpec::numel).sum();
        frontend + self.n_layers * self.layer_param_count()
    }
}
