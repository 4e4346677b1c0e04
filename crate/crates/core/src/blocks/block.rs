//! One encoder layer of any supported kind.

use crate::blocks::attention::{AttentionCache, SelfAttention};
use crate::blocks::config::{BlockKind, EncoderConfig};
use crate::blocks::layers::{Mlp, MlpCache};
use crate::blocks::mamba::{MambaCore, MambaCoreCache};
use crate::blocks::params::{join, ParamSpec, ParamStore};
use crate::error::Result;
use crate::numerics::Tensor;
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub enum EncoderBlock {
    /// `x + core(x)`, optionally followed by an MLP.
    Mamba { core: MambaCore, mlp: Option<Mlp> },
    /// Two independent cores, the second applied in reversed time.
    ExtBimamba { fwd: MambaCore, bwd: MambaCore },
    Attention { attn: SelfAttention, mlp: Mlp },
}

#[derive(Clone, Debug)]
pub enum BlockCache<T> {
    Mamba {
        core: MambaCoreCache<T>,
        mlp: Option<(Tensor<T>, MlpCache<T>)>,
    },
    ExtBimamba {
        fwd: MambaCoreCache<T>,
        bwd: MambaCoreCache<T>,
    },
    Attention {
        attn: AttentionCache<T>,
        mid: Tensor<T>,
        mlp: MlpCache<T>,
    },
}

impl EncoderBlock {
    pub fn new(cfg: &EncoderConfig, index: usize) -> Self {
        let prefix = format!("layers.{index}");
        let d = cfg.d_model;
        let core = |name: &str, bidirectional: bool| {
            MambaCore::new(
                &join(&prefix, name),
                d,
                cfg.d_inner(),
                cfg.d_state,
                cfg.conv_kernel,
                bidirectional,
            )
        };
        let mlp = || Mlp::new(&join(&prefix, "mlp"), d, cfg.mlp_hidden());
        match cfg.block_kind {
            BlockKind::Mamba => EncoderBlock::Mamba {
                core: core("mamba", false),
                mlp: None,
            },
            BlockKind::MambaMlp => EncoderBlock::Mamba {
                core: core("mamba", false),
                mlp: Some(mlp()),
            },
            BlockKind::InnBimamba => EncoderBlock::Mamba {
                core: core("mamba", true),
                mlp: None,
            },
            BlockKind::ExtBimamba => EncoderBlock::ExtBimamba {
                fwd: core("fwd", false),
                bwd: core("bwd", false),
            },
            BlockKind::CausalAttn | BlockKind::BidirAttn => EncoderBlock::Attention {
                attn: SelfAttention::new(
                    &join(&prefix, "attn"),
                    d,
                    cfg.n_heads,
                    cfg.block_kind.is_causal(),
                ),
                mlp: mlp(),
            },
        }
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        match self {
            EncoderBlock::Mamba { core, mlp } => {
                let mut v = core.specs();
                if let Some(m) = mlp {
                    v.extend(m.specs());
                }
                v
            }
            EncoderBlock::ExtBimamba { fwd, bwd } => {
                let mut v = fwd.specs();
                v.extend(bwd.specs());
                v
            }
            EncoderBlock::Attention { attn, mlp } => {
                let mut v = attn.specs();
                v.extend(mlp.specs());
                v
            }
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        x: &Tensor<T>,
    ) -> Result<(Tensor<T>, BlockCache<T>)> {
        match self {
            EncoderBlock::Mamba { core, mlp } => {
                let (c, core_cache) = core.forward(p, x)?;
                let mid = x.add(&c)?;
                match mlp {
                    None => Ok((
                        mid,
                        BlockCache::Mamba {
                            core: core_cache,
                            mlp: None,
                        },
                    )),
                    Some(m) => {
                        let (y, mc) = m.forward(p, &mid)?;
                        Ok((
                            y,
                            BlockCache::Mamba {
                                core: core_cache,
                                mlp: Some((mid, mc)),
                            },
                        ))
                    }
                }
            }
            EncoderBlock::ExtBimamba { fwd, bwd } => {
                let (f, fc) = fwd.forward(p, x)?;
                let (b, bc) = bwd.forward(p, &x.reverse_rows())?;
                let y = x.add(&f)?.add(&b.reverse_rows())?;
                Ok((y, BlockCache::ExtBimamba { fwd: fc, bwd: bc }))
            }
            EncoderBlock::Attention { attn, mlp } => {
                let (mid, ac) = attn.forward(p, x)?;
                let (y, mc) = mlp.forward(p, &mid)?;
                Ok((
                    y,
                    BlockCache::Attention {
                        attn: ac,
                        mid,
                        mlp: mc,
                    },
                ))
            }
        }
    }

    /// Accumulates parameter gradients into `g` and returns `dx`.
    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        cache: &BlockCache<T>,
        dy: &Tensor<T>,
        g: &mut ParamStore<T>,
    ) -> Result<Tensor<T>> {
        match (self, cache) {
            (EncoderBlock::Mamba { core, mlp }, BlockCache::Mamba { core: cc, mlp: mc }) => {
                let dmid = match (mlp, mc) {
                    (Some(m), Some((_, c))) => m.backward(p, c, dy, g)?,
                    _ => dy.clone(),
                };
                let mut dx = core.backward(p, cc, &dmid, g)?;
                dx.add_assign(&dmid)?;
                Ok(dx)
            }
            (EncoderBlock::ExtBimamba { fwd, bwd }, BlockCache::ExtBimamba { fwd: fc, bwd: bc }) => {
                let mut dx = fwd.backward(p, fc, dy, g)?;
                let db = bwd.backward(p, bc, &dy.reverse_rows(), g)?;
                dx.add_assign(&db.reverse_rows())?;
                dx.add_assign(dy)?;
                Ok(dx)
            }
            (EncoderBlock::Attention { attn, mlp }, BlockCache::Attention { attn: ac, mlp: mc, .. }) => {
                let dmid = mlp.backward(p, mc, dy, g)?;
                attn.backward(p, ac, &dmid, g)
            }
            _ => unreachable!("cache built by the same block"),
        }
    }
}
