//! Two-iteration pretraining: MFCC cluster targets, then clusters of the
//! first model's intermediate layer, each iteration trained from scratch.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::kmeans::{kmeans, KMeans, KMeansOptions};
use crate::blocks::config::{BlockKind, EncoderConfig, FrontendSpec};
use crate::blocks::encoder::Encoder;
use crate::blocks::params::ParamStore;
use crate::corpus::Utterance;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::pretrain::loss::PredictionHead;
use crate::pretrain::mask::MaskSpec;
use crate::pretrain::mfcc::MfccExtractor;
use crate::pretrain::optim::{TrainSchedule, DEFAULT_GROWTH_INTERVAL};
use crate::pretrain::trainer::{Batcher, Pretrainer, StepMetrics, TrainItem};
use crate::scalar::Scalar;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub schedule: TrainSchedule,
    pub mask: MaskSpec,
    /// Number of k-means targets.
    pub n_clusters: usize,
    /// 1-based layer whose output feeds the second iteration's targets.
    pub target_layer: usize,
    /// Optimizer steps for each iteration.
    pub steps: Vec<usize>,
    pub proj_dim: usize,
    pub growth_interval: u64,
    pub kmeans_max_iter: usize,
    /// Frames subsampled (evenly) for fitting k-means.
    pub kmeans_max_frames: usize,
}

impl PretrainConfig {
    pub fn desk(encoder: EncoderConfig) -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: 0,
            encoder,
            schedule: TrainSchedule::default(),
            mask: MaskSpec::default(),
            n_clusters: 100,
            target_layer: 6,
            steps: vec![300, 300],
            proj_dim: 32,
            growth_interval: DEFAULT_GROWTH_INTERVAL,
            kmeans_max_iter: 50,
            kmeans_max_frames: 20_000,
        }
    }

    /// The CPU-sized configuration: a 6-layer, 48-wide inner-bidirectional
    /// Mamba encoder on a 32-channel frontend.
    pub fn desk_small() -> Self {
        let mut encoder = EncoderConfig::tiny(BlockKind::InnBimamba, 48, 6);
        encoder.frontend = FrontendSpec::standard(32);
        encoder.d_state = 8;
        let mut cfg = Self::desk(encoder);
        cfg.schedule.peak_lr = 2e-3;
        cfg.steps = vec![600, 600];
        cfg.target_layer = 3;
        cfg
    }

    /// Peak learning rate for a block kind: bidirectional Mamba at base
    /// width trains with a tenfold smaller rate.
    pub fn default_peak_lr(encoder: &EncoderConfig) -> f64 {
        if encoder.block_kind == BlockKind::ExtBimamba && encoder.d_model >= 768 {
            5e-5
        } else {
            5e-4
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported pretrain config schema {}",
                self.schema_version
            )));
        }
        self.encoder.validate()?;
        self.schedule.validate()?;
        self.mask.validate()?;
        if self.steps.is_empty() || self.steps.len() > 2 {
            return Err(Error::Config("steps must list one or two iteration budgets".into()));
        }
        if self.steps.len() == 2 && self.encoder.n_layers < self.target_layer {
            return Err(Error::Config(format!(
                "target layer {} exceeds encoder depth {}",
                self.target_layer, self.encoder.n_layers
            )));
        }
        if self.n_clusters == 0 || self.proj_dim == 0 || self.target_layer == 0 {
            return Err(Error::Config("n_clusters, proj_dim and target_layer must be >= 1".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Per-dimension standardization over all frames.
fn standardize<T: Scalar>(feats: &mut [Tensor<T>]) {
    let Some(d) = feats.first().map(Tensor::last_dim) else {
        return;
    };
    let mut sum = vec![0.0; d];
    let mut sq = vec![0.0; d];
    let mut n = 0.0;
    for f in feats.iter() {
        for r in 0..f.rows() {
            for (j, &v) in f.row(r).iter().enumerate() {
                let v = v.to_f64_lossy();
                sum[j] += v;
                sq[j] += v * v;
            }
            n += 1.0;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let inv: Vec<f64> = sq
        .iter()
        .zip(&mean)
        .map(|(s, m)| 1.0 / (s / n - m * m).max(1e-12).sqrt())
        .collect();
    for f in feats.iter_mut() {
        for r in 0..f.rows() {
            for (j, v) in f.row_mut(r).iter_mut().enumerate() {
                *v = T::lit((v.to_f64_lossy() - mean[j]) * inv[j]);
            }
        }
    }
}

/// Fits k-means on (an even subsample of) the pooled frames and labels
/// every frame of every sequence.
pub fn generate_targets<T: Scalar>(
    features: &[Tensor<T>],
    opts: &KMeansOptions,
    max_frames: usize,
) -> Result<(KMeans, Vec<Vec<usize>>)> {
    let total: usize = features.iter().map(Tensor::rows).sum();
    let stride = total.div_ceil(max_frames.max(1)).max(1);
    let parts: Vec<&Tensor<T>> = features.iter().collect();
    let pooled = Tensor::concat_rows(&parts)?;
    let sample = if stride == 1 {
        pooled
    } else {
        let d = pooled.last_dim();
        let rows: Vec<T> = (0..pooled.rows())
            .step_by(stride)
            .flat_map(|r| pooled.row(r).to_vec())
            .collect();
        Tensor::new(&[rows.len() / d, d], rows)?
    };
    let km = kmeans(&sample, opts)?;
    let labels = features
        .iter()
        .map(|f| km.assign(f))
        .collect::<Result<Vec<_>>>()?;
    Ok((km, labels))
}

#[derive(Clone, Debug)]
pub struct IterationResult<T> {
    pub iteration: usize,
    pub params: ParamStore<T>,
    pub metrics: Vec<StepMetrics>,
    /// Masked-frame accuracy on evaluation masks after training.
    pub accuracy: f64,
    pub k: usize,
}

fn train_iteration<T: Scalar>(
    cfg: &PretrainConfig,
    iteration: usize,
    items: &[TrainItem<T>],
    k: usize,
    log: &mut dyn FnMut(usize, &StepMetrics),
) -> Result<IterationResult<T>> {
    let encoder = Encoder::new(&cfg.encoder)?;
    let head = PredictionHead::new(cfg.encoder.d_model, cfg.proj_dim, k);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(iteration as u64));
    let mut params: ParamStore<T> = encoder.init(&mut rng);
    params.merge(&ParamStore::from_specs(&head.specs(), &mut rng))?;
    let steps = cfg.steps[iteration - 1];
    let schedule = TrainSchedule {
        total_steps: steps,
        ..cfg.schedule.clone()
    };
    let mask = MaskSpec {
        seed: cfg.seed.wrapping_add(1000 * iteration as u64),
        ..cfg.mask
    };
    let mut trainer = Pretrainer::new(encoder, head, params, schedule, mask, cfg.growth_interval)?;
    let mut batcher = Batcher::new(
        items.iter().map(TrainItem::seconds).collect(),
        cfg.schedule.batch_seconds,
        cfg.seed.wrapping_add(77 * iteration as u64),
    );
    let mut metrics = Vec::with_capacity(steps);
    for _ in 0..steps {
        let batch: Vec<&TrainItem<T>> = batcher.next_batch().into_iter().map(|i| &items[i]).collect();
        let m = trainer.train_step(&batch, false)?;
        log(iteration, &m);
        metrics.push(m);
    }
    let accuracy = trainer.evaluate(items, cfg.seed ^ 0x5eed)?;
    Ok(IterationResult {
        iteration,
        params: trainer.params,
        metrics,
        accuracy,
        k,
    })
}

/// Runs the configured iterations over `corpus`. `log` sees every step.
pub fn pretrain_pipeline<T: Scalar>(
    cfg: &PretrainConfig,
    corpus: &[Utterance],
    log: &mut dyn FnMut(usize, &StepMetrics),
) -> Result<Vec<IterationResult<T>>> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Missing("empty pretraining corpus".into()));
    }
    let waves: Vec<Vec<T>> = corpus
        .iter()
        .map(|u| u.wave.iter().map(|&s| T::lit(s as f64)).collect())
        .collect();
    let kopts = KMeansOptions {
        max_iter: cfg.kmeans_max_iter,
        ..KMeansOptions::new(cfg.n_clusters, cfg.seed)
    };
    let mfcc = MfccExtractor::new();
    let mut feats = waves
        .iter()
        .map(|w| mfcc.compute(w))
        .collect::<Result<Vec<Tensor<T>>>>()?;
    standardize(&mut feats);
    let (km, labels) = generate_targets(&feats, &kopts, cfg.kmeans_max_frames)?;
    let items: Vec<TrainItem<T>> = waves
        .iter()
        .cloned()
        .zip(labels)
        .map(|(wave, labels)| TrainItem { wave, labels })
        .collect();
    let first = train_iteration(cfg, 1, &items, km.k(), log)?;
    if cfg.steps.len() == 1 {
        return Ok(vec![first]);
    }
    let encoder = Encoder::new(&cfg.encoder)?;
    let feats = waves
        .iter()
        .map(|w| Ok(encoder.forward(&first.params, w)?.layer(cfg.target_layer)?.clone()))
        .collect::<Result<Vec<Tensor<T>>>>()?;
    let (km, labels) = generate_targets(&feats, &kopts, cfg.kmeans_max_frames)?;
    let items: Vec<TrainItem<T>> = waves
        .into_iter()
        .zip(labels)
        .map(|(wave, labels)| TrainItem { wave, labels })
        .collect();
    let second = train_iteration(cfg, 2, &items, km.k(), log)?;
    Ok(vec![first, second])
}
