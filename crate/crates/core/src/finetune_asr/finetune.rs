//! Joint CTC fine-tuning of a pretrained encoder and the convolutional
//! head, in utterance, document or causal mode.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bench::memory::{estimate_peak_memory, estimate_training_peak_memory};
use crate::blocks::config::EncoderConfig;
use crate::blocks::encoder::Encoder;
use crate::blocks::params::ParamStore;
use crate::error::{Error, Result};
use crate::finetune_asr::ctc::{ctc_loss_from_logits, edit_distance, greedy_ctc_decode};
use crate::finetune_asr::data::{group_documents, AsrItem, Document, Vocab, MAX_DOCUMENT_SECONDS};
use crate::finetune_asr::head::{AsrHead, HEAD_LAYERS};
use crate::pretrain::optim::{Adam, TrainSchedule};
use crate::pretrain::trainer::Batcher;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FinetuneMode {
    Utterance,
    Document,
    Causal,
}

impl FinetuneMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "utterance" => Ok(Self::Utterance),
            "document" => Ok(Self::Document),
            "causal" => Ok(Self::Causal),
            _ => Err(Error::Config(format!("unknown fine-tuning mode {s:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Utterance => "utterance",
            Self::Document => "document",
            Self::Causal => "causal",
        }
    }
}

#[derive(Clone, Debug)]
pub struct FinetuneConfig {
    pub mode: FinetuneMode,
    pub steps: usize,
    pub peak_lr: f64,
    pub warmup_fraction: f64,
    /// Audio seconds per optimizer step.
    pub batch_seconds: f64,
    /// Training crop length in document mode.
    pub crop_seconds: f64,
    pub max_document_seconds: f64,
    /// Memory budget checked against the analytic estimate before any
    /// allocation.
    pub budget_bytes: Option<u64>,
    pub head_layers: usize,
    pub seed: u64,
}

impl FinetuneConfig {
    pub fn new(mode: FinetuneMode, steps: usize) -> Self {
        Self {
            mode,
            steps,
            peak_lr: 2e-3,
            warmup_fraction: 0.08,
            batch_seconds: 8.0,
            crop_seconds: 20.0,
            max_document_seconds: MAX_DOCUMENT_SECONDS,
            budget_bytes: None,
            head_layers: HEAD_LAYERS,
            seed: 0,
        }
    }

    fn schedule(&self) -> TrainSchedule {
        TrainSchedule {
            total_steps: self.steps,
            warmup_fraction: self.warmup_fraction,
            peak_lr: self.peak_lr,
            batch_seconds: self.batch_seconds,
            ..TrainSchedule::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TranscriptPair {
    pub id: String,
    pub reference: String,
    pub hypothesis: String,
    pub errors: usize,
}

impl TranscriptPair {
    pub fn wer(&self) -> f64 {
        self.errors as f64 / self.reference.chars().count().max(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WerReport {
    pub pairs: Vec<TranscriptPair>,
}

impl WerReport {
    /// Total edits over total reference tokens.
    pub fn wer(&self) -> f64 {
        let errors: usize = self.pairs.iter().map(|p| p.errors).sum();
        let total: usize = self.pairs.iter().map(|p| p.reference.chars().count()).sum();
        errors as f64 / total.max(1) as f64
    }

    pub fn per_item(&self) -> Vec<f64> {
        self.pairs.iter().map(TranscriptPair::wer).collect()
    }
}

/// An encoder with its CTC head and vocabulary.
#[derive(Clone, Debug)]
pub struct AsrModel<T> {
    pub encoder: Encoder,
    pub head: AsrHead,
    pub vocab: Vocab,
    pub params: ParamStore<T>,
}

impl<T: Scalar> AsrModel<T> {
    pub fn logits(&self, wave: &[T]) -> Result<crate::numerics::Tensor<T>> {
        let states = self.encoder.forward(&self.params, wave)?;
        self.head.forward(&self.params, states.last())
    }

    pub fn transcribe(&self, wave: &[f32]) -> Result<String> {
        let wave: Vec<T> = wave.iter().map(|&s| T::lit(s as f64)).collect();
        Ok(self.vocab.decode(&greedy_ctc_decode(&self.logits(&wave)?)?))
    }

    pub fn evaluate(&self, items: &[AsrItem]) -> Result<WerReport> {
        let pairs = items
            .iter()
            .map(|it| {
                let hypothesis = self.transcribe(&it.wave)?;
                let r: Vec<char> = it.text.chars().collect();
                let h: Vec<char> = hypothesis.chars().collect();
                Ok(TranscriptPair {
                    id: it.id.clone(),
                    reference: it.text.clone(),
                    errors: edit_distance(&r, &h),
                    hypothesis,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(WerReport { pairs })
    }
}

#[derive(Clone, Debug)]
pub struct FinetuneResult<T> {
    pub model: AsrModel<T>,
    pub report: WerReport,
    /// Mean CTC loss per step.
    pub losses: Vec<f64>,
}

/// Evaluation units: utterances, or whole documents within the duration
/// limit in document mode.
pub fn evaluation_units(items: &[AsrItem], cfg: &FinetuneConfig) -> Vec<AsrItem> {
    match cfg.mode {
        FinetuneMode::Document => kept_documents(items, cfg).iter().map(Document::concatenated).collect(),
        _ => items.to_vec(),
    }
}

fn kept_documents(items: &[AsrItem], cfg: &FinetuneConfig) -> Vec<Document> {
    group_documents(items)
        .into_iter()
        .filter(|d| d.seconds() <= cfg.max_document_seconds)
        .collect()
}

/// Fails with a predicted out-of-memory error when the longest evaluation
/// unit or a training batch would exceed the budget.
pub fn check_memory(encoder: &EncoderConfig, items: &[AsrItem], cfg: &FinetuneConfig, scalar_bytes: u64) -> Result<()> {
    let Some(budget) = cfg.budget_bytes else {
        return Ok(());
    };
    let longest = evaluation_units_seconds(items, cfg);
    let train_secs = match cfg.mode {
        FinetuneMode::Document => cfg.crop_seconds.min(longest),
        _ => items.iter().map(AsrItem::seconds).fold(0.0, f64::max),
    };
    let checks = [
        ("inference", longest, estimate_peak_memory(encoder, longest, 1, scalar_bytes)),
        ("training", train_secs, estimate_training_peak_memory(encoder, train_secs, 1, scalar_bytes)),
    ];
    for (what, secs, bytes) in checks {
        if bytes > budget {
            return Err(Error::PredictedOom {
                what: format!("{} {what} on {secs:.1} s input", encoder.block_kind.name()),
                estimated_bytes: bytes,
                budget_bytes: budget,
            });
        }
    }
    Ok(())
}

fn evaluation_units_seconds(items: &[AsrItem], cfg: &FinetuneConfig) -> f64 {
    match cfg.mode {
        FinetuneMode::Document => kept_documents(items, cfg)
            .iter()
            .map(Document::seconds)
            .fold(0.0, f64::max),
        _ => items.iter().map(AsrItem::seconds).fold(0.0, f64::max),
    }
}

/// Builds the model from pretrained encoder weights plus a freshly
/// initialized head.
pub fn init_model<T: Scalar>(
    encoder_cfg: &EncoderConfig,
    pretrained: &ParamStore<T>,
    vocab: Vocab,
    cfg: &FinetuneConfig,
) -> Result<AsrModel<T>> {
    let encoder = Encoder::new(encoder_cfg)?;
    let mut params = ParamStore::new();
    for spec in encoder.specs() {
        params.insert(spec.name.clone(), pretrained.get(&spec.name)?.clone());
    }
    encoder.check_params(&params)?;
    let head = AsrHead::with_layers(
        encoder_cfg.d_model,
        cfg.head_layers,
        vocab.n_classes(),
        cfg.mode == FinetuneMode::Causal,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    params.merge(&ParamStore::from_specs(&head.specs(), &mut rng))?;
    Ok(AsrModel {
        encoder,
        head,
        vocab,
        params,
    })
}

pub fn finetune<T: Scalar>(
    encoder_cfg: &EncoderConfig,
    pretrained: &ParamStore<T>,
    items: &[AsrItem],
    cfg: &FinetuneConfig,
) -> Result<FinetuneResult<T>> {
    if items.is_empty() {
        return Err(Error::Missing("empty fine-tuning dataset".into()));
    }
    if cfg.mode == FinetuneMode::Causal && !encoder_cfg.block_kind.is_causal() {
        return Err(Error::Config(format!(
            "causal fine-tuning needs a causal block kind, got {}",
            encoder_cfg.block_kind.name()
        )));
    }
    check_memory(encoder_cfg, items, cfg, std::mem::size_of::<T>() as u64)?;
    let vocab = Vocab::from_texts(items.iter().map(|i| i.text.as_str()));
    let mut model = init_model(encoder_cfg, pretrained, vocab, cfg)?;
    let docs = kept_documents(items, cfg);
    if cfg.mode == FinetuneMode::Document && docs.is_empty() {
        return Err(Error::Missing("every document exceeds the duration limit".into()));
    }
    let schedule = cfg.schedule();
    schedule.validate()?;
    let mut adam = Adam::from_schedule(&model.params, &schedule);
    let durations: Vec<f64> = match cfg.mode {
        FinetuneMode::Document => docs.iter().map(|d| d.seconds().min(cfg.crop_seconds)).collect(),
        _ => items.iter().map(AsrItem::seconds).collect(),
    };
    let mut batcher = Batcher::new(durations, cfg.batch_seconds, cfg.seed);
    let mut crop_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xc0ff_ee);
    let top = model.encoder.blocks.len();
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch: Vec<AsrItem> = batcher
            .next_batch()
            .into_iter()
            .map(|i| match cfg.mode {
                FinetuneMode::Document => docs[i].crop(cfg.crop_seconds, &mut crop_rng),
                _ => items[i].clone(),
            })
            .collect();
        let mut grads = ParamStore::new();
        let mut loss = 0.0;
        let n = T::lit(batch.len() as f64);
        for item in &batch {
            let wave: Vec<T> = item.wave.iter().map(|&s| T::lit(s as f64)).collect();
            let labels = model.vocab.encode(&item.text)?;
            let (states, cache) = model.encoder.forward_train(&model.params, &wave, None)?;
            let (logits, hcache) = model.head.forward_train(&model.params, states.last())?;
            let out = ctc_loss_from_logits(&logits, &labels)?;
            loss += out.loss.to_f64_lossy();
            let dlogits = out.grad.map(|g| g / n);
            let dx = model.head.backward(&model.params, &hcache, &dlogits, &mut grads)?;
            model.encoder.backward(&model.params, &cache, top, &dx, &mut grads)?;
        }
        if !grads.all_finite() {
            return Err(Error::NonFinite {
                step,
                context: "fine-tuning gradient".into(),
            });
        }
        adam.step(&mut model.params, &grads, schedule.lr(step))?;
        losses.push(loss / batch.len() as f64);
    }
    let report = model.evaluate(&evaluation_units(items, cfg))?;
    Ok(FinetuneResult { model, report, losses })
}
