//! Utterance-level CTC fine-tuning on a synthetic 5-symbol language,
//! scored on held-out utterances of the same language.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sslab_core::blocks::config::FrontendSpec;
use sslab_core::blocks::{BlockKind, Encoder, EncoderConfig, ParamStore};
use sslab_core::corpus::{synthesize, CorpusOptions};
use sslab_core::finetune_asr::{finetune, AsrItem, FinetuneConfig, FinetuneMode};

#[test]
fn five_symbol_language_reaches_low_wer() {
    let mut train: Vec<AsrItem> = synthesize(&CorpusOptions::new(120, 5, 2, 1))
        .unwrap()
        .iter()
        .map(|u| AsrItem::try_from(u).unwrap())
        .collect();
    let held_out = train.split_off(100);
    let mut enc = EncoderConfig::tiny(BlockKind::Mamba, 32, 2);
    enc.frontend = FrontendSpec::standard(16);
    let params: ParamStore<f64> = Encoder::new(&enc).unwrap().init(&mut ChaCha8Rng::seed_from_u64(0));
    let ft = FinetuneConfig {
        peak_lr: 5e-3,
        head_layers: 2,
        batch_seconds: 4.0,
        ..FinetuneConfig::new(FinetuneMode::Utterance, 400)
    };
    let out = finetune(&enc, &params, &train, &ft).unwrap();
    let wer = out.model.evaluate(&held_out).unwrap().wer();
    println!("held-out WER {wer:.4}, training WER {:.4}", out.report.wer());
    assert!(wer < 0.2, "held-out WER {wer}");
}
