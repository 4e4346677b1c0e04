use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::*;
use crate::analysis::kmeans::KMeansOptions;
use crate::blocks::{BlockKind, Encoder, EncoderConfig, ParamStore};
use crate::corpus::{synthesize, CorpusOptions};
use crate::error::Error;
use crate::numerics::Tensor;

fn tiny_cfg(layers: usize) -> PretrainConfig {
    let mut enc = EncoderConfig::tiny(BlockKind::InnBimamba, 8, layers);
    enc.frontend = crate::blocks::config::FrontendSpec::standard(4);
    let mut cfg = PretrainConfig::desk(enc);
    cfg.n_clusters = 4;
    cfg.target_layer = layers.min(6);
    cfg.steps = vec![2, 2];
    cfg.proj_dim = 4;
    cfg.schedule.batch_seconds = 0.5;
    cfg
}

#[test]
fn targets_k1_and_two_clouds() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = Normal::new(0.0, 0.1).unwrap();
    let make = |c: f64, rng: &mut ChaCha8Rng| {
        Tensor::new(&[20, 3], (0..60).map(|_| c + n.sample(rng)).collect()).unwrap()
    };
    let feats = vec![make(-3.0, &mut rng), make(3.0, &mut rng), make(-3.0, &mut rng)];
    let (_, one) = generate_targets(&feats, &KMeansOptions::new(1, 0), 1000).unwrap();
    assert!(one.iter().flatten().all(|&l| l == 0));
    let (km, two) = generate_targets(&feats, &KMeansOptions::new(2, 4), 1000).unwrap();
    assert_eq!(km.k(), 2);
    let a = two[0][0];
    assert!(two[0].iter().chain(&two[2]).all(|&l| l == a));
    assert!(two[1].iter().all(|&l| l == 1 - a));
    let (_, again) = generate_targets(&feats, &KMeansOptions::new(2, 4), 1000).unwrap();
    assert_eq!(two, again);
    // subsampled fit still labels every frame
    let (_, sub) = generate_targets(&feats, &KMeansOptions::new(2, 4), 7).unwrap();
    assert_eq!(sub.iter().map(Vec::len).sum::<usize>(), 60);
    let same = vec![Tensor::<f64>::zeros(&[10, 2])];
    assert!(matches!(
        generate_targets(&same, &KMeansOptions::new(2, 0), 100),
        Err(Error::DegenerateClustering(_))
    ));
}

fn trainer(growth: u64) -> (Pretrainer<f64>, Vec<TrainItem<f64>>) {
    let cfg = tiny_cfg(2);
    let enc = Encoder::new(&cfg.encoder).unwrap();
    let head = PredictionHead::new(8, 4, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut p: ParamStore<f64> = enc.init(&mut rng);
    p.merge(&ParamStore::from_specs(&head.specs(), &mut rng)).unwrap();
    let items: Vec<TrainItem<f64>> = (0..2)
        .map(|i| {
            let wave: Vec<f64> = (0..2000).map(|t| ((t * (i + 2)) as f64 * 0.01).sin()).collect();
            let frames = cfg.encoder.frames(wave.len()).unwrap();
            TrainItem {
                wave,
                labels: (0..frames).map(|t| t % 3).collect(),
            }
        })
        .collect();
    let schedule = TrainSchedule {
        total_steps: 10,
        ..TrainSchedule::default()
    };
    let t = Pretrainer::new(enc, head, p, schedule, MaskSpec::default(), growth).unwrap();
    (t, items)
}

#[test]
fn injected_overflow_halves_scale_and_skips_update() {
    let (mut t, items) = trainer(2);
    let before = t.params.clone();
    let batch: Vec<&TrainItem<f64>> = items.iter().collect();
    let m = t.train_step(&batch, true).unwrap();
    assert!(m.skipped);
    assert_eq!(t.scale.scale, 16384.0);
    assert_eq!(t.params, before);
    let m = t.train_step(&batch, false).unwrap();
    assert!(!m.skipped && m.loss.is_finite());
    assert_ne!(t.params, before);
    t.train_step(&batch, false).unwrap();
    assert_eq!(t.scale.scale, 32768.0);
}

#[test]
fn scaled_gradients_are_unscaled_before_the_update() {
    let (mut a, items) = trainer(2000);
    let (mut b, _) = trainer(2000);
    b.scale.scale = 1.0;
    let batch: Vec<&TrainItem<f64>> = items.iter().collect();
    a.train_step(&batch, false).unwrap();
    b.train_step(&batch, false).unwrap();
    for (name, t) in a.params.iter() {
        let u = b.params.get(name).unwrap();
        let e = crate::numerics::max_rel_err(t, u, 1e-6);
        assert!(e < 1e-8, "{name}: {e}");
    }
}

#[test]
fn zero_steps_keeps_initialization() {
    let mut cfg = tiny_cfg(2);
    cfg.steps = vec![0];
    let corpus = synthesize(&CorpusOptions::new(4, 3, 1, 2)).unwrap();
    let out = pretrain_pipeline::<f64>(&cfg, &corpus, &mut |_, _| {}).unwrap();
    let enc = Encoder::new(&cfg.encoder).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed + 1);
    let mut init: ParamStore<f64> = enc.init(&mut rng);
    init.merge(&ParamStore::from_specs(&PredictionHead::new(8, 4, out[0].k).specs(), &mut rng))
        .unwrap();
    assert_eq!(out[0].params, init);
}

#[test]
fn second_iteration_needs_the_target_layer() {
    let mut cfg = tiny_cfg(2);
    cfg.target_layer = 6;
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    assert_eq!(PretrainConfig::desk(EncoderConfig::tiny(BlockKind::Mamba, 8, 12)).target_layer, 6);
}

#[test]
fn two_iteration_smoke_run_and_config_text() {
    let cfg = tiny_cfg(2);
    assert_eq!(PretrainConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    let corpus = synthesize(&CorpusOptions::new(6, 3, 2, 5)).unwrap();
    let mut seen = Vec::new();
    let out = pretrain_pipeline::<f32>(&cfg, &corpus, &mut |it, m| seen.push((it, m.step))).unwrap();
    assert_eq!(out.len(), 2);
    assert_eq!(seen, vec![(1, 0), (1, 1), (2, 0), (2, 1)]);
    for r in &out {
        assert!(r.metrics.iter().all(|m| m.loss.is_finite()));
        assert!((0.0..=1.0).contains(&r.accuracy));
    }
}

#[test]
fn batcher_covers_budget_and_ema_smooths() {
    let mut b = Batcher::new(vec![1.0, 2.0, 0.5, 3.0], 2.5, 3);
    for _ in 0..10 {
        let batch = b.next_batch();
        let secs: f64 = batch.iter().map(|&i| [1.0, 2.0, 0.5, 3.0][i]).sum();
        assert!(!batch.is_empty());
        assert!(secs >= 2.5 || batch.len() == 4 || {
            let mut s = batch.clone();
            s.sort();
            s.dedup();
            s.len() == batch.len()
        });
    }
    let e = ema(&[1.0, 1.0, 1.0], 50);
    assert_eq!(e, vec![1.0, 1.0, 1.0]);
    let e = ema(&[0.0, 3.0], 2);
    assert!((e[1] - 2.0).abs() < 1e-12);
}
