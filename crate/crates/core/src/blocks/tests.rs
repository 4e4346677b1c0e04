use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::numerics::{finite_diff_grad, max_rel_err, Tensor};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let spec = ParamSpec::new("x", shape, Init::Uniform(1.0));
    spec.materialize(&mut rng(seed))
}

fn block_params(cfg: &EncoderConfig, seed: u64) -> (EncoderBlock, ParamStore<f64>) {
    let b = EncoderBlock::new(cfg, 0);
    let mut p = ParamStore::from_specs(&b.specs(), &mut rng(seed));
    // move zero-initialised biases and unit gains off their defaults
    for (i, (_, t)) in p.iter_mut().enumerate() {
        let noise = random(t.shape(), 1000 + i as u64);
        t.axpy(0.2, &noise).unwrap();
    }
    (b, p)
}

fn weighted_sum(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.dot(r).unwrap()
}

#[test]
fn block_gradients_match_finite_differences() {
    for kind in BlockKind::ALL {
        let cfg = EncoderConfig::tiny(kind, 4, 1);
        let (b, p) = block_params(&cfg, 7);
        let x = random(&[6, 4], 3);
        let (y, cache) = b.forward(&p, &x).unwrap();
        let r = random(y.shape(), 5);
        let mut g = ParamStore::new();
        let dx = b.backward(&p, &cache, &r, &mut g).unwrap();

        let fd_x = finite_diff_grad(
            |xp: &Tensor<f64>| Ok(weighted_sum(&b.forward(&p, xp)?.0, &r)),
            &x,
            1e-6,
        )
        .unwrap();
        let e = max_rel_err(&dx, &fd_x, 1e-6);
        assert!(e < 1e-5, "{kind:?} input grad rel err {e}");

        for name in p.names().cloned().collect::<Vec<_>>() {
            let fd = finite_diff_grad(
                |v: &Tensor<f64>| {
                    let mut q = p.clone();
                    *q.get_mut(&name)? = v.clone();
                    Ok(weighted_sum(&b.forward(&q, &x)?.0, &r))
                },
                p.get(&name).unwrap(),
                1e-5,
            )
            .unwrap();
            // entries far below the largest one are judged on absolute error
            let floor = fd.max_abs().max(1e-8);
            let e = max_rel_err(g.get(&name).unwrap(), &fd, floor);
            assert!(e < 1e-4, "{kind:?} `{name}` rel err {e}");
        }
    }
}

#[test]
fn causal_blocks_ignore_the_future_bitwise() {
    for kind in BlockKind::ALL {
        let cfg = EncoderConfig::tiny(kind, 4, 1);
        let (b, p) = block_params(&cfg, 11);
        let x = random(&[9, 4], 13);
        let y = b.forward(&p, &x).unwrap().0;
        let t = 4;
        let mut x2 = x.clone();
        for s in t + 1..9 {
            for v in x2.row_mut(s) {
                *v += 3.0;
            }
        }
        let y2 = b.forward(&p, &x2).unwrap().0;
        let prefix_same = (0..=t).all(|s| y.row(s) == y2.row(s));
        assert_eq!(prefix_same, kind.is_causal(), "{kind:?}");
    }
}

#[test]
fn zero_output_projection_is_identity() {
    let cfg = EncoderConfig::tiny(BlockKind::Mamba, 4, 1);
    let (b, mut p) = block_params(&cfg, 2);
    let w = p.get_mut("layers.0.mamba.out_proj.weight").unwrap();
    *w = Tensor::zeros(w.shape());
    let x = random(&[5, 4], 1);
    assert_eq!(b.forward(&p, &x).unwrap().0, x);
}

#[test]
fn external_bidirectional_is_time_symmetric_with_tied_branches() {
    let cfg = EncoderConfig::tiny(BlockKind::ExtBimamba, 4, 1);
    let (b, mut p) = block_params(&cfg, 4);
    let fwd: Vec<(String, Tensor<f64>)> = p
        .iter()
        .filter(|(k, _)| k.starts_with("layers.0.fwd."))
        .map(|(k, v)| (k.replacen(".fwd.", ".bwd.", 1), v.clone()))
        .collect();
    for (k, v) in fwd {
        p.insert(k, v);
    }
    let x = random(&[7, 4], 9);
    let y = b.forward(&p, &x).unwrap().0;
    let yr = b.forward(&p, &x.reverse_rows()).unwrap().0;
    assert!(max_rel_err(&yr, &y.reverse_rows(), 1e-12) < 1e-12);
}

#[test]
fn parameter_count_orderings() {
    let count = |k| EncoderConfig::preset(k, SizePreset::Base).layer_param_count();
    let mamba = count(BlockKind::Mamba);
    let inn = count(BlockKind::InnBimamba);
    let ext = count(BlockKind::ExtBimamba);
    let attn = count(BlockKind::CausalAttn);
    let mlp = count(BlockKind::MambaMlp);
    assert!(mamba < inn && inn < ext, "{mamba} {inn} {ext}");
    assert_eq!(ext, 2 * mamba);
    assert_eq!(attn, count(BlockKind::BidirAttn));
    let rel = (mlp as f64 - attn as f64).abs() / attn as f64;
    assert!(rel < 0.01, "mamba+mlp {mlp} vs attention {attn}");

    // analytic attention layer: 2 norms, qkv, out, fc1, fc2
    let d = 768;
    assert_eq!(attn, 2 * 2 * d + (3 * d * d + 3 * d) + (d * d + d) + (4 * d * d + 4 * d) + (4 * d * d + d));

    let base = EncoderConfig::preset(BlockKind::BidirAttn, SizePreset::Base).param_count();
    assert!((90_000_000..100_000_000).contains(&base), "{base}");
}

#[test]
fn spec_counts_match_materialized_store() {
    for kind in BlockKind::ALL {
        let cfg = EncoderConfig::tiny(kind, 8, 2);
        let enc = Encoder::new(&cfg).unwrap();
        let p: ParamStore<f32> = enc.init(&mut rng(1));
        assert_eq!(p.num_params(), cfg.param_count(), "{kind:?}");
        enc.check_params(&p).unwrap();
    }
}

#[test]
fn encoder_frame_counts_and_states() {
    let cfg = EncoderConfig::tiny(BlockKind::InnBimamba, 8, 3);
    let enc = Encoder::new(&cfg).unwrap();
    let p: ParamStore<f64> = enc.init(&mut rng(3));
    for (samples, frames) in [(400, 1), (16_000, 49)] {
        let wave: Vec<f64> = (0..samples).map(|i| (i as f64 * 0.01).sin()).collect();
        let s = enc.forward(&p, &wave).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s.frames(), frames);
        assert_eq!(s.last().shape(), &[frames, 8]);
    }
    assert!(matches!(enc.forward(&p, &[0.0; 399]), Err(Error::InvalidLength(_))));
}

#[test]
fn causal_encoder_frames_ignore_later_samples() {
    for kind in BlockKind::ALL {
        let cfg = EncoderConfig::tiny(kind, 4, 2);
        let enc = Encoder::new(&cfg).unwrap();
        let p: ParamStore<f64> = enc.init(&mut rng(5));
        let wave: Vec<f64> = (0..4000).map(|i| (i as f64 * 0.05).sin()).collect();
        let a = enc.forward(&p, &wave).unwrap();
        let t = 3;
        let mut w2 = wave.clone();
        for v in &mut w2[320 * t + 400..] {
            *v = -*v;
        }
        let b = enc.forward(&p, &w2).unwrap();
        let same = (0..=t).all(|s| a.last().row(s) == b.last().row(s));
        assert_eq!(same, kind.is_causal(), "{kind:?}");
    }
}

#[test]
fn chunked_inference_frontend_matches_training_path() {
    let mut cfg = EncoderConfig::tiny(BlockKind::Mamba, 4, 1);
    cfg.frontend = config::FrontendSpec::standard(3);
    let enc = Encoder::new(&cfg).unwrap();
    let p: ParamStore<f64> = enc.init(&mut rng(4));
    let samples = 320 * (2 * frontend::CHUNK_FRAMES + 7) + 80;
    let wave: Vec<f64> = (0..samples).map(|i| (i as f64 * 0.013).sin()).collect();
    let a = enc.forward(&p, &wave).unwrap();
    let (b, _) = enc.forward_train(&p, &wave, None).unwrap();
    assert_eq!(a.frames(), 2 * frontend::CHUNK_FRAMES + 7);
    assert_eq!(a.last(), b.last());
}

#[test]
fn encoder_gradient_reaches_frontend() {
    let mut cfg = EncoderConfig::tiny(BlockKind::CausalAttn, 4, 2);
    cfg.frontend = config::FrontendSpec::standard(3);
    let enc = Encoder::new(&cfg).unwrap();
    let p: ParamStore<f64> = enc.init(&mut rng(8));
    let wave: Vec<f64> = (0..1100).map(|i| (i as f64 * 0.03).sin() * 0.5).collect();
    let mask = vec![false, true, true];
    let (s, cache) = enc.forward_train(&p, &wave, Some(&mask)).unwrap();
    let r = random(s.last().shape(), 21);
    let mut g = ParamStore::new();
    enc.backward(&p, &cache, 2, &r, &mut g).unwrap();
    let loss = |q: &ParamStore<f64>| -> crate::Result<f64> {
        enc.forward_train(q, &wave, Some(&mask))?.0.last().dot(&r)
    };
    for name in ["frontend.conv0.weight", "frontend.conv6.weight", "mask_emb", "pos_conv.weight", "frontend.proj.bias"] {
        let fd = finite_diff_grad(
            |v: &Tensor<f64>| {
                let mut q = p.clone();
                *q.get_mut(name)? = v.clone();
                loss(&q)
            },
            p.get(name).unwrap(),
            1e-6,
        )
        .unwrap();
        let e = max_rel_err(g.get(name).unwrap(), &fd, 1e-6);
        assert!(e < 1e-4, "`{name}` rel err {e}");
    }
}

#[test]
fn checkpoint_roundtrip_and_rejects_garbage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = EncoderConfig::tiny(BlockKind::MambaMlp, 4, 1);
    let enc = Encoder::new(&cfg).unwrap();
    let p: ParamStore<f32> = enc.init(&mut rng(1));
    let mut h = CheckpointHeader::new("pretrain", &cfg);
    h.extra.insert("step".into(), "12".into());
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &h, &p).unwrap();
    let (h2, p2) = load_checkpoint::<f32>(&path).unwrap();
    assert_eq!(h2, h);
    assert_eq!(p2, p);
    let (_, p64) = load_checkpoint::<f64>(&path).unwrap();
    assert_eq!(p64.cast::<f32>(), p);

    std::fs::write(&path, b"nope").unwrap();
    assert!(matches!(load_checkpoint::<f32>(&path), Err(Error::Format { .. })));
    let bytes = {
        save_checkpoint(&path, &h, &p).unwrap();
        std::fs::read(&path).unwrap()
    };
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(load_checkpoint::<f32>(&path), Err(Error::Format { .. })));
}

fn randomized(specs: &[ParamSpec], seed: u64) -> ParamStore<f64> {
    let mut p = ParamStore::from_specs(specs, &mut rng(seed));
    for (i, (_, t)) in p.iter_mut().enumerate() {
        t.axpy(0.3, &random(t.shape(), 500 + i as u64)).unwrap();
    }
    p
}

#[test]
fn single_frame_attention_is_the_value_projection() {
    use crate::blocks::attention::SelfAttention;
    use crate::blocks::layers::{Linear, Norm};
    for causal in [false, true] {
        let att = SelfAttention::new("att", 6, 2, causal);
        let p = randomized(&att.specs(), 9);
        let x = random(&[1, 6], 4);
        let (y, _) = att.forward(&p, &x).unwrap();
        let (normed, _) = Norm::new("att.norm", 6).forward(&p, &x).unwrap();
        let qkv = Linear::new("att.qkv", 6, 18, true).forward(&p, &normed).unwrap();
        let v = Tensor::new(&[1, 6], qkv.row(0)[12..].to_vec()).unwrap();
        let expect = x.add(&Linear::new("att.out", 6, 6, true).forward(&p, &v).unwrap()).unwrap();
        assert!(max_rel_err(&y, &expect, 1e-12) < 1e-12, "causal = {causal}");
    }
}

#[test]
fn zeroed_mlp_output_is_identity() {
    use crate::blocks::layers::Mlp;
    let mlp = Mlp::new("mlp", 4, 8);
    let mut p = randomized(&mlp.specs(), 2);
    for name in ["mlp.fc2.weight", "mlp.fc2.bias"] {
        let t = p.get_mut(name).unwrap();
        *t = Tensor::zeros(t.shape());
    }
    let x = random(&[3, 4], 6);
    assert_eq!(mlp.forward(&p, &x).unwrap().0, x);
}

#[test]
fn zero_layer_encoder_returns_the_frontend_output() {
    let cfg = EncoderConfig::tiny(BlockKind::Mamba, 4, 0);
    let enc = Encoder::new(&cfg).unwrap();
    let p: ParamStore<f64> = enc.init(&mut rng(1));
    let wave: Vec<f64> = (0..2000).map(|i| (i as f64 * 0.02).sin()).collect();
    let s = enc.forward(&p, &wave).unwrap();
    assert_eq!(s.len(), 1);
    assert_eq!(s.last(), &enc.frontend.forward(&p, &wave, None).unwrap());
}
