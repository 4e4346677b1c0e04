use std::path::{Path, PathBuf};

use sslab_core::analysis::{layerwise_report, parse_metrics, superb_score, Attribute, ReportOptions, ScoreAnchors};
use sslab_core::bench::{sweep, write_sweep_csv, write_svg, SweepOptions};
use sslab_core::blocks::{load_checkpoint, save_checkpoint, BlockKind, CheckpointHeader, Encoder, EncoderConfig, SizePreset};
use sslab_core::corpus::{load_corpus, read_phones, synthesize, write_corpus, CorpusOptions};
use sslab_core::finetune_asr::{
    finetune as run_finetune, load_asr_dataset, paired_t_test, FinetuneConfig, FinetuneMode, WerReport,
};
use sslab_core::pretrain::{pretrain_pipeline, PretrainConfig};
use sslab_core::{Error, Scalar};

use crate::manifest::ManifestBuilder;
use crate::{AnalyzeArgs, BenchArgs, CliError, CliResult, FinetuneArgs, GenCorpusArgs, PretrainArgs, SuperbArgs, TtestArgs};

pub const SEED_ENV: &str = "SSLAB_SEED";

/// `--seed` wins, then `SSLAB_SEED`, then the configured value.
pub fn resolve_seed(flag: Option<u64>, configured: u64) -> CliResult<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Core(Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))),
        Err(_) => Ok(configured),
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).into())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e).into())
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    Error::format(path, e.to_string()).into()
}

/// Directory holding a single output file.
fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

pub fn gen_corpus(a: &GenCorpusArgs) -> CliResult<()> {
    let opts = CorpusOptions {
        utts_per_doc: a.utts_per_doc,
        ..CorpusOptions::new(a.n_utts, a.n_phones, a.n_speakers, resolve_seed(a.seed, 0)?)
    };
    let utts = synthesize(&opts)?;
    let written = write_corpus(&a.out, &utts)?;
    let mut m = ManifestBuilder::new(&a.out, "gen-corpus").seed(opts.seed).config(format!("{opts:?}"));
    m.add_all(&written)?;
    m.write()?;
    println!("wrote {} utterances to {}", utts.len(), a.out.display());
    Ok(())
}

pub fn pretrain(a: &PretrainArgs) -> CliResult<()> {
    let mut cfg = match &a.config {
        Some(p) => PretrainConfig::from_text(&read_text(p)?)?,
        None => PretrainConfig::desk_small(),
    };
    if let Some(steps) = &a.steps {
        cfg.steps = steps.clone();
    }
    cfg.seed = resolve_seed(a.seed, cfg.seed)?;
    cfg.validate()?;
    let corpus = load_corpus(&a.corpus)?;
    create_dir(&a.out)?;
    let metrics_path = a.out.join("metrics.csv");
    let mut w = csv::Writer::from_path(&metrics_path).map_err(|e| csv_err(&metrics_path, e))?;
    w.write_record(["iteration", "step", "loss", "accuracy", "lr", "scale", "skipped"])
        .map_err(|e| csv_err(&metrics_path, e))?;
    let mut failed = None;
    let results = pretrain_pipeline::<f64>(&cfg, &corpus, &mut |it, m| {
        let rec = [
            it.to_string(),
            m.step.to_string(),
            format!("{:.6}", m.loss),
            format!("{:.6}", m.accuracy),
            format!("{:.6e}", m.lr),
            format!("{}", m.scale),
            m.skipped.to_string(),
        ];
        if let Err(e) = w.write_record(rec) {
            failed.get_or_insert(e);
        }
    })?;
    if let Some(e) = failed {
        return Err(csv_err(&metrics_path, e));
    }
    w.flush().map_err(|e| Error::io(&metrics_path, e))?;
    let config_path = a.out.join("config.toml");
    write_text(&config_path, &cfg.to_text())?;
    let mut outputs = vec![metrics_path, config_path];
    let mut summary = String::from("iteration,k,accuracy\n");
    for r in &results {
        let mut header = CheckpointHeader::new("pretrain", &cfg.encoder);
        header.extra.insert("iteration".into(), r.iteration.to_string());
        header.extra.insert("accuracy".into(), format!("{:.6}", r.accuracy));
        let path = a.out.join(format!("iter{}.ckpt", r.iteration));
        save_checkpoint(&path, &header, &r.params)?;
        outputs.push(path);
        summary.push_str(&format!("{},{},{:.6}\n", r.iteration, r.k, r.accuracy));
        println!("iteration {}: masked accuracy {:.4} (k = {})", r.iteration, r.accuracy, r.k);
    }
    let summary_path = a.out.join("summary.csv");
    write_text(&summary_path, &summary)?;
    outputs.push(summary_path);
    let mut m = ManifestBuilder::new(&a.out, "pretrain").seed(cfg.seed).config(cfg.to_text());
    m.add_all(&outputs)?;
    m.write()?;
    Ok(())
}

fn write_wer_csv(path: &Path, report: &WerReport) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["id", "reference", "hypothesis", "errors", "wer"])
        .map_err(|e| csv_err(path, e))?;
    for p in &report.pairs {
        w.write_record([
            p.id.clone(),
            p.reference.clone(),
            p.hypothesis.clone(),
            p.errors.to_string(),
            format!("{:.6}", p.wer()),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e).into())
}

pub fn finetune(a: &FinetuneArgs) -> CliResult<()> {
    let (header, params) = load_checkpoint::<f64>(&a.ckpt)?;
    let items = load_asr_dataset(&a.data)?;
    let defaults = FinetuneConfig::new(FinetuneMode::parse(&a.mode)?, a.steps);
    let cfg = FinetuneConfig {
        peak_lr: a.lr.unwrap_or(defaults.peak_lr),
        batch_seconds: a.batch_seconds.unwrap_or(defaults.batch_seconds),
        head_layers: a.head_layers.unwrap_or(defaults.head_layers),
        budget_bytes: a.budget_bytes,
        seed: resolve_seed(a.seed, defaults.seed)?,
        ..defaults
    };
    let out = run_finetune(&header.encoder, &params, &items, &cfg)?;
    let report = match &a.eval {
        Some(dir) => out.model.evaluate(&load_asr_dataset(dir)?)?,
        None => out.report.clone(),
    };
    create_dir(&a.out)?;
    let mut h = CheckpointHeader::new("asr", &header.encoder);
    h.extra.insert("mode".into(), cfg.mode.name().into());
    h.extra.insert("head_layers".into(), cfg.head_layers.to_string());
    h.extra.insert("vocab".into(), out.model.vocab.to_text());
    let ckpt = a.out.join("asr.ckpt");
    save_checkpoint(&ckpt, &h, &out.model.params)?;
    let wer_path = a.out.join("wer.csv");
    write_wer_csv(&wer_path, &report)?;
    let loss_path = a.out.join("losses.csv");
    let losses: String = std::iter::once("step,loss\n".to_string())
        .chain(out.losses.iter().enumerate().map(|(i, l)| format!("{i},{l:.6}\n")))
        .collect();
    write_text(&loss_path, &losses)?;
    let mut m = ManifestBuilder::new(&a.out, "finetune")
        .seed(cfg.seed)
        .config(format!("{cfg:?}"));
    m.add_all(&[ckpt, wer_path, loss_path])?;
    m.write()?;
    println!("{} WER {:.4} over {} items", cfg.mode.name(), report.wer(), report.pairs.len());
    Ok(())
}

fn parse_embed(spec: &str) -> CliResult<Attribute> {
    let (name, path) = spec
        .split_once('=')
        .filter(|(n, p)| !n.is_empty() && !p.is_empty())
        .ok_or_else(|| CliError::Usage(format!("--embed expects name=path, got {spec:?}")))?;
    Ok(Attribute::load(name, Path::new(path))?)
}

pub fn analyze(a: &AnalyzeArgs) -> CliResult<()> {
    let (header, params) = load_checkpoint::<f64>(&a.ckpt)?;
    let mut utts = load_corpus(&a.corpus)?;
    let phone_dir = a.phones.as_deref().unwrap_or(&a.corpus);
    for u in utts.iter_mut() {
        let path = phone_dir.join(format!("{}.phn", u.id));
        match (&u.phones, a.phones.is_some()) {
            (Some(_), false) => {}
            _ => u.phones = Some(read_phones(&path)?),
        }
    }
    let attributes = a.embed.iter().map(|s| parse_embed(s)).collect::<CliResult<Vec<_>>>()?;
    if a.k.is_empty() || a.k.contains(&0) {
        return Err(CliError::Usage("--k needs positive cluster counts".into()));
    }
    let opts = ReportOptions {
        ks: a.k.clone(),
        seed: resolve_seed(a.seed, 0)?,
        ..ReportOptions::default()
    };
    let encoder = Encoder::new(&header.encoder)?;
    let report = layerwise_report(&encoder, &params, &utts, &attributes, &opts)?;
    let dir = parent_dir(&a.out);
    create_dir(&dir)?;
    report.write_csv(&a.out)?;
    let mut m = ManifestBuilder::new(&dir, "analyze").seed(opts.seed).config(format!("{opts:?}"));
    m.add(&a.out)?;
    m.write()?;
    println!("wrote {} layer rows to {}", report.rows.len(), a.out.display());
    Ok(())
}

pub fn superb(a: &SuperbArgs) -> CliResult<()> {
    let metrics = parse_metrics(&read_text(&a.metrics)?)?;
    let anchors = match std::fs::read_to_string(&a.anchors) {
        Ok(text) => ScoreAnchors::parse(&text)?,
        Err(e) => {
            return Err(Error::Anchor(format!("cannot read anchors {}: {e}", a.anchors.display())).into())
        }
    };
    let score = superb_score(&metrics, &anchors)?;
    println!("{score:.4}");
    if let Some(out) = &a.out {
        let dir = parent_dir(out);
        create_dir(&dir)?;
        write_text(out, &format!("{score:.6}\n"))?;
        let mut m = ManifestBuilder::new(&dir, "superb-score");
        m.add(out)?;
        m.write()?;
    }
    Ok(())
}

/// A config file path, or `preset:<kind>:<size>`.
fn load_encoder_config(spec: &str) -> CliResult<(String, EncoderConfig)> {
    if let Some(rest) = spec.strip_prefix("preset:") {
        let (kind, size) = rest
            .split_once(':')
            .ok_or_else(|| CliError::Usage(format!("preset expects preset:<kind>:<size>, got {spec:?}")))?;
        let cfg = EncoderConfig::preset(BlockKind::parse(kind)?, SizePreset::parse(size)?);
        return Ok((format!("{kind}_{size}"), cfg));
    }
    let path = Path::new(spec);
    let cfg = EncoderConfig::from_text(&read_text(path)?).map_err(|e| match e {
        Error::Config(msg) => Error::format(path, msg),
        other => other,
    })?;
    let name = path.file_stem().map_or_else(|| spec.to_string(), |s| s.to_string_lossy().into_owned());
    Ok((name, cfg))
}

fn run_sweep<T: Scalar>(models: &[(String, EncoderConfig)], opts: &SweepOptions) -> CliResult<Vec<sslab_core::bench::SweepRow>> {
    Ok(sweep::<T>(models, opts)?)
}

pub fn bench(a: &BenchArgs) -> CliResult<()> {
    let models = a.configs.iter().map(|s| load_encoder_config(s)).collect::<CliResult<Vec<_>>>()?;
    if a.lengths.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(CliError::Usage("--lengths must be positive seconds".into()));
    }
    let opts = SweepOptions {
        lengths: a.lengths.clone(),
        budget_bytes: a.budget_bytes.unwrap_or(u64::MAX),
        runs: a.runs,
        seed: resolve_seed(a.seed, 0)?,
    };
    let rows = match a.dtype.as_str() {
        "f64" => run_sweep::<f64>(&models, &opts)?,
        "f32" => run_sweep::<f32>(&models, &opts)?,
        other => return Err(CliError::Usage(format!("--dtype must be f64 or f32, got {other:?}"))),
    };
    let dir = parent_dir(&a.out);
    create_dir(&dir)?;
    write_sweep_csv(&a.out, &rows)?;
    let mut m = ManifestBuilder::new(&dir, "bench").seed(opts.seed).config(
        models
            .iter()
            .map(|(n, c)| format!("# {n}\n{}", c.to_text()))
            .collect::<Vec<_>>()
            .join("\n"),
    );
    m.add(&a.out)?;
    if let Some(plot) = &a.plot {
        write_svg(plot, &rows)?;
        m.add(plot)?;
    }
    m.write()?;
    for r in &rows {
        println!(
            "{:<16} {:>6} s  {:>10.3} GMACs/s  rtf {}  est {:.3} GB{}",
            r.model,
            r.seconds,
            r.macs_per_sec / 1e9,
            r.rtf_mean.map_or("-".into(), |v| format!("{v:.4}")),
            r.est_peak_bytes as f64 / 1e9,
            if r.predicted_oom { "  predicted OOM" } else { "" }
        );
    }
    Ok(())
}

/// Either `id`-keyed rows of a CSV with a `wer` column, or bare numbers.
fn read_scores(path: &Path) -> CliResult<Vec<(Option<String>, f64)>> {
    let text = read_text(path)?;
    let first = text.lines().next().unwrap_or_default();
    if first.split(',').any(|h| h.trim() == "wer") {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let headers = r.headers().map_err(|e| csv_err(path, e))?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let (id, wer) = (col("id"), col("wer").expect("checked above"));
        return r
            .records()
            .map(|rec| {
                let rec = rec.map_err(|e| csv_err(path, e))?;
                let v = rec[wer]
                    .parse()
                    .map_err(|_| Error::format(path, format!("bad wer value {:?}", &rec[wer])))?;
                Ok((id.map(|i| rec[i].to_string()), v))
            })
            .collect();
    }
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.parse()
                .map(|v| (None, v))
                .map_err(|_| Error::format(path, format!("bad number {l:?}")).into())
        })
        .collect()
}

pub fn ttest(a: &TtestArgs) -> CliResult<()> {
    let xs = read_scores(&a.a)?;
    let mut ys = read_scores(&a.b)?;
    if xs.iter().all(|x| x.0.is_some()) && ys.iter().all(|y| y.0.is_some()) {
        let lookup: std::collections::HashMap<String, f64> = ys.drain(..).map(|(k, v)| (k.unwrap_or_default(), v)).collect();
        ys = xs
            .iter()
            .map(|(k, _)| {
                let k = k.clone().unwrap_or_default();
                lookup
                    .get(&k)
                    .map(|&v| (Some(k.clone()), v))
                    .ok_or_else(|| Error::Missing(format!("{} has no item {k}", a.b.display())).into())
            })
            .collect::<CliResult<_>>()?;
    } else if xs.len() != ys.len() {
        return Err(Error::SampleSize(format!("{} vs {} scores", xs.len(), ys.len())).into());
    }
    let x: Vec<f64> = xs.iter().map(|v| v.1).collect();
    let y: Vec<f64> = ys.iter().map(|v| v.1).collect();
    let t = paired_t_test(&x, &y)?;
    let text = format!("t,p,dof\n{:.6},{:.6e},{}\n", t.t, t.p, t.dof);
    print!("{text}");
    if let Some(out) = &a.out {
        let dir = parent_dir(out);
        create_dir(&dir)?;
        write_text(out, &text)?;
        let mut m = ManifestBuilder::new(&dir, "ttest");
        m.add(out)?;
        m.write()?;
    }
    Ok(())
}
