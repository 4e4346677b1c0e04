//! Synthetic phone-labelled speech corpus and the on-disk corpus layout.
//!
//! Directory layout, one entry per utterance id:
//!
//! ```text
//! <id>.wav   16-bit PCM mono, 16 kHz
//! <id>.phn   one phone id per line, one line per encoder frame (20 ms hop)
//! <id>.spk   speaker id
//! <id>.txt   transcript, one character per phone segment
//! ```
//!
//! Ids have the form `d<doc>-u<index>`; the part before the first hyphen
//! names the document.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::blocks::config::{FrontendSpec, SAMPLE_RATE};
use crate::error::{Error, Result};

const HOP: usize = 320;
const RF: usize = 400;

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub wave: Vec<f32>,
    /// Frame-level phone ids.
    pub phones: Option<Vec<usize>>,
    pub speaker: Option<usize>,
    pub transcript: Option<String>,
}

impl Utterance {
    pub fn document(&self) -> &str {
        document_of(&self.id)
    }

    pub fn seconds(&self) -> f64 {
        self.wave.len() as f64 / SAMPLE_RATE as f64
    }
}

pub fn document_of(id: &str) -> &str {
    id.split('-').next().unwrap_or(id)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusOptions {
    pub n_utts: usize,
    pub n_phones: usize,
    pub n_speakers: usize,
    pub seed: u64,
    pub utts_per_doc: usize,
    /// Inclusive range of phone segments per utterance.
    pub segments: (usize, usize),
    /// Inclusive range of frames per phone segment.
    pub segment_frames: (usize, usize),
}

impl CorpusOptions {
    pub fn new(n_utts: usize, n_phones: usize, n_speakers: usize, seed: u64) -> Self {
        Self {
            n_utts,
            n_phones,
            n_speakers,
            seed,
            utts_per_doc: 10,
            segments: (12, 30),
            segment_frames: (3, 7),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_phones < 2 || self.n_phones > 26 {
            return Err(Error::Config(format!(
                "n_phones must be in 2..=26, got {}",
                self.n_phones
            )));
        }
        if self.n_speakers == 0 || self.utts_per_doc == 0 {
            return Err(Error::Config("n_speakers and utts_per_doc must be >= 1".into()));
        }
        if self.segments.0 == 0
            || self.segments.0 > self.segments.1
            || self.segment_frames.0 == 0
            || self.segment_frames.0 > self.segment_frames.1
        {
            return Err(Error::Config("segment ranges must be non-empty and positive".into()));
        }
        Ok(())
    }
}

/// Character used for phone `p` in transcripts.
pub fn phone_symbol(p: usize) -> char {
    (b'a' + p as u8) as char
}

pub fn symbol_phone(c: char) -> Option<usize> {
    c.is_ascii_lowercase().then(|| (c as u8 - b'a') as usize)
}

struct PhoneModel {
    /// Three formant frequencies (Hz) and amplitudes per phone.
    formants: Vec<[(f64, f64); 3]>,
    /// Each phone's preferred successors.
    successors: Vec<Vec<usize>>,
}

impl PhoneModel {
    fn new(n: usize, rng: &mut impl Rng) -> Self {
        let formants = (0..n)
            .map(|p| {
                // spread first formants evenly so phones stay separable
                let f1 = 250.0 + 650.0 * (p as f64 + rng.random::<f64>() * 0.5) / n as f64;
                let f2 = 900.0 + 1800.0 * (((p * 7) % n) as f64 + rng.random::<f64>() * 0.5) / n as f64;
                let f3 = 2600.0 + 1200.0 * rng.random::<f64>();
                [(f1, 1.0), (f2, 0.6 + 0.3 * rng.random::<f64>()), (f3, 0.25)]
            })
            .collect();
        let successors = (0..n)
            .map(|p| {
                let mut s: Vec<usize> = Vec::new();
                while s.len() < 2.min(n - 1) {
                    let q = rng.random_range(0..n);
                    if q != p && !s.contains(&q) {
                        s.push(q);
                    }
                }
                s
            })
            .collect();
        Self {
            formants,
            successors,
        }
    }

    fn next(&self, prev: Option<usize>, rng: &mut impl Rng) -> usize {
        let n = self.formants.len();
        match prev {
            Some(p) if rng.random::<f64>() < 0.8 => {
                let s = &self.successors[p];
                s[rng.random_range(0..s.len())]
            }
            Some(p) => {
                let q = rng.random_range(0..n - 1);
                if q >= p {
                    q + 1
                } else {
                    q
                }
            }
            None => rng.random_range(0..n),
        }
    }
}

struct Speaker {
    /// Formant scaling.
    warp: f64,
    pitch: f64,
    /// One-pole low-pass coefficient.
    tilt: f64,
    gain: f64,
}

/// Generates the corpus in memory.
pub fn synthesize(opts: &CorpusOptions) -> Result<Vec<Utterance>> {
    opts.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let model = PhoneModel::new(opts.n_phones, &mut rng);
    let speakers: Vec<Speaker> = (0..opts.n_speakers)
        .map(|_| Speaker {
            warp: 0.94 + 0.12 * rng.random::<f64>(),
            pitch: 90.0 + 120.0 * rng.random::<f64>(),
            tilt: 0.1 + 0.4 * rng.random::<f64>(),
            gain: 0.2 + 0.1 * rng.random::<f64>(),
        })
        .collect();
    let noise = Normal::new(0.0, 0.004).expect("valid normal");
    let mut out = Vec::with_capacity(opts.n_utts);
    for u in 0..opts.n_utts {
        let doc = u / opts.utts_per_doc;
        let spk_id = doc % opts.n_speakers;
        let spk = &speakers[spk_id];
        let n_seg = rng.random_range(opts.segments.0..=opts.segments.1);
        let mut seq = Vec::with_capacity(n_seg);
        let mut prev = None;
        for _ in 0..n_seg {
            let p = model.next(prev, &mut rng);
            let frames = rng.random_range(opts.segment_frames.0..=opts.segment_frames.1);
            seq.push((p, frames));
            prev = Some(p);
        }
        let total: usize = seq.iter().map(|s| s.1).sum::<usize>() * HOP + (RF - HOP);
        let mut wave = Vec::with_capacity(total);
        let mut sample_phone = Vec::with_capacity(total);
        for &(p, frames) in &seq {
            let len = frames * HOP;
            let phases: [f64; 3] = [rng.random(), rng.random(), rng.random()];
            for i in 0..len {
                let t = (wave.len() + i) as f64 / SAMPLE_RATE as f64;
                // glottal-like amplitude modulation at the speaker's pitch
                let voice = 0.6 + 0.4 * (2.0 * PI * spk.pitch * t).cos();
                let mut v = 0.0;
                for (k, &(f, a)) in model.formants[p].iter().enumerate() {
                    v += a * (2.0 * PI * (f * spk.warp * t + phases[k])).sin();
                }
                let ramp = ((i.min(len - 1 - i) as f64) / 40.0).min(1.0);
                wave.push(v * voice * ramp);
                sample_phone.push(p);
            }
        }
        // tail so the last frame's window is complete
        let last = seq.last().expect("n_seg >= 1").0;
        for _ in 0..RF - HOP {
            wave.push(0.0);
            sample_phone.push(last);
        }
        let mut y = 0.0;
        let wave: Vec<f32> = wave
            .iter()
            .map(|&x| {
                y = (1.0 - spk.tilt) * x + spk.tilt * y;
                (spk.gain * y + noise.sample(&mut rng)).clamp(-1.0, 1.0) as f32
            })
            .collect();
        let frames = FrontendSpec::standard(1).frames(wave.len())?;
        let phones = (0..frames).map(|t| sample_phone[t * HOP + RF / 2]).collect();
        let transcript = seq.iter().map(|&(p, _)| phone_symbol(p)).collect();
        out.push(Utterance {
            id: format!("d{doc:03}-u{u:04}"),
            wave,
            phones: Some(phones),
            speaker: Some(spk_id),
            transcript: Some(transcript),
        });
    }
    Ok(out)
}

pub fn write_wav(path: &Path, wave: &[f32]) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE as u32,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let io = |e: hound::Error| match e {
        hound::Error::IoError(e) => Error::io(path, e),
        other => Error::format(path, other.to_string()),
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(io)?;
    for &s in wave {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v).map_err(io)?;
    }
    w.finalize().map_err(io)
}

/// Reads a 16 kHz mono WAV as samples in `[-1, 1)`.
pub fn read_wav(path: &Path) -> Result<Vec<f32>> {
    let io = |e: hound::Error| match e {
        hound::Error::IoError(e) => Error::io(path, e),
        other => Error::format(path, other.to_string()),
    };
    let mut r = hound::WavReader::open(path).map_err(io)?;
    let spec = r.spec();
    if spec.channels != 1 || spec.sample_rate != SAMPLE_RATE as u32 {
        return Err(Error::format(
            path,
            format!(
                "expected mono {SAMPLE_RATE} Hz, got {} channels at {} Hz",
                spec.channels, spec.sample_rate
            ),
        ));
    }
    match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => r
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0).map_err(io))
            .collect(),
        (hound::SampleFormat::Float, 32) => r.samples::<f32>().map(|s| s.map_err(io)).collect(),
        (f, b) => Err(Error::format(path, format!("unsupported sample format {f:?}/{b} bits"))),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes every utterance (and whichever labels it carries) into `dir`.
pub fn write_corpus(dir: &Path, utts: &[Utterance]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for u in utts {
        let base = dir.join(&u.id);
        let wav = base.with_extension("wav");
        write_wav(&wav, &u.wave)?;
        written.push(wav);
        if let Some(p) = &u.phones {
            let path = base.with_extension("phn");
            let text: String = p.iter().map(|v| format!("{v}\n")).collect();
            write_text(&path, &text)?;
            written.push(path);
        }
        if let Some(s) = u.speaker {
            let path = base.with_extension("spk");
            write_text(&path, &format!("{s}\n"))?;
            written.push(path);
        }
        if let Some(t) = &u.transcript {
            let path = base.with_extension("txt");
            write_text(&path, &format!("{t}\n"))?;
            written.push(path);
        }
    }
    Ok(written)
}

fn read_optional(path: &Path) -> Result<Option<String>> {
    match fs::read_to_string(path) {
        Ok(s) => Ok(Some(s)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn parse_usize(path: &Path, s: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::format(path, format!("expected a non-negative integer, got `{}`", s.trim())))
}

fn parse_phones(path: &Path, text: &str) -> Result<Vec<usize>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| parse_usize(path, l))
        .collect()
}

/// Frame-level phone ids from a `.phn` file.
pub fn read_phones(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_phones(path, &text)
}

/// Loads every `<id>.wav` in `dir` (sorted by id) with its optional labels.
pub fn load_corpus(dir: &Path) -> Result<Vec<Utterance>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut ids = Vec::new();
    for e in entries {
        let path = e.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "wav") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    if ids.is_empty() {
        return Err(Error::Missing(format!("no .wav files in {}", dir.display())));
    }
    ids.into_iter()
        .map(|id| {
            let base = dir.join(&id);
            let wave = read_wav(&base.with_extension("wav"))?;
            let phn = base.with_extension("phn");
            let phones = read_optional(&phn)?.map(|s| parse_phones(&phn, &s)).transpose()?;
            let spk = base.with_extension("spk");
            let speaker = read_optional(&spk)?.map(|s| parse_usize(&spk, &s)).transpose()?;
            let transcript = read_optional(&base.with_extension("txt"))?.map(|s| s.trim().to_string());
            Ok(Utterance {
                id,
                wave,
                phones,
                speaker,
                transcript,
            })
        })
        .collect()
}
