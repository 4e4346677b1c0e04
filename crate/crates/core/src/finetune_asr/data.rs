//! Transcribed audio: directory loading, character vocabulary and
//! document grouping.

use std::collections::BTreeSet;
use std::path::Path;

use rand::Rng;

use crate::blocks::config::SAMPLE_RATE;
use crate::corpus::{document_of, read_wav, Utterance};
use crate::error::{Error, Result};

/// Longest document kept for document-level training, in seconds.
pub const MAX_DOCUMENT_SECONDS: f64 = 1200.0;

#[derive(Clone, Debug, PartialEq)]
pub struct AsrItem {
    pub id: String,
    pub wave: Vec<f32>,
    pub text: String,
}

impl AsrItem {
    pub fn seconds(&self) -> f64 {
        self.wave.len() as f64 / SAMPLE_RATE as f64
    }
}

impl TryFrom<&Utterance> for AsrItem {
    type Error = Error;

    fn try_from(u: &Utterance) -> Result<Self> {
        Ok(Self {
            id: u.id.clone(),
            wave: u.wave.clone(),
            text: u
                .transcript
                .clone()
                .ok_or_else(|| Error::Missing(format!("transcript for {}", u.id)))?,
        })
    }
}

/// Reads every `<id>.wav` with a matching `<id>.txt`, sorted by id.
pub fn load_asr_dataset(dir: &Path) -> Result<Vec<AsrItem>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut ids = BTreeSet::new();
    for e in entries {
        let path = e.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "wav") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.insert(stem.to_string());
            }
        }
    }
    if ids.is_empty() {
        return Err(Error::Missing(format!("no .wav files in {}", dir.display())));
    }
    ids.into_iter()
        .map(|id| {
            let txt = dir.join(format!("{id}.txt"));
            if !txt.exists() {
                return Err(Error::Missing(format!("transcript {}", txt.display())));
            }
            let text = std::fs::read_to_string(&txt).map_err(|e| Error::io(&txt, e))?;
            Ok(AsrItem {
                wave: read_wav(&dir.join(format!("{id}.wav")))?,
                text: text.trim().to_string(),
                id,
            })
        })
        .collect()
}

/// Character vocabulary; token `i + 1` is `symbols[i]`, 0 is blank.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    pub symbols: Vec<char>,
}

impl Vocab {
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<char> = texts.into_iter().flat_map(str::chars).collect();
        Self {
            symbols: set.into_iter().collect(),
        }
    }

    /// Output classes including blank.
    pub fn n_classes(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| {
                self.symbols
                    .binary_search(&c)
                    .map(|i| i + 1)
                    .map_err(|_| Error::Domain(format!("symbol {c:?} not in vocabulary")))
            })
            .collect()
    }

    pub fn decode(&self, tokens: &[usize]) -> String {
        tokens
            .iter()
            .filter_map(|&t| t.checked_sub(1).and_then(|i| self.symbols.get(i)))
            .collect()
    }

    pub fn to_text(&self) -> String {
        self.symbols.iter().collect()
    }

    pub fn parse(s: &str) -> Result<Self> {
        let symbols: Vec<char> = s.chars().collect();
        if symbols.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("vocabulary {s:?} is not sorted and unique")));
        }
        Ok(Self { symbols })
    }
}

/// All utterances sharing an id prefix, in id order.
#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub id: String,
    pub items: Vec<AsrItem>,
}

impl Document {
    pub fn seconds(&self) -> f64 {
        self.items.iter().map(|i| i.wave.len()).sum::<usize>() as f64 / SAMPLE_RATE as f64
    }

    /// The whole document as one item.
    pub fn concatenated(&self) -> AsrItem {
        concat(&self.id, &self.items)
    }

    /// A contiguous run of utterances starting at a random one and
    /// extending while the total stays within `seconds` (at least one).
    pub fn crop(&self, seconds: f64, rng: &mut impl Rng) -> AsrItem {
        let start = rng.random_range(0..self.items.len());
        let mut end = start + 1;
        let mut total = self.items[start].seconds();
        while end < self.items.len() && total + self.items[end].seconds() <= seconds {
            total += self.items[end].seconds();
            end += 1;
        }
        concat(&self.id, &self.items[start..end])
    }
}

fn concat(id: &str, items: &[AsrItem]) -> AsrItem {
    AsrItem {
        id: id.to_string(),
        wave: items.iter().flat_map(|i| i.wave.iter().copied()).collect(),
        text: items.iter().map(|i| i.text.as_str()).collect(),
    }
}

/// Groups items by the id prefix before the first hyphen.
pub fn group_documents(items: &[AsrItem]) -> Vec<Document> {
    let mut sorted: Vec<&AsrItem> = items.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut docs: Vec<Document> = Vec::new();
    for item in sorted {
        let doc = document_of(&item.id);
        match docs.last_mut() {
            Some(d) if d.id == doc => d.items.push(item.clone()),
            _ => docs.push(Document {
                id: doc.to_string(),
                items: vec![item.clone()],
            }),
        }
    }
    docs
}
