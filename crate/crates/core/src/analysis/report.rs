//! Layer-wise report: phone purity of k-means clusters, CCA with phone
//! one-hots and CCA with utterance-level attribute embeddings.

use std::collections::BTreeMap;
use std::path::Path;

use crate::analysis::cca::cca_similarity;
use crate::analysis::kmeans::{kmeans, KMeansOptions};
use crate::analysis::labels::{one_hot, phone_purity, pool_phone_level, pool_utterance, FrameLabels};
use crate::blocks::encoder::{Encoder, LayerStates};
use crate::blocks::params::ParamStore;
use crate::corpus::Utterance;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

pub const DEFAULT_KS: [usize; 3] = [100, 500, 1000];

/// One embedding vector per utterance id.
#[derive(Clone, Debug, PartialEq)]
pub struct Attribute {
    pub name: String,
    pub embeddings: BTreeMap<String, Vec<f64>>,
}

impl Attribute {
    /// Parses lines of `<id> <v1> <v2> ...`; blank lines and lines starting
    /// with `#` are skipped. Every vector must have the same length.
    pub fn parse(name: &str, text: &str) -> Result<Self> {
        let mut embeddings = BTreeMap::new();
        let mut dim = None;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split_whitespace();
            let id = fields.next().unwrap_or_default().to_string();
            let v = fields
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| Error::Config(format!("{name} line {}: bad number {f:?}", n + 1)))
                })
                .collect::<Result<Vec<f64>>>()?;
            if v.is_empty() || *dim.get_or_insert(v.len()) != v.len() {
                return Err(Error::Config(format!(
                    "{name} line {}: expected {} values, got {}",
                    n + 1,
                    dim.unwrap_or(1),
                    v.len()
                )));
            }
            if embeddings.insert(id.clone(), v).is_some() {
                return Err(Error::Config(format!("{name}: duplicate id {id}")));
            }
        }
        if embeddings.is_empty() {
            return Err(Error::Missing(format!("attribute {name} has no embeddings")));
        }
        Ok(Self {
            name: name.to_string(),
            embeddings,
        })
    }

    pub fn load(name: &str, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(name, &text)
    }

    /// One-hot embeddings of integer labels.
    pub fn from_labels<'a>(name: &str, labels: impl IntoIterator<Item = (&'a str, usize)>) -> Self {
        let labels: Vec<(&str, usize)> = labels.into_iter().collect();
        let n = labels.iter().map(|&(_, l)| l + 1).max().unwrap_or(0);
        let embeddings = labels
            .into_iter()
            .map(|(id, l)| {
                let mut v = vec![0.0; n];
                v[l] = 1.0;
                (id.to_string(), v)
            })
            .collect();
        Self {
            name: name.to_string(),
            embeddings,
        }
    }

    fn get(&self, id: &str) -> Result<&[f64]> {
        self.embeddings
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Missing(format!("attribute {} has no entry for {id}", self.name)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportOptions {
    pub ks: Vec<usize>,
    pub seed: u64,
    pub max_iter: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            ks: DEFAULT_KS.to_vec(),
            seed: 0,
            max_iter: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerRow {
    /// 0 is the frontend output.
    pub layer: usize,
    /// One value per entry of `LayerReport::ks`.
    pub purity: Vec<f64>,
    pub cca_phone: f64,
    /// One value per entry of `LayerReport::attributes`.
    pub cca_attr: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerReport {
    pub ks: Vec<usize>,
    pub attributes: Vec<String>,
    pub rows: Vec<LayerRow>,
}

impl LayerReport {
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["layer".to_string()];
        h.extend(self.ks.iter().map(|k| format!("purity@{k}")));
        h.push("cca_phone".into());
        h.extend(self.attributes.iter().map(|a| format!("cca_{a}")));
        h
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        w.write_record(self.header()).map_err(|e| Error::format(path, e.to_string()))?;
        for r in &self.rows {
            let mut rec = vec![r.layer.to_string()];
            rec.extend(r.purity.iter().map(|v| format!("{v:.6}")));
            rec.push(format!("{:.6}", r.cca_phone));
            rec.extend(r.cca_attr.iter().map(|v| format!("{v:.6}")));
            w.write_record(rec).map_err(|e| Error::format(path, e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Layer with the highest purity at `ks[k_index]`; the earliest wins ties.
    pub fn best_layer(&self, k_index: usize) -> Option<&LayerRow> {
        self.rows.iter().fold(None, |best: Option<&LayerRow>, r| match best {
            Some(b) if b.purity[k_index] >= r.purity[k_index] => Some(b),
            _ => Some(r),
        })
    }
}

/// Encoder outputs of one utterance with its frame-level phones.
#[derive(Clone, Debug)]
pub struct AnalysisItem<T> {
    pub id: String,
    pub states: LayerStates<T>,
    pub phones: Vec<usize>,
}

/// Runs the encoder over every utterance; each needs a phone alignment.
pub fn encode_corpus<T: Scalar>(
    encoder: &Encoder,
    params: &ParamStore<T>,
    utts: &[Utterance],
) -> Result<Vec<AnalysisItem<T>>> {
    utts.iter()
        .map(|u| {
            let phones = u
                .phones
                .clone()
                .ok_or_else(|| Error::Missing(format!("phone alignment for {}", u.id)))?;
            let wave: Vec<T> = u.wave.iter().map(|&s| T::lit(s as f64)).collect();
            let states = encoder.forward(params, &wave)?;
            FrameLabels::phones(phones.clone()).check_len(states.frames())?;
            Ok(AnalysisItem {
                id: u.id.clone(),
                states,
                phones,
            })
        })
        .collect()
}

pub fn layerwise_report<T: Scalar>(
    encoder: &Encoder,
    params: &ParamStore<T>,
    utts: &[Utterance],
    attributes: &[Attribute],
    opts: &ReportOptions,
) -> Result<LayerReport> {
    report_from_states(&encode_corpus(encoder, params, utts)?, attributes, opts)
}

fn stack<T: Scalar>(parts: &[Tensor<T>]) -> Result<Tensor<f64>> {
    let d = parts.first().ok_or_else(|| Error::Missing("no utterances".into()))?.last_dim();
    let mut data = Vec::new();
    for p in parts {
        if p.last_dim() != d {
            return Err(Error::dim(format!("feature width {} != {d}", p.last_dim())));
        }
        data.extend(p.data().iter().map(|v| v.to_f64_lossy()));
    }
    Tensor::new(&[data.len() / d.max(1), d], data)
}

pub fn report_from_states<T: Scalar>(
    items: &[AnalysisItem<T>],
    attributes: &[Attribute],
    opts: &ReportOptions,
) -> Result<LayerReport> {
    let first = items.first().ok_or_else(|| Error::Missing("no utterances to analyze".into()))?;
    let n_layers = first.states.len();
    if items.iter().any(|it| it.states.len() != n_layers) {
        return Err(Error::dim("utterances have different layer counts"));
    }
    for it in items {
        FrameLabels::phones(it.phones.clone()).check_len(it.states.frames())?;
    }
    let phones = FrameLabels::phones(items.iter().flat_map(|it| it.phones.iter().copied()).collect());
    let n_phones = phones.labels.iter().max().map_or(0, |m| m + 1);
    let attr_rows = attributes
        .iter()
        .map(|a| {
            let rows = items.iter().map(|it| a.get(&it.id).map(<[f64]>::to_vec)).collect::<Result<Vec<_>>>()?;
            let dim = rows[0].len();
            Tensor::new(&[rows.len(), dim], rows.concat())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(n_layers);
    for layer in 0..n_layers {
        let feats: Vec<Tensor<T>> = items.iter().map(|it| it.states.layer(layer).cloned()).collect::<Result<_>>()?;
        let frames = stack(&feats)?;
        let purity = opts
            .ks
            .iter()
            .map(|&k| {
                let km = kmeans(
                    &frames,
                    &KMeansOptions {
                        max_iter: opts.max_iter,
                        ..KMeansOptions::new(k, opts.seed)
                    },
                )?;
                phone_purity(&FrameLabels::clusters(km.assignments), &phones)
            })
            .collect::<Result<Vec<f64>>>()?;
        let mut pooled = Vec::new();
        let mut segment_phones = Vec::new();
        for (f, it) in feats.iter().zip(items) {
            let (p, ids) = pool_phone_level(f, &FrameLabels::phones(it.phones.clone()))?;
            pooled.push(p);
            segment_phones.extend(ids);
        }
        let cca_phone = cca_similarity(&stack(&pooled)?, &one_hot::<f64>(&segment_phones, n_phones)?, None)?;
        let utt = stack(&feats.iter().map(pool_utterance).collect::<Result<Vec<_>>>()?)?;
        let cca_attr = attr_rows
            .iter()
            .map(|y| cca_similarity(&utt, y, None))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(LayerRow {
            layer,
            purity,
            cca_phone,
            cca_attr,
        });
    }
    Ok(LayerReport {
        ks: opts.ks.clone(),
        attributes: attributes.iter().map(|a| a.name.clone()).collect(),
        rows,
    })
}
