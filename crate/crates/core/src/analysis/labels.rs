//! Frame labels, purity, pooling and one-hot encoding.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelKind {
    Cluster,
    Phone,
}

/// Integer labels at the encoder frame rate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameLabels {
    pub labels: Vec<usize>,
    pub kind: LabelKind,
}

impl FrameLabels {
    pub fn new(labels: Vec<usize>, kind: LabelKind) -> Self {
        Self { labels, kind }
    }

    pub fn clusters(labels: Vec<usize>) -> Self {
        Self::new(labels, LabelKind::Cluster)
    }

    pub fn phones(labels: Vec<usize>) -> Self {
        Self::new(labels, LabelKind::Phone)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Checks that the labels annotate exactly `frames` frames.
    pub fn check_len(&self, frames: usize) -> Result<()> {
        if self.labels.len() != frames {
            return Err(Error::dim(format!(
                "{} labels for {frames} frames",
                self.labels.len()
            )));
        }
        Ok(())
    }
}

/// Frame-weighted accuracy of mapping each cluster to its majority phone.
pub fn phone_purity(clusters: &FrameLabels, phones: &FrameLabels) -> Result<f64> {
    phones.check_len(clusters.len())?;
    if clusters.is_empty() {
        return Err(Error::InvalidLength("purity of an empty label sequence".into()));
    }
    let mut table: HashMap<usize, HashMap<usize, usize>> = HashMap::new();
    for (&c, &p) in clusters.labels.iter().zip(&phones.labels) {
        *table.entry(c).or_default().entry(p).or_default() += 1;
    }
    let hits: usize = table
        .values()
        .map(|row| row.values().copied().max().unwrap_or(0))
        .sum();
    Ok(hits as f64 / clusters.len() as f64)
}

/// Mean vector of every contiguous run of equal phone labels.
pub fn pool_phone_level<T: Scalar>(
    features: &Tensor<T>,
    phones: &FrameLabels,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let (len, d) = features.dims2()?;
    phones.check_len(len)?;
    let mut rows = Vec::new();
    let mut ids = Vec::new();
    let mut start = 0;
    for t in 1..=len {
        if t == len || phones.labels[t] != phones.labels[start] {
            let seg = features.slice_rows(start, t)?;
            rows.extend_from_slice(seg.mean_rows()?.data());
            ids.push(phones.labels[start]);
            start = t;
        }
    }
    Ok((Tensor::new(&[ids.len(), d], rows)?, ids))
}

/// Time mean of `[L x d]` features.
pub fn pool_utterance<T: Scalar>(features: &Tensor<T>) -> Result<Tensor<T>> {
    if features.rows() == 0 {
        return Err(Error::InvalidLength("cannot pool an empty sequence".into()));
    }
    features.mean_rows()
}

pub fn one_hot<T: Scalar>(labels: &[usize], n_classes: usize) -> Result<Tensor<T>> {
    let mut out = Tensor::zeros(&[labels.len(), n_classes]);
    for (i, &l) in labels.iter().enumerate() {
        if l >= n_classes {
            return Err(Error::LabelOutOfRange {
                label: l,
                n_classes,
            });
        }
        out.row_mut(i)[l] = T::one();
    }
    Ok(out)
}
