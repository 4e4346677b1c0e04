//! CTC loss (log-space forward/backward), greedy decoding and token error
//! rate. Blank is class 0.

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

pub const BLANK: usize = 0;

#[derive(Clone, Debug)]
pub struct CtcOutput<T> {
    pub loss: T,
    /// Gradient of the loss with respect to the log-probability table.
    pub grad: Tensor<T>,
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Fewest frames able to emit `labels`: one per label plus a blank
/// between each pair of equal neighbours.
pub fn min_frames(labels: &[usize]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

/// `−log p(labels | log_probs)` for `log_probs: [T x (V+1)]`.
pub fn ctc_loss<T: Scalar>(log_probs: &Tensor<T>, labels: &[usize]) -> Result<CtcOutput<T>> {
    let (frames, classes) = log_probs.dims2()?;
    if let Some(&bad) = labels.iter().find(|&&l| l == BLANK || l >= classes) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            n_classes: classes,
        });
    }
    let required = min_frames(labels);
    if frames < required || frames == 0 {
        return Err(Error::InfeasibleAlignment {
            label_len: labels.len(),
            required: required.max(1),
            frames,
        });
    }
    // extended sequence: blank, l1, blank, l2, ..., blank
    let s_len = 2 * labels.len() + 1;
    let ext = |s: usize| if s.is_multiple_of(2) { BLANK } else { labels[s / 2] };
    let skip_ok = |s: usize| s >= 2 && s % 2 == 1 && ext(s) != ext(s - 2);
    let lp = |t: usize, k: usize| log_probs.at2(t, k).to_f64_lossy();
    let ninf = f64::NEG_INFINITY;

    let mut alpha = vec![ninf; frames * s_len];
    alpha[0] = lp(0, ext(0));
    if s_len > 1 {
        alpha[1] = lp(0, ext(1));
    }
    for t in 1..frames {
        for s in 0..s_len {
            let prev = &alpha[(t - 1) * s_len..t * s_len];
            let mut a = prev[s];
            if s >= 1 {
                a = log_add(a, prev[s - 1]);
            }
            if skip_ok(s) {
                a = log_add(a, prev[s - 2]);
            }
            alpha[t * s_len + s] = a + lp(t, ext(s));
        }
    }
    let last = &alpha[(frames - 1) * s_len..];
    let log_p = if s_len > 1 {
        log_add(last[s_len - 1], last[s_len - 2])
    } else {
        last[0]
    };
    if !log_p.is_finite() {
        return Err(Error::NonFinite {
            step: 0,
            context: "ctc log-likelihood".into(),
        });
    }

    let mut beta = vec![ninf; frames * s_len];
    let base = (frames - 1) * s_len;
    beta[base + s_len - 1] = lp(frames - 1, ext(s_len - 1));
    if s_len > 1 {
        beta[base + s_len - 2] = lp(frames - 1, ext(s_len - 2));
    }
    for t in (0..frames - 1).rev() {
        for s in 0..s_len {
            let next = &beta[(t + 1) * s_len..(t + 2) * s_len];
            let mut b = next[s];
            if s + 1 < s_len {
                b = log_add(b, next[s + 1]);
            }
            if s + 2 < s_len && skip_ok(s + 2) {
                b = log_add(b, next[s + 2]);
            }
            beta[t * s_len + s] = b + lp(t, ext(s));
        }
    }

    // occupancy γ(t,k) = Σ_{s: ext(s)=k} α β / (p · y_t(k)); dL/dlp = −γ
    let mut grad = vec![T::zero(); frames * classes];
    for t in 0..frames {
        let mut acc = vec![ninf; classes];
        for s in 0..s_len {
            let k = ext(s);
            acc[k] = log_add(acc[k], alpha[t * s_len + s] + beta[t * s_len + s]);
        }
        for (k, &a) in acc.iter().enumerate() {
            if a > ninf {
                grad[t * classes + k] = T::lit(-(a - lp(t, k) - log_p).exp());
            }
        }
    }
    Ok(CtcOutput {
        loss: T::lit(-log_p),
        grad: Tensor::new(&[frames, classes], grad)?,
    })
}

/// Row-wise log-softmax.
pub fn log_softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (rows, cols) = logits.dims2()?;
    let mut out = logits.clone();
    for r in 0..rows {
        let row = out.row_mut(r);
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let lse = m + row.iter().map(|&v| (v - m).exp()).fold(T::zero(), |a, b| a + b).ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    debug_assert_eq!(out.shape(), [rows, cols]);
    Ok(out)
}

/// CTC on unnormalized logits; the gradient is with respect to the logits.
pub fn ctc_loss_from_logits<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<CtcOutput<T>> {
    let lp = log_softmax(logits)?;
    let out = ctc_loss(&lp, labels)?;
    // softmax minus occupancy; each occupancy row sums to one
    let grad = lp.zip_map(&out.grad, |l, g| l.exp() + g)?;
    Ok(CtcOutput { loss: out.loss, grad })
}

/// Per-frame argmax, repeats collapsed, blanks dropped.
pub fn greedy_ctc_decode<T: Scalar>(log_probs: &Tensor<T>) -> Result<Vec<usize>> {
    let (frames, _) = log_probs.dims2()?;
    let mut out = Vec::new();
    let mut prev = None;
    for t in 0..frames {
        let row = log_probs.row(t);
        let best = row
            .iter()
            .enumerate()
            .fold(0, |b, (k, &v)| if v > row[b] { k } else { b });
        if Some(best) != prev && best != BLANK {
            out.push(best);
        }
        prev = Some(best);
    }
    Ok(out)
}

/// Unit-cost Levenshtein distance.
pub fn edit_distance<S: PartialEq>(a: &[S], b: &[S]) -> usize {
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = diag + usize::from(x != y);
            diag = row[j + 1];
            row[j + 1] = sub.min(row[j] + 1).min(row[j + 1] + 1);
        }
    }
    row[b.len()]
}

/// Token error rate: edit distance over reference length.
pub fn wer<S: PartialEq>(reference: &[S], hypothesis: &[S]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    Ok(edit_distance(reference, hypothesis) as f64 / reference.len() as f64)
}
