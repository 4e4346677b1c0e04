//! Anchor-normalized benchmark score.
//!
//! Each metric is rescaled so the FBank baseline maps to 0 and the
//! state of the art maps to 1, averaged within a task, then across tasks,
//! and multiplied by 1000. Lower-is-better metrics need no special casing:
//! the sign of `sota - fbank` carries the direction.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Higher,
    Lower,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Anchor {
    pub fbank: f64,
    pub sota: f64,
    pub direction: Direction,
}

/// `(task, metric) -> anchor`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreAnchors {
    pub anchors: BTreeMap<(String, String), Anchor>,
}

/// `(task, metric) -> value` for one model.
pub type MetricTable = BTreeMap<(String, String), f64>;

#[derive(Deserialize)]
struct AnchorRow {
    task: String,
    metric: String,
    direction: Direction,
    fbank: f64,
    sota: f64,
}

#[derive(Deserialize)]
struct MetricRow {
    task: String,
    metric: String,
    value: f64,
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

impl ScoreAnchors {
    /// Parses `task,metric,direction,fbank,sota` CSV (`#` comments allowed).
    pub fn parse(text: &str) -> Result<Self> {
        let mut anchors = BTreeMap::new();
        for row in reader(text).deserialize::<AnchorRow>() {
            let r = row.map_err(|e| Error::Anchor(format!("bad anchor row: {e}")))?;
            if r.sota == r.fbank {
                return Err(Error::Anchor(format!(
                    "{}/{}: SOTA and FBank anchors are equal",
                    r.task, r.metric
                )));
            }
            let expected = if r.sota > r.fbank {
                Direction::Higher
            } else {
                Direction::Lower
            };
            if expected != r.direction {
                return Err(Error::Anchor(format!(
                    "{}/{}: direction `{:?}` contradicts anchors fbank={} sota={}",
                    r.task, r.metric, r.direction, r.fbank, r.sota
                )));
            }
            anchors.insert(
                (r.task, r.metric),
                Anchor {
                    fbank: r.fbank,
                    sota: r.sota,
                    direction: r.direction,
                },
            );
        }
        Ok(Self { anchors })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Anchor(format!("cannot read anchors {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

/// Parses `task,metric,value` CSV.
pub fn parse_metrics(text: &str) -> Result<MetricTable> {
    let mut out = MetricTable::new();
    for row in reader(text).deserialize::<MetricRow>() {
        let r = row.map_err(|e| Error::format("<metrics>", format!("bad metric row: {e}")))?;
        out.insert((r.task, r.metric), r.value);
    }
    Ok(out)
}

/// Score over every task present in `metrics`.
pub fn superb_score(metrics: &MetricTable, anchors: &ScoreAnchors) -> Result<f64> {
    if metrics.is_empty() {
        return Err(Error::Anchor("no model metrics given".into()));
    }
    let mut per_task: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for ((task, metric), &value) in metrics {
        let a = anchors
            .anchors
            .get(&(task.clone(), metric.clone()))
            .ok_or_else(|| Error::Anchor(format!("no anchor for {task}/{metric}")))?;
        per_task
            .entry(task)
            .or_default()
            .push((value - a.fbank) / (a.sota - a.fbank));
    }
    let task_means: Vec<f64> = per_task
        .values()
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
        .collect();
    Ok(1000.0 * task_means.iter().sum::<f64>() / task_means.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    const ANCHORS: &str = "\
# task, metric, direction, fbank, sota
task,metric,direction,fbank,sota
asr,wer,lower,10,2
pr,per,lower,80,5
ks,acc,higher,40,97
ks,f1,higher,0.3,0.9
";

    fn table(rows: &[(&str, &str, f64)]) -> MetricTable {
        rows.iter()
            .map(|&(t, m, v)| ((t.to_string(), m.to_string()), v))
            .collect()
    }

    #[test]
    fn endpoints_and_arithmetic() {
        let a = ScoreAnchors::parse(ANCHORS).unwrap();
        let fb = table(&[("asr", "wer", 10.0), ("pr", "per", 80.0), ("ks", "acc", 40.0), ("ks", "f1", 0.3)]);
        assert_eq!(superb_score(&fb, &a).unwrap(), 0.0);
        let sota = table(&[("asr", "wer", 2.0), ("pr", "per", 5.0), ("ks", "acc", 97.0), ("ks", "f1", 0.9)]);
        assert_eq!(superb_score(&sota, &a).unwrap(), 1000.0);
        assert_eq!(superb_score(&table(&[("asr", "wer", 6.0)]), &a).unwrap(), 500.0);
    }

    #[test]
    fn invariant_under_affine_rescaling() {
        let a = ScoreAnchors::parse(ANCHORS).unwrap();
        let m = table(&[("asr", "wer", 7.0), ("ks", "acc", 60.0), ("ks", "f1", 0.5)]);
        let base = superb_score(&m, &a).unwrap();
        let (s, b) = (-3.5, 12.0);
        let mut a2 = a.clone();
        for v in a2.anchors.values_mut() {
            v.fbank = s * v.fbank + b;
            v.sota = s * v.sota + b;
        }
        let m2: MetricTable = m.iter().map(|(k, v)| (k.clone(), s * v + b)).collect();
        assert!((superb_score(&m2, &a2).unwrap() - base).abs() < 1e-9);
    }

    #[test]
    fn anchor_errors() {
        let a = ScoreAnchors::parse(ANCHORS).unwrap();
        assert!(matches!(
            superb_score(&table(&[("sid", "acc", 1.0)]), &a),
            Err(Error::Anchor(_))
        ));
        assert!(matches!(
            ScoreAnchors::parse("task,metric,direction,fbank,sota\nx,y,higher,1,1\n"),
            Err(Error::Anchor(_))
        ));
        assert!(matches!(
            ScoreAnchors::load(Path::new("/nonexistent/anchors.csv")),
            Err(Error::Anchor(_))
        ));
    }
}
