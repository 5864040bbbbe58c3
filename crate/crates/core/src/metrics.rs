//! Fixed, Adaptive and Full sequence accuracies and the per-length report.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{AttributeLabel, EditSequence, MAX_EDITS};
use crate::numerics::Tensor;

fn check_len(s: &[AttributeLabel]) -> Result<()> {
    if s.len() > MAX_EDITS {
        return Err(Error::invalid(format!(
            "sequence length {} exceeds {MAX_EDITS}",
            s.len()
        )));
    }
    Ok(())
}

/// Fraction of the four positions that agree once both sequences are padded
/// with a "no manipulation" marker.
pub fn fixed_acc(pred: &[AttributeLabel], gt: &[AttributeLabel]) -> Result<f64> {
    check_len(pred)?;
    check_len(gt)?;
    let matches = (0..MAX_EDITS)
        .filter(|&i| pred.get(i) == gt.get(i))
        .count();
    Ok(matches as f64 / MAX_EDITS as f64)
}

/// Positional accuracy over the shorter of the two sequences.
///
/// When the shorter one is empty: 1 if both are empty, else 0.
pub fn adaptive_acc(pred: &[AttributeLabel], gt: &[AttributeLabel]) -> Result<f64> {
    check_len(pred)?;
    check_len(gt)?;
    let m = pred.len().min(gt.len());
    if m == 0 {
        return Ok(if pred.is_empty() && gt.is_empty() { 1.0 } else { 0.0 });
    }
    let matches = pred.iter().zip(gt).take(m).filter(|(a, b)| a == b).count();
    Ok(matches as f64 / m as f64)
}

/// 1 on an exact match of length and order, else 0.
pub fn full_acc(pred: &[AttributeLabel], gt: &[AttributeLabel]) -> Result<f64> {
    check_len(pred)?;
    check_len(gt)?;
    Ok(if pred == gt { 1.0 } else { 0.0 })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub count: usize,
    pub fixed_acc: f64,
    pub adaptive_acc: f64,
    pub full_acc: f64,
}

/// Accuracies per ground-truth length 0..=4 plus their unweighted mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub by_length: [MetricRow; MAX_EDITS + 1],
    pub average: MetricRow,
}

impl MetricsReport {
    /// Aggregates `(prediction, ground truth)` pairs.
    ///
    /// The average row is the mean over lengths that have samples.
    pub fn from_pairs(label: &str, pairs: &[(EditSequence, EditSequence)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::invalid("cannot evaluate an empty split"));
        }
        let mut sums = [[0.0f64; 3]; MAX_EDITS + 1];
        let mut counts = [0usize; MAX_EDITS + 1];
        for (pred, gt) in pairs {
            let (p, g) = (pred.as_slice(), gt.as_slice());
            let l = g.len();
            counts[l] += 1;
            sums[l][0] += fixed_acc(p, g)?;
            sums[l][1] += adaptive_acc(p, g)?;
            sums[l][2] += full_acc(p, g)?;
        }
        let mut by_length = [MetricRow::default(); MAX_EDITS + 1];
        let mut average = MetricRow::default();
        let mut populated = 0usize;
        for l in 0..=MAX_EDITS {
            if counts[l] == 0 {
                continue;
            }
            let n = counts[l] as f64;
            by_length[l] = MetricRow {
                count: counts[l],
                fixed_acc: sums[l][0] / n,
                adaptive_acc: sums[l][1] / n,
                full_acc: sums[l][2] / n,
            };
            average.fixed_acc += by_length[l].fixed_acc;
            average.adaptive_acc += by_length[l].adaptive_acc;
            average.full_acc += by_length[l].full_acc;
            average.count += counts[l];
            populated += 1;
        }
        let k = populated as f64;
        average.fixed_acc /= k;
        average.adaptive_acc /= k;
        average.full_acc /= k;
        Ok(MetricsReport {
            label: label.to_string(),
            by_length,
            average,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for MetricsReport {
    /// Table with rows 0..4 and Avg., columns Fixed/Adaptive/Full in percent.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# {}", self.label)?;
        writeln!(f, "{:<6} {:>6} {:>8} {:>9} {:>8}", "len", "n", "Fixed", "Adaptive", "Full")?;
        let line = |f: &mut fmt::Formatter<'_>, name: &str, r: &MetricRow| {
            writeln!(
                f,
                "{:<6} {:>6} {:>8.2} {:>9.2} {:>8.2}",
                name,
                r.count,
                100.0 * r.fixed_acc,
                100.0 * r.adaptive_acc,
                100.0 * r.full_acc
            )
        };
        for (l, row) in self.by_length.iter().enumerate() {
            line(f, &l.to_string(), row)?;
        }
        line(f, "Avg.", &self.average)
    }
}

/// Anything that maps an image to an edit sequence.
pub trait SequencePredictor: Sync {
    fn predict(&self, image: &Tensor) -> Result<EditSequence>;
}

impl<F> SequencePredictor for F
where
    F: Fn(&Tensor) -> Result<EditSequence> + Sync,
{
    fn predict(&self, image: &Tensor) -> Result<EditSequence> {
        self(image)
    }
}

/// An image with its ground-truth sequence.
#[derive(Clone, Debug)]
pub struct LabeledImage {
    pub id: String,
    pub image: Tensor,
    pub gt: EditSequence,
}

/// Runs `predictor` on every sample (in parallel) and aggregates the metrics.
pub fn evaluate<P: SequencePredictor + ?Sized>(
    predictor: &P,
    samples: &[LabeledImage],
    label: &str,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty split"));
    }
    let pairs = samples
        .par_iter()
        .map(|s| Ok((predictor.predict(&s.image)?, s.gt.clone())))
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::from_pairs(label, &pairs)
}
