//! Scoring: confusion matrix, per-tag precision/recall/F1, weighted
//! macro-average F1, and cross-fold aggregation.
//!
//! Weighted macro-F1 averages per-tag F1 scores with weights equal to each
//! tag's gold proportion in the evaluated split, so rare tags neither vanish
//! (plain micro/accuracy) nor dominate (unweighted macro). Never-predicted
//! and zero-support tags score 0 rather than raising division errors.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// K x K count matrix; rows are gold tags, columns predictions, both in
/// tagset-index order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    labels: Vec<String>,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>) -> Self {
        let k = labels.len();
        ConfusionMatrix {
            labels,
            counts: vec![0; k * k],
        }
    }

    pub fn k(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn count(&self, gold: usize, pred: usize) -> u64 {
        self.counts[gold * self.k() + pred]
    }

    pub fn record(&mut self, gold: usize, pred: usize) {
        let k = self.k();
        self.counts[gold * k + pred] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k()).map(|i| self.count(i, i)).sum()
    }

    /// Gold count of one tag (row sum).
    pub fn support(&self, gold: usize) -> u64 {
        (0..self.k()).map(|j| self.count(gold, j)).sum()
    }

    /// Prediction count of one tag (column sum).
    pub fn predicted(&self, pred: usize) -> u64 {
        (0..self.k()).map(|i| self.count(i, pred)).sum()
    }

    /// CSV with a header row/column of tag names and integer cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for label in &self.labels {
            let _ = write!(out, ",{label}");
        }
        out.push('\n');
        for (i, label) in self.labels.iter().enumerate() {
            let _ = write!(out, "{label}");
            for j in 0..self.k() {
                let _ = write!(out, ",{}", self.count(i, j));
            }
            out.push('\n');
        }
        out
    }
}

/// Accumulate a confusion matrix from per-sentence gold and predicted tag
/// lists. The tagset is the sorted union of all observed tags.
pub fn confusion(gold: &[Vec<String>], pred: &[Vec<String>]) -> Result<ConfusionMatrix> {
    if gold.len() != pred.len() {
        return Err(Error::InvalidInput(format!(
            "{} gold sentences vs {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    let mut labels: BTreeSet<&str> = BTreeSet::new();
    for (g, p) in gold.iter().zip(pred) {
        if g.len() != p.len() {
            return Err(Error::InvalidInput(format!(
                "sentence length mismatch: {} gold tags vs {} predicted",
                g.len(),
                p.len()
            )));
        }
        labels.extend(g.iter().map(|s| s.as_str()));
        labels.extend(p.iter().map(|s| s.as_str()));
    }
    let labels: Vec<String> = labels.into_iter().map(|s| s.to_string()).collect();
    let mut cm = ConfusionMatrix::new(labels.clone());
    let index = |tag: &str| labels.binary_search_by(|l| l.as_str().cmp(tag)).unwrap();
    for (g, p) in gold.iter().zip(pred) {
        for (gt, pt) in g.iter().zip(p) {
            cm.record(index(gt), index(pt));
        }
    }
    Ok(cm)
}

/// Accumulate from id sequences over a fixed tagset.
pub fn confusion_from_ids<'a>(
    labels: &[String],
    pairs: impl Iterator<Item = (&'a [u32], &'a [u32])>,
) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(labels.to_vec());
    for (g, p) in pairs {
        if g.len() != p.len() {
            return Err(Error::InvalidInput("sentence length mismatch".into()));
        }
        for (&gt, &pt) in g.iter().zip(p) {
            cm.record(gt as usize, pt as usize);
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TagScore {
    pub tag: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TagReport {
    pub per_tag: Vec<TagScore>,
    pub weighted_f1: f64,
    pub accuracy: f64,
    pub total: u64,
}

/// Per-tag and aggregate scores from a confusion matrix.
pub fn tag_report(cm: &ConfusionMatrix) -> Result<TagReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::InvalidInput("empty confusion matrix".into()));
    }
    let mut per_tag = Vec::with_capacity(cm.k());
    let mut weighted_f1 = 0.0;
    for t in 0..cm.k() {
        let tp = cm.count(t, t) as f64;
        let support = cm.support(t);
        let predicted = cm.predicted(t);
        let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let recall = if support == 0 { 0.0 } else { tp / support as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        weighted_f1 += (support as f64 / total as f64) * f1;
        per_tag.push(TagScore {
            tag: cm.labels()[t].clone(),
            precision,
            recall,
            f1,
            support,
        });
    }
    Ok(TagReport {
        per_tag,
        weighted_f1,
        accuracy: cm.trace() as f64 / total as f64,
        total,
    })
}

/// Micro-average F1: for single-label-per-token tagging this is exactly
/// accuracy (trace over total).
pub fn micro_f1(cm: &ConfusionMatrix) -> Result<f64> {
    if cm.total() == 0 {
        return Err(Error::InvalidInput("empty confusion matrix".into()));
    }
    Ok(cm.trace() as f64 / cm.total() as f64)
}

/// Convenience: weighted F1 of id predictions over a fixed tagset.
pub fn weighted_f1_from_ids<'a>(
    labels: &[String],
    pairs: impl Iterator<Item = (&'a [u32], &'a [u32])>,
) -> Result<f64> {
    Ok(tag_report(&confusion_from_ids(labels, pairs)?)?.weighted_f1)
}

/// Spread statistic for fold aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StdMode {
    /// Sample standard deviation (n-1 denominator).
    #[default]
    Sample,
    /// Population standard deviation (n denominator).
    Population,
}

/// Mean and standard deviation over per-fold scores.
pub fn aggregate_folds(scores: &[f64], mode: StdMode) -> Result<(f64, f64)> {
    if scores.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 folds to aggregate, got {}",
            scores.len()
        )));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let ss: f64 = scores.iter().map(|s| (s - mean) * (s - mean)).sum();
    let denom = match mode {
        StdMode::Sample => n - 1.0,
        StdMode::Population => n,
    };
    Ok((mean, (ss / denom).sqrt()))
}

/// Render a report as plain text; scores on the 0-100 scale with two
/// decimals, matching the aggregate `mean (std)` presentation.
pub fn render_report(report: &TagReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "tokens\t{}", report.total);
    let _ = writeln!(out, "accuracy\t{:.2}", report.accuracy * 100.0);
    let _ = writeln!(out, "weighted_f1\t{:.2}", report.weighted_f1 * 100.0);
    let _ = writeln!(out, "tag\tprecision\trecall\tf1\tsupport");
    for t in &report.per_tag {
        let _ = writeln!(
            out,
            "{}\t{:.2}\t{:.2}\t{:.2}\t{}",
            t.tag,
            t.precision * 100.0,
            t.recall * 100.0,
            t.f1 * 100.0,
            t.support
        );
    }
    out
}
