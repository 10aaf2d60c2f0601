//! Macro-averaged classification metrics shared by every classifier.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Per-class precision, recall and F1 averaged without weighting over every
/// class that occurs in either `golds` or `predictions`. Empty denominators
/// count as 0.
pub fn macro_metrics<L: Ord + Copy>(predictions: &[L], golds: &[L]) -> Result<MacroMetrics> {
    if predictions.len() != golds.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} gold labels",
            predictions.len(),
            golds.len()
        )));
    }
    if golds.is_empty() {
        return Err(Error::EmptyInput("no predictions to score".into()));
    }
    let classes: BTreeSet<L> = golds.iter().chain(predictions).copied().collect();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let (mut f1, mut p, mut r) = (0.0, 0.0, 0.0);
    for c in &classes {
        let mut tp = 0;
        let mut pred_c = 0;
        let mut gold_c = 0;
        for (pr, g) in predictions.iter().zip(golds) {
            let ip = pr == c;
            let ig = g == c;
            pred_c += ip as usize;
            gold_c += ig as usize;
            tp += (ip && ig) as usize;
        }
        let prec = ratio(tp, pred_c);
        let rec = ratio(tp, gold_c);
        p += prec;
        r += rec;
        f1 += if prec + rec > 0.0 {
            2.0 * prec * rec / (prec + rec)
        } else {
            0.0
        };
    }
    let k = classes.len() as f64;
    Ok(MacroMetrics {
        f1: f1 / k,
        precision: p / k,
        recall: r / k,
    })
}

/// One row of a metric report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub value: f64,
    pub split: String,
}

impl MetricRow {
    pub fn new(metric: impl Into<String>, value: f64, split: impl Into<String>) -> Self {
        Self {
            metric: metric.into(),
            value,
            split: split.into(),
        }
    }
}

/// Three-column CSV `metric,value,split`, optionally preceded by a `# ` header line.
pub fn write_metric_rows<W: Write>(out: &mut W, header: Option<&str>, rows: &[MetricRow]) -> std::io::Result<()> {
    if let Some(h) = header {
        writeln!(out, "# {h}")?;
    }
    writeln!(out, "metric,value,split")?;
    for r in rows {
        writeln!(out, "{},{:.6},{}", r.metric, r.value, r.split)?;
    }
    Ok(())
}

impl MacroMetrics {
    pub fn rows(&self, prefix: &str, split: &str) -> Vec<MetricRow> {
        vec![
            MetricRow::new(format!("{prefix}macro_f1"), self.f1, split),
            MetricRow::new(format!("{prefix}macro_precision"), self.precision, split),
            MetricRow::new(format!("{prefix}macro_recall"), self.recall, split),
        ]
    }
}
