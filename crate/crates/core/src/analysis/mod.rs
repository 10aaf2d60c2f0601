//! Strategy triplets around the most attended sentence, their success rates
//! and attention, and the ranked report.

mod stats;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::StrategyLabel;
use crate::error::{Error, Result};
use crate::persuader::{AttentionTrace, DisentangledRequest, Persuader};

pub use stats::{ln_gamma, mean_and_std, pearson, regularized_incomplete_beta, student_t_two_tailed, Correlation};

/// Default rare-triple cutoff as a fraction of analyzed requests.
pub const DEFAULT_MIN_FREQ: f64 = 0.005;

/// One position of a triple: a real strategy or a virtual request boundary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Slot {
    Sos,
    Label(StrategyLabel),
    Eos,
}

impl Slot {
    pub fn short(self) -> &'static str {
        match self {
            Slot::Sos => "SOS",
            Slot::Eos => "EOS",
            Slot::Label(l) => l.short(),
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Slot::Sos => "SOS",
            Slot::Eos => "EOS",
            Slot::Label(l) => l.title(),
        }
    }

    pub fn label(self) -> Option<StrategyLabel> {
        match self {
            Slot::Label(l) => Some(l),
            _ => None,
        }
    }
}

impl FromStr for Slot {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SOS" => Ok(Slot::Sos),
            "EOS" => Ok(Slot::Eos),
            _ => Ok(Slot::Label(s.parse()?)),
        }
    }
}

/// Ordered strategy triple, e.g. `Po Po EOS`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple(pub [Slot; 3]);

impl Triple {
    pub fn shorthand(&self) -> String {
        self.to_string()
    }

    /// Full names joined by commas.
    pub fn expansion(&self) -> String {
        self.0.iter().map(|s| s.title()).collect::<Vec<_>>().join(", ")
    }

    pub fn contains(&self, label: StrategyLabel) -> bool {
        self.0.contains(&Slot::Label(label))
    }

    pub fn ends_request(&self) -> bool {
        self.0[2] == Slot::Eos
    }

    /// Real labels in order, boundaries dropped.
    pub fn labels(&self) -> Vec<StrategyLabel> {
        self.0.iter().filter_map(|s| s.label()).collect()
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.0[0].short(), self.0[1].short(), self.0[2].short())
    }
}

impl FromStr for Triple {
    type Err = Error;

    /// Accepts `Po Po EOS`, `Po,Po,EOS` or `(Po, Po, EOS)`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s
            .trim_matches(|c| c == '(' || c == ')')
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|p| !p.is_empty())
            .collect();
        if parts.len() != 3 {
            return Err(Error::Input(format!("`{s}` is not a strategy triple")));
        }
        let slots = [parts[0].parse()?, parts[1].parse()?, parts[2].parse()?];
        if slots[1] == Slot::Sos || slots[1] == Slot::Eos || slots[0] == Slot::Eos || slots[2] == Slot::Sos {
            return Err(Error::Input(format!("`{s}` has a boundary marker in an impossible position")));
        }
        Ok(Triple(slots))
    }
}

impl Serialize for Triple {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Triple {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The window around one request's most attended sentence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripletOccurrence {
    pub request_id: String,
    pub triple: Triple,
    /// Index of the most attended sentence.
    pub center: usize,
    /// First real sentence of the window.
    pub start: usize,
    /// One past the last real sentence of the window.
    pub end: usize,
    /// Request attention summed over the window's real sentences.
    pub cumulative_attention: f64,
    /// Mean strategy-side sentence attention over the window's real sentences.
    pub strategy_attention: f64,
    pub success: bool,
}

impl TripletOccurrence {
    pub fn sentence_range(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

/// Window centered on the highest request attention (earliest on ties), with
/// SOS/EOS standing in for missing neighbours.
pub fn extract_triplet(
    request_id: &str,
    success: bool,
    trace: &AttentionTrace,
    labels: &[StrategyLabel],
) -> Result<TripletOccurrence> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::Input(format!("request `{request_id}` has no sentences")));
    }
    if trace.request.len() != n || trace.sentence.len() != n {
        return Err(Error::Input(format!(
            "request `{request_id}`: {n} labels but attention over {} sentences",
            trace.request.len()
        )));
    }
    let m = trace.argmax_sentence();
    let start = m.saturating_sub(1);
    let end = (m + 2).min(n);
    let prev = if m == 0 { Slot::Sos } else { Slot::Label(labels[m - 1]) };
    let next = if m + 1 == n { Slot::Eos } else { Slot::Label(labels[m + 1]) };
    let cumulative_attention = trace.request[start..end].iter().sum::<f64>().min(1.0);
    let strategy_attention = trace.sentence[start..end].iter().map(|a| a[1]).sum::<f64>() / (end - start) as f64;
    Ok(TripletOccurrence {
        request_id: request_id.to_string(),
        triple: Triple([prev, Slot::Label(labels[m]), next]),
        center: m,
        start,
        end,
        cumulative_attention,
        strategy_attention,
        success,
    })
}

/// Which labels feed the triples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    /// Gold where annotated, otherwise the VAE's argmax.
    #[default]
    GoldThenPredicted,
    Predicted,
}

impl fmt::Display for LabelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelSource::GoldThenPredicted => "gold_then_predicted",
            LabelSource::Predicted => "predicted",
        })
    }
}

pub fn request_labels(request: &DisentangledRequest, source: LabelSource) -> Vec<StrategyLabel> {
    match source {
        LabelSource::GoldThenPredicted => request.labels(),
        LabelSource::Predicted => request.predicted_labels(),
    }
}

/// One occurrence per request.
pub fn extract_all(
    requests: &[DisentangledRequest],
    model: &Persuader<f32>,
    source: LabelSource,
) -> Result<Vec<TripletOccurrence>> {
    requests
        .iter()
        .map(|r| {
            let trace = model.predict_disentangled(&r.sentences)?;
            extract_triplet(&r.id, r.success, &trace, &request_labels(r, source))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub rank: usize,
    pub triple: Triple,
    pub count: usize,
    pub success_rate: f64,
    pub attention: f64,
}

/// Order by success rate descending, then attention ascending, then triple,
/// and assign ranks from 1.
pub fn rank_records(records: &mut [TripletRecord]) {
    records.sort_by(|a, b| {
        b.success_rate
            .total_cmp(&a.success_rate)
            .then(a.attention.total_cmp(&b.attention))
            .then(a.triple.shorthand().cmp(&b.triple.shorthand()))
    });
    for (i, r) in records.iter_mut().enumerate() {
        r.rank = i + 1;
    }
}

/// Group occurrences by triple, drop rare triples and those containing Other,
/// and rank the rest.
pub fn aggregate_occurrences(occurrences: &[TripletOccurrence], min_freq: f64) -> Result<Vec<TripletRecord>> {
    if !(0.0..=1.0).contains(&min_freq) {
        return Err(Error::Parameter(format!("min_freq must lie in [0, 1], got {min_freq}")));
    }
    let total = occurrences.len() as f64;
    let mut groups: BTreeMap<Triple, (usize, usize, f64)> = BTreeMap::new();
    for o in occurrences {
        let g = groups.entry(o.triple).or_default();
        g.0 += 1;
        g.1 += o.success as usize;
        g.2 += o.strategy_attention;
    }
    let mut records: Vec<TripletRecord> = groups
        .into_iter()
        .filter(|(t, (count, _, _))| !t.contains(StrategyLabel::Other) && (*count as f64) >= min_freq * total)
        .map(|(triple, (count, successes, att))| TripletRecord {
            rank: 0,
            triple,
            count,
            success_rate: successes as f64 / count as f64,
            attention: att / count as f64,
        })
        .collect();
    rank_records(&mut records);
    Ok(records)
}

pub fn aggregate_triplets(
    requests: &[DisentangledRequest],
    model: &Persuader<f32>,
    min_freq: f64,
    source: LabelSource,
) -> Result<Vec<TripletRecord>> {
    aggregate_occurrences(&extract_all(requests, model, source)?, min_freq)
}

/// Mean and population standard deviation of the window's request attention.
pub fn concentration_stats(occurrences: &[TripletOccurrence]) -> Result<(f64, f64)> {
    if occurrences.is_empty() {
        return Err(Error::Input("no requests analyzed".into()));
    }
    let xs: Vec<f64> = occurrences.iter().map(|o| o.cumulative_attention).collect();
    mean_and_std(&xs)
}

/// Correlation of attention with success rate across records.
pub fn attention_success_correlation(records: &[TripletRecord]) -> Result<Correlation> {
    let xs: Vec<f64> = records.iter().map(|r| r.attention).collect();
    let ys: Vec<f64> = records.iter().map(|r| r.success_rate).collect();
    pearson(&xs, &ys)
}

const REFERENCE_CSV: &str = include_str!("../../data/reference_triples.csv");

/// The 31 published (triple, attention, success) rows in published rank order.
/// Counts are not published and are reported as 0.
pub fn reference_ranking() -> Vec<TripletRecord> {
    parse_ranking_csv(REFERENCE_CSV).expect("bundled reference ranking parses")
}

/// Parse `rank,shorthand,attention,success` rows.
pub fn parse_ranking_csv(text: &str) -> Result<Vec<TripletRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Parse {
            line: i + 1,
            message: format!("expected rank,shorthand,attention,success: `{line}`"),
        };
        if f.len() != 4 {
            return Err(bad());
        }
        out.push(TripletRecord {
            rank: f[0].trim().parse().map_err(|_| bad())?,
            triple: f[1].parse()?,
            count: 0,
            attention: f[2].trim().parse().map_err(|_| bad())?,
            success_rate: f[3].trim().parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

/// Records in rank order, checking ranks are unique.
fn ordered(records: &[TripletRecord]) -> Result<Vec<&TripletRecord>> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no triplet records to report".into()));
    }
    let mut v: Vec<&TripletRecord> = records.iter().collect();
    v.sort_by_key(|r| r.rank);
    if v.windows(2).any(|w| w[0].rank == w[1].rank) {
        return Err(Error::Consistency("duplicate ranks in triplet records".into()));
    }
    Ok(v)
}

/// CSV with `rank,shorthand,expansion,attention,success_rate,count`.
pub fn write_rank_csv<W: Write>(out: &mut W, header: Option<&str>, records: &[TripletRecord]) -> Result<()> {
    let rows = ordered(records)?;
    let io = |e| Error::io("<rank report>", e);
    if let Some(h) = header {
        writeln!(out, "# {h}").map_err(io)?;
    }
    writeln!(out, "rank,shorthand,expansion,attention,success_rate,count").map_err(io)?;
    for r in rows {
        writeln!(
            out,
            "{},{},\"{}\",{:.4},{:.4},{}",
            r.rank,
            r.triple,
            r.triple.expansion(),
            r.attention,
            r.success_rate,
            r.count
        )
        .map_err(io)?;
    }
    Ok(())
}

/// Plot data: `rank<TAB>triple<TAB>attention<TAB>success_rate`.
pub fn write_plot_tsv<W: Write>(out: &mut W, header: Option<&str>, records: &[TripletRecord]) -> Result<()> {
    let rows = ordered(records)?;
    let io = |e| Error::io("<plot data>", e);
    if let Some(h) = header {
        writeln!(out, "# {h}").map_err(io)?;
    }
    writeln!(out, "rank\ttriple\tattention\tsuccess_rate").map_err(io)?;
    for r in rows {
        writeln!(out, "{}\t{}\t{:.4}\t{:.4}", r.rank, r.triple, r.attention, r.success_rate).map_err(io)?;
    }
    Ok(())
}

/// Write the CSV to `out_path` and the plot data next to it with a `.tsv`
/// extension. Returns the plot-data path.
pub fn rank_report(records: &[TripletRecord], out_path: &Path, header: Option<&str>) -> Result<PathBuf> {
    let mut csv = Vec::new();
    write_rank_csv(&mut csv, header, records)?;
    let mut tsv = Vec::new();
    write_plot_tsv(&mut tsv, header, records)?;
    std::fs::write(out_path, csv).map_err(|e| Error::io(out_path, e))?;
    let plot = out_path.with_extension("tsv");
    std::fs::write(&plot, tsv).map_err(|e| Error::io(&plot, e))?;
    Ok(plot)
}

#[cfg(test)]
mod tests;
