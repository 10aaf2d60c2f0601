//! Sentence-level edits of weak requests: append a strong closing window,
//! delete the weak window, or both.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{extract_all, LabelSource, Triple, TripletOccurrence, TripletRecord};
use crate::corpus::{Request, Sentence};
use crate::error::{Error, Result};
use crate::persuader::{DisentangledRequest, Persuader};
use crate::vae::DisentangledSentence;

/// A real run of sentences realizing a strong triple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub triple: Triple,
    pub source_id: String,
    pub sentences: Vec<Sentence>,
    pub disentangled: Vec<DisentangledSentence>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ExemplarBank {
    pools: BTreeMap<Triple, Vec<Exemplar>>,
}

impl ExemplarBank {
    pub fn triples(&self) -> impl Iterator<Item = &Triple> {
        self.pools.keys()
    }

    pub fn pool(&self, triple: &Triple) -> &[Exemplar] {
        self.pools.get(triple).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.pools.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Uniform triple, then uniform exemplar within it.
    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> &Exemplar {
        let keys: Vec<&Triple> = self.pools.keys().collect();
        let t = keys.choose(rng).expect("bank is non-empty");
        self.pools[*t].choose(rng).expect("pools are non-empty")
    }
}

fn check_aligned(requests: &[Request], disentangled: &[DisentangledRequest]) -> Result<()> {
    if requests.len() != disentangled.len() {
        return Err(Error::Consistency(format!(
            "{} requests but {} disentangled requests",
            requests.len(),
            disentangled.len()
        )));
    }
    for (r, d) in requests.iter().zip(disentangled) {
        if r.id != d.id || r.len() != d.sentences.len() {
            return Err(Error::Consistency(format!("request `{}` does not match its disentangled form", r.id)));
        }
    }
    Ok(())
}

fn check_occurrence(request: &Request, occurrence: &TripletOccurrence) -> Result<Range<usize>> {
    let range = occurrence.sentence_range();
    if occurrence.request_id != request.id || range.is_empty() || range.end > request.len() {
        return Err(Error::Consistency(format!(
            "occurrence for `{}` over sentences {:?} does not fit request `{}` of length {}",
            occurrence.request_id,
            range,
            request.id,
            request.len()
        )));
    }
    if range.len() == request.len() {
        return Err(Error::Degenerate(format!(
            "deleting sentences {range:?} would leave request `{}` empty; at least one sentence must remain",
            request.id
        )));
    }
    Ok(range)
}

/// Collect the real sentence windows of every request whose extracted triple
/// is one of `top_triples`.
pub fn build_bank(
    requests: &[Request],
    disentangled: &[DisentangledRequest],
    occurrences: &[TripletOccurrence],
    top_triples: &[Triple],
) -> Result<ExemplarBank> {
    check_aligned(requests, disentangled)?;
    if occurrences.len() != requests.len() {
        return Err(Error::Consistency("one occurrence per request is required".into()));
    }
    let mut pools: BTreeMap<Triple, Vec<Exemplar>> = top_triples.iter().map(|t| (*t, Vec::new())).collect();
    for ((r, d), o) in requests.iter().zip(disentangled).zip(occurrences) {
        let Some(pool) = pools.get_mut(&o.triple) else { continue };
        if o.request_id != r.id || o.end > r.len() {
            return Err(Error::Consistency(format!("stale occurrence for request `{}`", r.id)));
        }
        pool.push(Exemplar {
            triple: o.triple,
            source_id: r.id.clone(),
            sentences: r.sentences[o.sentence_range()].to_vec(),
            disentangled: d.sentences[o.sentence_range()].to_vec(),
        });
    }
    if let Some((t, _)) = pools.iter().find(|(_, p)| p.is_empty()) {
        return Err(Error::Bank(t.to_string()));
    }
    Ok(ExemplarBank { pools })
}

fn appended<T: Clone>(items: &[T], extra: &[T]) -> Vec<T> {
    items.iter().chain(extra).cloned().collect()
}

fn removed<T: Clone>(items: &[T], range: Range<usize>) -> Vec<T> {
    items[..range.start].iter().chain(&items[range.end..]).cloned().collect()
}

/// Append the exemplar after the last sentence; id becomes `{id}#ins`.
pub fn insert(request: &Request, exemplar: &Exemplar) -> Request {
    Request {
        id: format!("{}#ins", request.id),
        sentences: appended(&request.sentences, &exemplar.sentences),
        success: request.success,
    }
}

/// Remove the occurrence's sentences; id becomes `{id}#del`.
pub fn delete(request: &Request, occurrence: &TripletOccurrence) -> Result<Request> {
    let range = check_occurrence(request, occurrence)?;
    Ok(Request {
        id: format!("{}#del", request.id),
        sentences: removed(&request.sentences, range),
        success: request.success,
    })
}

/// `insert(delete(request, occurrence), exemplar)`; id becomes `{id}#swp`.
pub fn swap(request: &Request, occurrence: &TripletOccurrence, exemplar: &Exemplar) -> Result<Request> {
    let deleted = delete(request, occurrence)?;
    Ok(Request {
        id: format!("{}#swp", request.id),
        sentences: insert(&deleted, exemplar).sentences,
        success: request.success,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditOp {
    Insert,
    Delete,
    Swap,
}

impl fmt::Display for EditOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EditOp::Insert => "insert",
            EditOp::Delete => "delete",
            EditOp::Swap => "swap",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditReport {
    pub operation: EditOp,
    /// Requests edited in every run.
    pub n_requests: usize,
    /// Requests this operation could not edit (it would empty them).
    pub skipped: usize,
    pub runs: usize,
    /// Mean predicted success of the edited requests before editing.
    pub before: f64,
    /// Mean over runs of the mean predicted success after editing.
    pub after: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EditConfig {
    pub runs: usize,
    pub top_triples: Vec<Triple>,
    pub bottom_triples: Vec<Triple>,
    pub label_source: LabelSource,
}

impl Default for EditConfig {
    fn default() -> Self {
        let t = |s: &str| s.parse::<Triple>().expect("valid triple");
        Self {
            runs: 30,
            top_triples: vec![t("Po Po EOS"), t("Re Po EOS"), t("Co Po EOS")],
            bottom_triples: vec![t("Co Im Co"), t("Co Co Co"), t("Co Co Im")],
            label_source: LabelSource::default(),
        }
    }
}

/// The `k` best and `k` worst triples of a ranking, best and worst first.
pub fn extreme_triples(records: &[TripletRecord], k: usize) -> Result<(Vec<Triple>, Vec<Triple>)> {
    if k == 0 || records.len() < 2 * k {
        return Err(Error::Input(format!(
            "need at least {} ranked triples to pick {k} from each end, got {}",
            2 * k,
            records.len()
        )));
    }
    let mut sorted: Vec<&TripletRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.rank);
    let top = sorted[..k].iter().map(|r| r.triple).collect();
    let bottom = sorted.iter().rev().take(k).map(|r| r.triple).collect();
    Ok((top, bottom))
}

fn stream_seed(seed: u64, run: usize, index: usize) -> u64 {
    seed ^ (run as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (index as u64 + 1).wrapping_mul(0xc2b2_ae3d_27d4_eb4f)
}

/// Edit every request whose extracted triple is a bottom triple, using
/// exemplars of the top triples drawn from `bank_requests`, and compare
/// predicted success before and after.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_edits(
    requests: &[Request],
    disentangled: &[DisentangledRequest],
    bank_requests: &[Request],
    bank_disentangled: &[DisentangledRequest],
    model: &Persuader<f32>,
    config: &EditConfig,
    seed: u64,
) -> Result<Vec<EditReport>> {
    if config.runs == 0 {
        return Err(Error::Config("runs must be at least 1".into()));
    }
    check_aligned(requests, disentangled)?;
    let bank_occ = extract_all(bank_disentangled, model, config.label_source)?;
    let bank = build_bank(bank_requests, bank_disentangled, &bank_occ, &config.top_triples)?;

    let occurrences = extract_all(disentangled, model, config.label_source)?;
    let selected: Vec<usize> = occurrences
        .iter()
        .enumerate()
        .filter(|(_, o)| config.bottom_triples.contains(&o.triple))
        .map(|(i, _)| i)
        .collect();
    if selected.is_empty() {
        return Err(Error::Selection("no request's extracted triple is among the bottom triples".into()));
    }

    let prob = |sents: &[DisentangledSentence]| -> Result<f64> {
        Ok(model.predict_disentangled(sents)?.success_probability)
    };
    let before: Vec<f64> = selected
        .iter()
        .map(|&i| prob(&disentangled[i].sentences))
        .collect::<Result<_>>()?;

    let mut reports = Vec::new();
    for op in [EditOp::Insert, EditOp::Delete, EditOp::Swap] {
        let mut kept = Vec::new();
        let mut skipped = 0;
        for (k, &i) in selected.iter().enumerate() {
            let ok = match op {
                EditOp::Insert => true,
                _ => match check_occurrence(&requests[i], &occurrences[i]) {
                    Ok(_) => true,
                    Err(Error::Degenerate(_)) => false,
                    Err(e) => return Err(e),
                },
            };
            if ok {
                kept.push((k, i));
            } else {
                skipped += 1;
            }
        }
        if kept.is_empty() {
            reports.push(EditReport {
                operation: op,
                n_requests: 0,
                skipped,
                runs: config.runs,
                before: f64::NAN,
                after: f64::NAN,
                delta: f64::NAN,
            });
            continue;
        }
        let before_mean = kept.iter().map(|&(k, _)| before[k]).sum::<f64>() / kept.len() as f64;
        let runs = if op == EditOp::Delete { 1 } else { config.runs };
        let mut after_sum = 0.0;
        for run in 0..runs {
            let mut total = 0.0;
            for &(_, i) in &kept {
                let d = &disentangled[i].sentences;
                let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, run, i));
                let edited = match op {
                    EditOp::Insert => appended(d, &bank.sample(&mut rng).disentangled),
                    EditOp::Delete => removed(d, occurrences[i].sentence_range()),
                    EditOp::Swap => {
                        let rest = removed(d, occurrences[i].sentence_range());
                        appended(&rest, &bank.sample(&mut rng).disentangled)
                    }
                };
                total += prob(&edited)?;
            }
            after_sum += total / kept.len() as f64;
        }
        // deletion has no randomness, so every run gives the same value
        let after = after_sum / runs as f64;
        reports.push(EditReport {
            operation: op,
            n_requests: kept.len(),
            skipped,
            runs: config.runs,
            before: before_mean,
            after,
            delta: after - before_mean,
        });
    }
    Ok(reports)
}

/// CSV with `operation,n_requests,runs,before,after,delta,skipped`.
pub fn write_edit_csv<W: Write>(out: &mut W, header: Option<&str>, reports: &[EditReport]) -> std::io::Result<()> {
    if let Some(h) = header {
        writeln!(out, "# {h}")?;
    }
    writeln!(out, "operation,n_requests,runs,before,after,delta,skipped")?;
    for r in reports {
        writeln!(
            out,
            "{},{},{},{:.4},{:.4},{:.4},{}",
            r.operation, r.n_requests, r.runs, r.before, r.after, r.delta, r.skipped
        )?;
    }
    Ok(())
}
