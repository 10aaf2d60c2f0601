//! Request-level baselines and the plain sentence LSTM.

mod sentence_lstm;

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Request};
use crate::error::{Error, Result};
use crate::nn::log_sum_exp;

pub use crate::metrics::{macro_metrics, MacroMetrics};
pub use sentence_lstm::{evaluate_sentence_lstm, train_sentence_lstm, SentenceLstm, SentenceLstmConfig};

/// Multinomial Naive Bayes over request bags of words; class 1 is success.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NbModel {
    pub log_prior: [f64; 2],
    /// Smoothed `log P(token | class)` for every training token.
    pub log_likelihood: HashMap<String, [f64; 2]>,
    /// Smoothed mass for a token never seen in training.
    pub unseen_log_likelihood: [f64; 2],
    pub alpha: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NbPrediction {
    pub success: bool,
    /// Normalized log posterior for (failure, success).
    pub log_posterior: [f64; 2],
}

fn request_tokens(r: &Request) -> impl Iterator<Item = String> + '_ {
    r.sentences.iter().flat_map(|s| s.tokens())
}

/// Maximum likelihood with additive smoothing `alpha = 1`.
pub fn train_nb(corpus: &Corpus) -> Result<NbModel> {
    train_nb_with(corpus, 1.0)
}

pub fn train_nb_with(corpus: &Corpus, alpha: f64) -> Result<NbModel> {
    if corpus.is_empty() {
        return Err(Error::Training("empty training corpus".into()));
    }
    if !(alpha > 0.0) {
        return Err(Error::Parameter(format!("smoothing must be positive, got {alpha}")));
    }
    let mut docs = [0usize; 2];
    let mut counts: HashMap<String, [f64; 2]> = HashMap::new();
    let mut totals = [0.0f64; 2];
    for r in corpus.iter() {
        let c = r.success as usize;
        docs[c] += 1;
        for t in request_tokens(r) {
            counts.entry(t).or_default()[c] += 1.0;
            totals[c] += 1.0;
        }
    }
    let v = counts.len() as f64;
    let n = corpus.len() as f64;
    let denom = [totals[0] + alpha * v, totals[1] + alpha * v];
    let log_likelihood = counts
        .into_iter()
        .map(|(t, c)| {
            let ll = [((c[0] + alpha) / denom[0]).ln(), ((c[1] + alpha) / denom[1]).ln()];
            (t, ll)
        })
        .collect();
    Ok(NbModel {
        log_prior: [(docs[0] as f64 / n).ln(), (docs[1] as f64 / n).ln()],
        log_likelihood,
        unseen_log_likelihood: [(alpha / denom[0]).ln(), (alpha / denom[1]).ln()],
        alpha,
    })
}

/// Argmax of the joint log score; ties go to class 0 (failure).
pub fn predict_nb(model: &NbModel, request: &Request) -> NbPrediction {
    let mut score = model.log_prior;
    for t in request_tokens(request) {
        let ll = model.log_likelihood.get(&t).unwrap_or(&model.unseen_log_likelihood);
        score[0] += ll[0];
        score[1] += ll[1];
    }
    let z = log_sum_exp(&score);
    NbPrediction {
        success: score[1] > score[0],
        log_posterior: [score[0] - z, score[1] - z],
    }
}

/// One fair coin per request.
pub fn random_baseline(corpus: &Corpus, seed: u64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    corpus.iter().map(|_| rng.gen_bool(0.5)).collect()
}

/// Macro metrics of the given predictions against the corpus success labels.
pub fn score_requests(predictions: &[bool], corpus: &Corpus) -> Result<MacroMetrics> {
    let golds: Vec<bool> = corpus.iter().map(|r| r.success).collect();
    macro_metrics(predictions, &golds)
}

pub fn evaluate_nb(model: &NbModel, corpus: &Corpus) -> Result<MacroMetrics> {
    let preds: Vec<bool> = corpus.iter().map(|r| predict_nb(model, r).success).collect();
    score_requests(&preds, corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, GenConfig, Provenance, Sentence};

    fn req(id: &str, text: &str, success: bool) -> Request {
        Request {
            id: id.into(),
            sentences: vec![Sentence::new(text, None)],
            success,
        }
    }

    fn corpus(reqs: Vec<Request>) -> Corpus {
        Corpus::new(reqs, Provenance::Loaded).unwrap()
    }

    #[test]
    fn separable_requests_are_recovered() {
        let c = corpus(vec![req("a", "thanks please", true), req("b", "pay cash now", false)]);
        let m = train_nb(&c).unwrap();
        for r in c.iter() {
            assert_eq!(predict_nb(&m, r).success, r.success);
        }
    }

    #[test]
    fn priors_follow_class_frequencies() {
        let c = corpus(vec![req("a", "x", true), req("b", "y", true), req("c", "z", false)]);
        let m = train_nb(&c).unwrap();
        assert!((m.log_prior[1].exp() - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.log_prior[0].exp() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn likelihoods_normalize_over_the_vocabulary() {
        let c = generate_synthetic(&GenConfig { n_requests: 50, ..GenConfig::default() }, 1).unwrap();
        let m = train_nb(&c).unwrap();
        for k in 0..2 {
            let s: f64 = m.log_likelihood.values().map(|ll| ll[k].exp()).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn duplicating_the_training_set_changes_nothing_observable() {
        let c = generate_synthetic(&GenConfig { n_requests: 60, ..GenConfig::default() }, 2).unwrap();
        let mut twice = c.requests.clone();
        twice.extend(c.requests.iter().map(|r| Request {
            id: format!("{}-dup", r.id),
            ..r.clone()
        }));
        let a = train_nb(&c).unwrap();
        let b = train_nb(&corpus(twice)).unwrap();
        assert!((a.log_prior[1] - b.log_prior[1]).abs() < 1e-12);
        let test = generate_synthetic(&GenConfig { n_requests: 40, ..GenConfig::default() }, 3).unwrap();
        for r in test.iter() {
            assert_eq!(predict_nb(&a, r).success, predict_nb(&b, r).success);
        }
    }

    #[test]
    fn ties_go_to_failure() {
        let c = corpus(vec![req("a", "same", true), req("b", "same", false)]);
        let m = train_nb(&c).unwrap();
        let p = predict_nb(&m, &req("q", "same other", true));
        assert!(!p.success);
        let total: f64 = p.log_posterior.iter().map(|x| x.exp()).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_training_corpus_is_rejected() {
        assert!(matches!(train_nb(&Corpus::empty()), Err(Error::Training(_))));
    }

    #[test]
    fn random_baseline_is_seeded_and_near_chance() {
        let reqs: Vec<Request> = (0..1000).map(|i| req(&format!("r{i}"), "x", i % 2 == 0)).collect();
        let c = corpus(reqs);
        let p = random_baseline(&c, 5);
        assert_eq!(p, random_baseline(&c, 5));
        let f1 = score_requests(&p, &c).unwrap().f1;
        assert!((0.40..=0.60).contains(&f1), "{f1}");
        assert!(random_baseline(&Corpus::empty(), 1).is_empty());
    }
}
