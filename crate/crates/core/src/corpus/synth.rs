//! Planted-signal synthetic corpus.
//!
//! Sentence labels follow a Markov chain over the six strategies. Each label
//! owns a private vocabulary, so strategies are lexically separable up to a
//! shared noise vocabulary. Every request also carries a hidden content
//! quality that shows up as quality-specific content words in its sentences,
//! and a share of requests close with a politeness sentence. Success is drawn from a
//! logistic of the base logit, the content effect and every matching
//! label-sequence rule, which makes the planted rules ground truth for the
//! downstream analysis.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, Provenance, Request, Sentence, StrategyLabel};
use crate::error::{Error, Result};

/// Sentence-level target marginals: Co .39, Re .18, Im .12, Cr .08, Po .16, Other .07.
pub const TARGET_MARGINALS: [f64; 6] = [0.39, 0.18, 0.12, 0.08, 0.16, 0.07];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TriggerPattern {
    /// The last sentence carries this label.
    EndsWith { label: StrategyLabel },
    /// The label sequence contains this contiguous run.
    Contains { sequence: Vec<StrategyLabel> },
}

impl TriggerPattern {
    pub fn matches(&self, labels: &[StrategyLabel]) -> bool {
        match self {
            TriggerPattern::EndsWith { label } => labels.last() == Some(label),
            TriggerPattern::Contains { sequence } => {
                !sequence.is_empty() && labels.windows(sequence.len()).any(|w| w == sequence.as_slice())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessRule {
    pub pattern: TriggerPattern,
    pub effect: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub n_requests: usize,
    /// Distribution of the first sentence's label.
    pub initial: Vec<f64>,
    /// Row-stochastic 6x6 label transition matrix.
    pub transition: Vec<Vec<f64>>,
    /// Inclusive range of sentences per request.
    pub sentences_per_request: [usize; 2],
    /// Inclusive range of tokens per sentence.
    pub sentence_length: [usize; 2],
    pub strategy_vocab_size: usize,
    pub noise_vocab_size: usize,
    /// Probability that a token comes from the shared noise vocabulary.
    pub noise_rate: f64,
    /// Words per quality level (high and low each get their own list).
    pub content_vocab_size: usize,
    /// Probability that a token of a content-bearing sentence is a content word.
    pub content_rate: f64,
    /// Labels whose sentences never carry content words.
    pub content_free_labels: Vec<StrategyLabel>,
    pub high_quality_rate: f64,
    /// Probability, for low and high quality requests, that the last sentence
    /// is rewritten as a closing politeness sentence. Unequal rates correlate
    /// the ending with quality; the ending itself never changes the logit.
    pub polite_closing_rate: [f64; 2],
    /// Logit shift of +effect for high-quality requests and -effect otherwise.
    pub quality_effect: f64,
    pub base_logit: f64,
    pub success_rules: Vec<SuccessRule>,
}

impl Default for GenConfig {
    fn default() -> Self {
        let stickiness = 0.4;
        let high_quality_rate = 0.5;
        let polite_closing_rate = [0.3, 0.3];
        let sentences_per_request = [2, 8];
        // Closing rewrites turn a share of final sentences into politeness, so
        // the chain itself runs on marginals scaled to land on the targets.
        let mean_len = (sentences_per_request[0] + sentences_per_request[1]) as f64 / 2.0;
        let rewrite = (high_quality_rate * polite_closing_rate[1]
            + (1.0 - high_quality_rate) * polite_closing_rate[0])
            / mean_len;
        let po = StrategyLabel::Politeness.index();
        let mut chain: Vec<f64> = TARGET_MARGINALS.iter().map(|t| t / (1.0 - rewrite)).collect();
        chain[po] = 1.0 - (0..6).filter(|&j| j != po).map(|j| chain[j]).sum::<f64>();
        let transition = (0..6)
            .map(|i| {
                (0..6)
                    .map(|j| (1.0 - stickiness) * chain[j] + if i == j { stickiness } else { 0.0 })
                    .collect()
            })
            .collect();
        Self {
            n_requests: 5000,
            initial: chain,
            transition,
            sentences_per_request,
            sentence_length: [6, 12],
            strategy_vocab_size: 40,
            noise_vocab_size: 60,
            noise_rate: 0.15,
            content_vocab_size: 30,
            content_rate: 0.3,
            content_free_labels: Vec::new(),
            high_quality_rate,
            polite_closing_rate,
            quality_effect: 2.0,
            base_logit: 0.45,
            success_rules: vec![SuccessRule {
                pattern: TriggerPattern::Contains {
                    sequence: vec![StrategyLabel::Concreteness; 3],
                },
                effect: -3.0,
            }],
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.initial.len() != 6 || (self.initial.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("initial distribution must have 6 entries summing to 1".into());
        }
        if self.transition.len() != 6 {
            return bad("transition matrix must be 6x6".into());
        }
        for (i, row) in self.transition.iter().enumerate() {
            if row.len() != 6 || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return bad(format!("transition row {i} must have 6 entries summing to 1"));
            }
        }
        if self
            .initial
            .iter()
            .chain(self.transition.iter().flatten())
            .any(|p| !(0.0..=1.0).contains(p))
        {
            return bad("probabilities must lie in [0, 1]".into());
        }
        for (name, [lo, hi]) in [
            ("sentence_length", self.sentence_length),
            ("sentences_per_request", self.sentences_per_request),
        ] {
            if lo < 1 || lo > hi {
                return bad(format!("{name} range [{lo}, {hi}] is invalid"));
            }
        }
        if self.strategy_vocab_size == 0 {
            return bad("strategy_vocab_size must be positive".into());
        }
        if self.noise_rate > 0.0 && self.noise_vocab_size == 0 {
            return bad("noise_vocab_size must be positive when noise_rate > 0".into());
        }
        if self.content_rate > 0.0 && self.content_vocab_size == 0 {
            return bad("content_vocab_size must be positive when content_rate > 0".into());
        }
        for (name, p) in [
            ("noise_rate", self.noise_rate),
            ("content_rate", self.content_rate),
            ("high_quality_rate", self.high_quality_rate),
            ("polite_closing_rate[0]", self.polite_closing_rate[0]),
            ("polite_closing_rate[1]", self.polite_closing_rate[1]),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1]"));
            }
        }
        if self.noise_rate + self.content_rate > 1.0 {
            return bad("noise_rate + content_rate must not exceed 1".into());
        }
        Ok(())
    }

    /// Short stable digest of the serialized configuration.
    pub fn hash(&self) -> String {
        crate::stable_hash(self)
    }

    /// Logit of success for a labeled sequence at the given quality.
    pub fn success_logit(&self, labels: &[StrategyLabel], high_quality: bool) -> f64 {
        let quality = if high_quality {
            self.quality_effect
        } else {
            -self.quality_effect
        };
        self.base_logit
            + quality
            + self
                .success_rules
                .iter()
                .filter(|r| r.pattern.matches(labels))
                .map(|r| r.effect)
                .sum::<f64>()
    }
}

fn strategy_word(label: StrategyLabel, k: usize) -> String {
    format!("{}{k}", label.short().to_ascii_lowercase())
}

/// Sample a corpus; identical `(config, seed)` always gives an identical corpus.
pub fn generate_synthetic(config: &GenConfig, seed: u64) -> Result<Corpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let initial = WeightedIndex::new(&config.initial).map_err(|e| Error::Config(e.to_string()))?;
    let rows: Vec<WeightedIndex<f64>> = config
        .transition
        .iter()
        .map(|r| WeightedIndex::new(r).map_err(|e| Error::Config(e.to_string())))
        .collect::<Result<_>>()?;

    let width = config.n_requests.max(1).to_string().len();
    let mut requests = Vec::with_capacity(config.n_requests);
    for n in 0..config.n_requests {
        let high_quality = rng.gen_bool(config.high_quality_rate);
        let len = rng.gen_range(config.sentences_per_request[0]..=config.sentences_per_request[1]);
        let mut labels = Vec::with_capacity(len);
        let mut cur = initial.sample(&mut rng);
        labels.push(StrategyLabel::ALL[cur]);
        for _ in 1..len {
            cur = rows[cur].sample(&mut rng);
            labels.push(StrategyLabel::ALL[cur]);
        }
        if rng.gen_bool(config.polite_closing_rate[usize::from(high_quality)]) {
            *labels.last_mut().expect("at least one sentence") = StrategyLabel::Politeness;
        }

        let sentences = labels
            .iter()
            .map(|&label| {
                let carries_content = !config.content_free_labels.contains(&label);
                let ntok = rng.gen_range(config.sentence_length[0]..=config.sentence_length[1]);
                let mut words = Vec::with_capacity(ntok + 1);
                for _ in 0..ntok {
                    let r: f64 = rng.gen();
                    let word = if r < config.noise_rate {
                        format!("w{}", rng.gen_range(0..config.noise_vocab_size))
                    } else if carries_content && r < config.noise_rate + config.content_rate {
                        let k = rng.gen_range(0..config.content_vocab_size);
                        if high_quality {
                            format!("hq{k}")
                        } else {
                            format!("lq{k}")
                        }
                    } else {
                        strategy_word(label, rng.gen_range(0..config.strategy_vocab_size))
                    };
                    words.push(word);
                }
                Sentence::new(format!("{} .", words.join(" ")), Some(label))
            })
            .collect();

        let p = 1.0 / (1.0 + (-config.success_logit(&labels, high_quality)).exp());
        let success = rng.gen_bool(p);
        requests.push(Request {
            id: format!("syn-{n:0width$}"),
            sentences,
            success,
        });
    }
    Corpus::new(
        requests,
        Provenance::Synthetic {
            seed,
            config_hash: config.hash(),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{strategy_distribution, write_corpus_jsonl};

    fn small(n: usize) -> GenConfig {
        GenConfig {
            n_requests: n,
            ..GenConfig::default()
        }
    }

    #[test]
    fn default_rows_are_stochastic() {
        let c = GenConfig::default();
        c.validate().unwrap();
        for row in &c.transition {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_requests_give_empty_corpus() {
        assert!(generate_synthetic(&small(0), 1).unwrap().is_empty());
    }

    #[test]
    fn same_seed_gives_byte_identical_output() {
        let cfg = small(50);
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_corpus_jsonl(&generate_synthetic(&cfg, 7).unwrap(), &mut a).unwrap();
        write_corpus_jsonl(&generate_synthetic(&cfg, 7).unwrap(), &mut b).unwrap();
        assert_eq!(a, b);
        let mut c = Vec::new();
        write_corpus_jsonl(&generate_synthetic(&cfg, 8).unwrap(), &mut c).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_vocab_is_a_config_error() {
        let cfg = GenConfig {
            strategy_vocab_size: 0,
            ..small(3)
        };
        assert!(matches!(generate_synthetic(&cfg, 1), Err(Error::Config(_))));
        let cfg = GenConfig {
            noise_vocab_size: 0,
            ..small(3)
        };
        assert!(matches!(generate_synthetic(&cfg, 1), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_ranges_are_rejected() {
        let cfg = GenConfig {
            sentence_length: [5, 2],
            ..small(3)
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = small(3);
        cfg.transition[2][0] += 0.01;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn every_sentence_carries_its_label() {
        let c = generate_synthetic(&small(20), 3).unwrap();
        assert!(c.requests.iter().all(|r| r.is_fully_labeled()));
        assert!(c.requests.iter().all(|r| (2..=8).contains(&r.len())));
    }

    #[test]
    fn default_marginals_match_targets() {
        let c = generate_synthetic(&small(5000), 42).unwrap();
        let d = strategy_distribution(&c).unwrap();
        for l in StrategyLabel::ALL {
            let got = d[&l];
            let want = TARGET_MARGINALS[l.index()];
            assert!((got - want).abs() <= 0.03, "{l}: {got} vs {want}");
        }
    }

    #[test]
    fn trigger_patterns() {
        use StrategyLabel::*;
        let seq = [Reciprocity, Concreteness, Concreteness, Concreteness, Politeness];
        assert!(TriggerPattern::Contains { sequence: vec![Concreteness; 3] }.matches(&seq));
        assert!(!TriggerPattern::Contains { sequence: vec![Concreteness; 4] }.matches(&seq));
        assert!(TriggerPattern::EndsWith { label: Politeness }.matches(&seq));
        assert!(!TriggerPattern::EndsWith { label: Impact }.matches(&seq));
    }
}
