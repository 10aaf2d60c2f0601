use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, StrategyLabel, Vocab};
use crate::error::{Error, Result};
use crate::metrics::{macro_metrics, MacroMetrics};
use crate::nn::{AdamW, AdamWConfig, Linear, LstmParams, ParamId, ParamStore, Tape, Var};
use crate::vae::{argmax, NUM_LABELS};

/// Embedding, LSTM and a linear head over the last state; no latent structure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SentenceLstmConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub min_count: usize,
    pub optimizer: AdamWConfig,
}

impl Default for SentenceLstmConfig {
    fn default() -> Self {
        Self {
            embed_dim: 128,
            hidden_dim: 64,
            epochs: 10,
            batch_size: 16,
            min_count: 1,
            optimizer: AdamWConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SentenceLstm {
    pub vocab: Vocab,
    pub params: ParamStore<f32>,
    embedding: ParamId,
    lstm: LstmParams,
    head: Linear,
}

impl SentenceLstm {
    pub fn new(vocab: Vocab, config: &SentenceLstmConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let embedding = params.add_matrix("embedding", vocab.len(), config.embed_dim, &mut rng);
        let lstm = LstmParams::init(&mut params, "lstm", config.embed_dim, config.hidden_dim, &mut rng);
        let head = Linear::init(&mut params, "head", config.hidden_dim, NUM_LABELS, &mut rng);
        Self {
            vocab,
            params,
            embedding,
            lstm,
            head,
        }
    }

    fn logits(&self, tape: &mut Tape<'_, f32>, ids: &[usize]) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::Input("empty token sequence".into()));
        }
        let table = tape.param(self.embedding);
        let embs: Vec<Var> = ids.iter().map(|&i| tape.gather(table, i)).collect();
        let hs = self.lstm.run(tape, &embs)?;
        Ok(self.head.forward(tape, *hs.last().expect("non-empty")))
    }

    pub fn predict<S: AsRef<str>>(&self, tokens: &[S]) -> Result<StrategyLabel> {
        let ids = self.vocab.encode(tokens);
        let mut tape = Tape::new(&self.params);
        let logits = self.logits(&mut tape, &ids)?;
        let v: Vec<f64> = tape.value(logits).iter().map(|x| *x as f64).collect();
        Ok(StrategyLabel::ALL[argmax(&v)])
    }
}

pub fn train_sentence_lstm(labeled: &Corpus, config: &SentenceLstmConfig, seed: u64) -> Result<SentenceLstm> {
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(Error::Config("epochs and batch_size must be positive".into()));
    }
    let vocab = Vocab::build(labeled, config.min_count);
    let mut model = SentenceLstm::new(vocab, config, seed);
    let items: Vec<(Vec<usize>, StrategyLabel)> = labeled
        .sentences()
        .filter_map(|s| {
            let tokens = s.tokens();
            match s.label {
                Some(l) if !tokens.is_empty() => Some((model.vocab.encode(&tokens), l)),
                _ => None,
            }
        })
        .collect();
    if items.is_empty() {
        return Err(Error::Training("no labeled sentences to train on".into()));
    }
    let mut opt = AdamW::new(&model.params, config.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1575);
    let mut order: Vec<usize> = (0..items.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let mut grads = model.params.zero_grads();
            for &i in batch {
                let (ids, label) = &items[i];
                let mut tape = Tape::new(&model.params);
                let logits = model.logits(&mut tape, ids)?;
                let loss = tape.cross_entropy(logits, label.index());
                tape.backward(loss)?.accumulate(&mut grads);
            }
            grads.scale(1.0 / batch.len() as f32);
            grads.clip_norm(5.0);
            opt.step(&mut model.params, &grads)?;
        }
    }
    Ok(model)
}

/// Sentence-level macro metrics against gold labels.
pub fn evaluate_sentence_lstm(model: &SentenceLstm, corpus: &Corpus) -> Result<MacroMetrics> {
    let mut preds = Vec::new();
    let mut golds = Vec::new();
    for s in corpus.sentences() {
        let tokens = s.tokens();
        if let (Some(g), false) = (s.label, tokens.is_empty()) {
            preds.push(model.predict(&tokens)?);
            golds.push(g);
        }
    }
    macro_metrics(&preds, &golds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, GenConfig};

    #[test]
    fn learns_separable_strategy_vocabularies() {
        let c = generate_synthetic(
            &GenConfig {
                n_requests: 60,
                strategy_vocab_size: 4,
                sentence_length: [3, 4],
                noise_rate: 0.0,
                content_rate: 0.0,
                ..GenConfig::default()
            },
            4,
        )
        .unwrap();
        let cfg = SentenceLstmConfig {
            embed_dim: 8,
            hidden_dim: 8,
            epochs: 8,
            optimizer: AdamWConfig {
                lr: 1e-2,
                ..AdamWConfig::default()
            },
            ..Default::default()
        };
        let m = train_sentence_lstm(&c, &cfg, 1).unwrap();
        assert!(evaluate_sentence_lstm(&m, &c).unwrap().f1 > 0.8);
    }
}
