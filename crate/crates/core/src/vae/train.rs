use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, VaeConfig, VaeModel, VaeNoise};
use crate::corpus::{Corpus, StrategyLabel, Vocab};
use crate::error::{Error, Result};
use crate::metrics::{macro_metrics, MacroMetrics};
use crate::nn::{AdamW, AdamWConfig, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VaeTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
    pub clip_norm: f64,
    /// Tokens seen fewer times are mapped to UNK.
    pub min_count: usize,
    pub optimizer: AdamWConfig,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 16,
            patience: None,
            clip_norm: 5.0,
            min_count: 1,
            optimizer: AdamWConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeEpochMetrics {
    pub epoch: usize,
    /// Mean labeled loss per sentence.
    pub labeled_loss: f64,
    /// Mean unlabeled loss per sentence, `None` with no unlabeled data.
    pub unlabeled_loss: Option<f64>,
    pub val_macro_f1: Option<f64>,
}

enum Item {
    Labeled(Vec<usize>, StrategyLabel),
    Unlabeled(Vec<usize>),
}

/// Sentence-level macro metrics of `q(l|x)` against the gold labels in
/// `corpus`. Unlabeled and empty sentences are ignored.
pub fn evaluate_vae(model: &VaeModel<f32>, corpus: &Corpus) -> Result<MacroMetrics> {
    let mut preds = Vec::new();
    let mut golds = Vec::new();
    for s in corpus.sentences() {
        let Some(gold) = s.label else { continue };
        let tokens = s.tokens();
        if tokens.is_empty() {
            continue;
        }
        preds.push(argmax(&model.classify_sentence(&tokens)?));
        golds.push(gold.index());
    }
    if golds.is_empty() {
        return Err(Error::Input("no labeled sentences to evaluate".into()));
    }
    macro_metrics(&preds, &golds)
}

fn sentence_macro_f1(model: &VaeModel<f32>, corpus: &Corpus) -> Result<Option<f64>> {
    match evaluate_vae(model, corpus) {
        Ok(m) => Ok(Some(m.f1)),
        Err(Error::Input(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Train the VAE on every labeled sentence of `labeled` and every sentence of
/// `unlabeled`. With a validation corpus the parameters of the epoch with the
/// best sentence-level macro F1 are returned (earliest on ties); otherwise
/// those after the last epoch.
pub fn train_vae(
    labeled: &Corpus,
    unlabeled: &Corpus,
    val: Option<&Corpus>,
    model_config: &VaeConfig,
    train_config: &VaeTrainConfig,
    seed: u64,
) -> Result<(VaeModel<f32>, Vec<VaeEpochMetrics>)> {
    let model = init_vae(labeled, unlabeled, model_config, train_config, seed)?;
    fit_vae(model, labeled, unlabeled, val, train_config, seed)
}

/// Fresh model over the vocabulary of both training corpora.
pub fn init_vae(
    labeled: &Corpus,
    unlabeled: &Corpus,
    model_config: &VaeConfig,
    train_config: &VaeTrainConfig,
    seed: u64,
) -> Result<VaeModel<f32>> {
    let vocab_source = Corpus::concat(&[labeled, unlabeled])?;
    let vocab = Vocab::build(&vocab_source, train_config.min_count.max(1));
    VaeModel::<f32>::new(model_config.clone(), vocab, seed)
}

/// Continue training `model` (for example after loading word vectors) as
/// [`train_vae`] does.
pub fn fit_vae(
    mut model: VaeModel<f32>,
    labeled: &Corpus,
    unlabeled: &Corpus,
    val: Option<&Corpus>,
    train_config: &VaeTrainConfig,
    seed: u64,
) -> Result<(VaeModel<f32>, Vec<VaeEpochMetrics>)> {
    if train_config.batch_size == 0 || train_config.epochs == 0 {
        return Err(Error::Config("epochs and batch_size must be positive".into()));
    }
    let mut items = Vec::new();
    for s in labeled.sentences() {
        let tokens = s.tokens();
        if tokens.is_empty() {
            continue;
        }
        match s.label {
            Some(l) => items.push(Item::Labeled(model.vocab.encode(&tokens), l)),
            None => items.push(Item::Unlabeled(model.vocab.encode(&tokens))),
        }
    }
    if !items.iter().any(|i| matches!(i, Item::Labeled(..))) {
        return Err(Error::Training("no labeled sentences to train on".into()));
    }
    for s in unlabeled.sentences() {
        let tokens = s.tokens();
        if !tokens.is_empty() {
            items.push(Item::Unlabeled(model.vocab.encode(&tokens)));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0fae);
    let mut opt = AdamW::new(&model.params, train_config.optimizer);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, crate::nn::ParamStore<f32>)> = None;
    let mut since_best = 0;
    let latent = model.config.latent_dim;

    for epoch in 1..=train_config.epochs {
        order.shuffle(&mut rng);
        let (mut lab_sum, mut lab_n, mut unl_sum, mut unl_n) = (0.0, 0usize, 0.0, 0usize);
        for batch in order.chunks(train_config.batch_size) {
            let mut grads = model.params.zero_grads();
            for &i in batch {
                let noise = VaeNoise::sample(&mut rng, latent);
                let mut tape = Tape::new(&model.params);
                let loss = match &items[i] {
                    Item::Labeled(ids, l) => {
                        let v = model.loss_labeled(&mut tape, ids, *l, &noise)?.total;
                        lab_sum += tape.scalar(v) as f64;
                        lab_n += 1;
                        v
                    }
                    Item::Unlabeled(ids) => {
                        let v = model.loss_unlabeled(&mut tape, ids, &noise)?.total;
                        unl_sum += tape.scalar(v) as f64;
                        unl_n += 1;
                        v
                    }
                };
                tape.backward(loss)?.accumulate(&mut grads);
            }
            grads.scale(1.0 / batch.len() as f32);
            if !grads.all_finite() {
                return Err(Error::Numeric(format!("non-finite VAE gradient in epoch {epoch}")));
            }
            grads.clip_norm(train_config.clip_norm);
            opt.step(&mut model.params, &grads)?;
        }

        let val_f1 = match val {
            Some(v) => sentence_macro_f1(&model, v)?,
            None => None,
        };
        let m = VaeEpochMetrics {
            epoch,
            labeled_loss: lab_sum / lab_n.max(1) as f64,
            unlabeled_loss: (unl_n > 0).then(|| unl_sum / unl_n as f64),
            val_macro_f1: val_f1,
        };
        log::info!(
            "vae epoch {epoch}: labeled {:.4} unlabeled {} val_f1 {}",
            m.labeled_loss,
            m.unlabeled_loss.map_or("-".into(), |x| format!("{x:.4}")),
            m.val_macro_f1.map_or("-".into(), |x| format!("{x:.4}")),
        );
        history.push(m);

        if let Some(f1) = val_f1 {
            if best.as_ref().is_none_or(|(b, _)| f1 > *b) {
                best = Some((f1, model.params.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if train_config.patience.is_some_and(|p| since_best >= p) {
                    break;
                }
            }
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok((model, history))
}
