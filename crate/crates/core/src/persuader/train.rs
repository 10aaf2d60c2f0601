use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{disentangle_corpus, DisentangledRequest, Persuader, PersuaderConfig};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::metrics::{macro_metrics, MacroMetrics};
use crate::nn::{AdamW, AdamWConfig, ParamStore, Tape};
use crate::vae::VaeModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClfTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
    pub clip_norm: f64,
    pub optimizer: AdamWConfig,
}

impl Default for ClfTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            patience: Some(10),
            clip_norm: 5.0,
            optimizer: AdamWConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClfEpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_macro_f1: Option<f64>,
}

/// Macro metrics of thresholded (0.5) success predictions.
pub fn evaluate_disentangled(model: &Persuader<f32>, requests: &[DisentangledRequest]) -> Result<MacroMetrics> {
    if requests.is_empty() {
        return Err(Error::Input("no requests to evaluate".into()));
    }
    let mut preds = Vec::with_capacity(requests.len());
    let mut golds = Vec::with_capacity(requests.len());
    for r in requests {
        preds.push(model.predict_disentangled(&r.sentences)?.success_probability >= 0.5);
        golds.push(r.success);
    }
    macro_metrics(&preds, &golds)
}

pub fn evaluate(model: &Persuader<f32>, vae: &VaeModel<f32>, corpus: &Corpus) -> Result<MacroMetrics> {
    evaluate_disentangled(model, &disentangle_corpus(vae, corpus)?)
}

/// Minimize success cross entropy; with validation data the epoch with the
/// best macro F1 is kept (earliest on ties).
pub fn train_on_disentangled(
    train: &[DisentangledRequest],
    val: &[DisentangledRequest],
    model_config: &PersuaderConfig,
    train_config: &ClfTrainConfig,
    seed: u64,
) -> Result<(Persuader<f32>, Vec<ClfEpochMetrics>)> {
    if train.is_empty() {
        return Err(Error::Training("empty training corpus".into()));
    }
    if train_config.batch_size == 0 || train_config.epochs == 0 {
        return Err(Error::Config("epochs and batch_size must be positive".into()));
    }
    let mut model = Persuader::<f32>::new(model_config.clone(), seed)?;
    let mut opt = AdamW::new(&model.params, train_config.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc1a5_5e7d);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, ParamStore<f32>)> = None;
    let mut since_best = 0;

    for epoch in 1..=train_config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(train_config.batch_size) {
            let mut grads = model.params.zero_grads();
            for &i in batch {
                let r = &train[i];
                let mut tape = Tape::new(&model.params);
                let f = model.forward(&mut tape, &r.sentences)?;
                let loss = tape.cross_entropy(f.logits, r.success as usize);
                let logits = tape.value(f.logits);
                correct += ((logits[1] > logits[0]) == r.success) as usize;
                loss_sum += tape.scalar(loss) as f64;
                tape.backward(loss)?.accumulate(&mut grads);
            }
            grads.scale(1.0 / batch.len() as f32);
            if !grads.all_finite() {
                return Err(Error::Numeric(format!("non-finite classifier gradient in epoch {epoch}")));
            }
            grads.clip_norm(train_config.clip_norm);
            opt.step(&mut model.params, &grads)?;
        }

        let val_f1 = if val.is_empty() {
            None
        } else {
            Some(evaluate_disentangled(&model, val)?.f1)
        };
        let m = ClfEpochMetrics {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            val_macro_f1: val_f1,
        };
        log::info!(
            "classifier epoch {epoch}: loss {:.4} acc {:.4} val_f1 {}",
            m.train_loss,
            m.train_accuracy,
            m.val_macro_f1.map_or("-".into(), |x| format!("{x:.4}"))
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

pub fn train_classifier(
    train: &Corpus,
    val: &Corpus,
    vae: &VaeModel<f32>,
    model_config: &PersuaderConfig,
    train_config: &ClfTrainConfig,
    seed: u64,
) -> Result<(Persuader<f32>, Vec<ClfEpochMetrics>)> {
    let train = disentangle_corpus(vae, train)?;
    let val = disentangle_corpus(vae, val)?;
    train_on_disentangled(&train, &val, model_config, train_config, seed)
}
