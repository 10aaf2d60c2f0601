//! Semi-supervised VAE separating a sentence into a content code `z` and a
//! strategy distribution `l`.
//!
//! Three LSTMs share one token embedding table:
//! - the discriminative network `q(l|x)`: LSTM over tokens, last state to 6 logits;
//! - the inference network `q(z|x,l)`: LSTM over tokens, last state joined with
//!   `l` and projected to the mean and log-variance of `z`;
//! - the generative network `p(x|z,l)`: LSTM decoder whose initial state is
//!   `tanh(W [z; l] + b)` and whose step input is `[emb(prev); z; l]`,
//!   trained with teacher forcing.
//!
//! Priors are `p(z) = N(0, I)` and `p(l)` uniform unless configured otherwise.

mod train;

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{Request, StrategyLabel, Vocab, BOS, EOS_TOKEN};
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, Linear, LstmParams, ParamId, ParamStore, Real, Tape, Var};

pub use train::{evaluate_vae, fit_vae, init_vae, train_vae, VaeEpochMetrics, VaeTrainConfig};

pub const NUM_LABELS: usize = StrategyLabel::COUNT;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VaeConfig {
    pub embed_dim: usize,
    pub latent_dim: usize,
    pub hidden_dim: usize,
    /// Gumbel-softmax temperature.
    pub temperature: f64,
    /// Weight of the labeled cross-entropy term on `q(l|x)`.
    pub class_weight: f64,
    /// Prior over strategies; `None` means uniform.
    pub label_prior: Option<Vec<f64>>,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            embed_dim: 128,
            latent_dim: 64,
            hidden_dim: 64,
            temperature: 1.0,
            class_weight: 1.0,
            label_prior: None,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.latent_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("VAE dimensions must be positive".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Parameter(format!(
                "Gumbel temperature must be positive, got {}",
                self.temperature
            )));
        }
        if let Some(p) = &self.label_prior {
            if p.len() != NUM_LABELS
                || p.iter().any(|x| !(*x > 0.0))
                || (p.iter().sum::<f64>() - 1.0).abs() > 1e-6
            {
                return Err(Error::Config("label prior must be 6 positive values summing to 1".into()));
            }
        }
        Ok(())
    }

    fn log_prior(&self) -> Vec<f64> {
        match &self.label_prior {
            Some(p) => p.iter().map(|x| x.ln()).collect(),
            None => vec![-(NUM_LABELS as f64).ln(); NUM_LABELS],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeLayout {
    pub embedding: ParamId,
    pub classifier: LstmParams,
    pub classifier_head: Linear,
    pub encoder: LstmParams,
    pub mu_head: Linear,
    pub logvar_head: Linear,
    pub decoder_init: Linear,
    pub decoder: LstmParams,
    pub decoder_out: Linear,
}

/// Frozen randomness for one loss evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeNoise {
    /// Standard normal draws for the reparameterized `z`.
    pub gaussian: Vec<f64>,
    /// Standard Gumbel draws for the relaxed `l`.
    pub gumbel: Vec<f64>,
}

impl VaeNoise {
    pub fn zeros(latent_dim: usize) -> Self {
        Self {
            gaussian: vec![0.0; latent_dim],
            gumbel: vec![0.0; NUM_LABELS],
        }
    }

    pub fn sample<R: Rng>(rng: &mut R, latent_dim: usize) -> Self {
        let gaussian = (0..latent_dim).map(|_| rng.sample(StandardNormal)).collect();
        let gumbel = (0..NUM_LABELS).map(|_| sample_gumbel(rng)).collect();
        Self { gaussian, gumbel }
    }
}

pub fn sample_gumbel<R: Rng>(rng: &mut R) -> f64 {
    let u: f64 = rng.gen::<f64>().clamp(1e-20, 1.0 - 1e-12);
    -(-u.ln()).ln()
}

/// `z = mu + exp(logvar / 2) * noise`
pub fn reparameterize(mu: &[f64], logvar: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != logvar.len() || mu.len() != noise.len() {
        return Err(Error::Shape(format!(
            "reparameterize: mu[{}], logvar[{}], noise[{}]",
            mu.len(),
            logvar.len(),
            noise.len()
        )));
    }
    Ok(mu
        .iter()
        .zip(logvar)
        .zip(noise)
        .map(|((m, lv), e)| m + (lv / 2.0).exp() * e)
        .collect())
}

/// `softmax((logits + noise) / tau)`
pub fn gumbel_softmax(logits: &[f64], tau: f64, noise: &[f64]) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::Parameter(format!("temperature must be positive, got {tau}")));
    }
    if logits.len() != noise.len() {
        return Err(Error::Shape(format!(
            "gumbel_softmax: logits[{}], noise[{}]",
            logits.len(),
            noise.len()
        )));
    }
    let scaled: Vec<f64> = logits.iter().zip(noise).map(|(l, g)| (l + g) / tau).collect();
    Ok(crate::nn::softmax(&scaled))
}

/// `KL(N(mu, exp(logvar)) || N(0, I)) = -1/2 sum(1 + logvar - mu^2 - exp(logvar))`
pub fn kl_gaussian(mu: &[f64], logvar: &[f64]) -> f64 {
    -0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| 1.0 + lv - m * m - lv.exp())
        .sum::<f64>()
}

/// A sentence split into content and strategy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisentangledSentence {
    /// Posterior mean of `q(z | x, argmax q(l|x))`.
    pub z: Vec<f64>,
    /// Full strategy distribution `q(l|x)`.
    pub l: Vec<f64>,
    pub gold_label: Option<StrategyLabel>,
}

impl DisentangledSentence {
    pub fn predicted_label(&self) -> StrategyLabel {
        StrategyLabel::ALL[argmax(&self.l)]
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Labeled objective terms; `total = recon + kl_z + class_weight * class_ce`.
#[derive(Clone, Copy, Debug)]
pub struct LabeledLoss {
    pub total: Var,
    pub recon: Var,
    pub kl_z: Var,
    pub class_ce: Var,
}

/// Unlabeled objective terms; `total = recon + kl_z + kl_l`.
#[derive(Clone, Copy, Debug)]
pub struct UnlabeledLoss {
    pub total: Var,
    pub recon: Var,
    pub kl_z: Var,
    pub kl_l: Var,
    /// Relaxed strategy sample fed to the encoder and decoder.
    pub l_sample: Var,
}

/// Negative ELBO pieces given a strategy vector.
#[derive(Clone, Copy, Debug)]
pub struct ElboTerms {
    pub recon: Var,
    pub kl_z: Var,
    pub mu: Var,
    pub logvar: Var,
    pub z: Var,
}

#[derive(Clone, Debug)]
pub struct VaeModel<T: Real = f32> {
    pub config: VaeConfig,
    pub vocab: Vocab,
    pub params: ParamStore<T>,
    layout: VaeLayout,
}

impl<T: Real> VaeModel<T> {
    pub fn new(config: VaeConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (e, z, h, v) = (config.embed_dim, config.latent_dim, config.hidden_dim, vocab.len());
        // embeddings are uniform(-1/sqrt(dim), 1/sqrt(dim))
        let embedding = store.add_matrix("embedding", v, e, &mut rng);
        let classifier = LstmParams::init(&mut store, "classifier.lstm", e, h, &mut rng);
        let classifier_head = Linear::init(&mut store, "classifier.head", h, NUM_LABELS, &mut rng);
        let encoder = LstmParams::init(&mut store, "encoder.lstm", e, h, &mut rng);
        let mu_head = Linear::init(&mut store, "encoder.mu", h + NUM_LABELS, z, &mut rng);
        let logvar_head = Linear::init(&mut store, "encoder.logvar", h + NUM_LABELS, z, &mut rng);
        let decoder_init = Linear::init(&mut store, "decoder.init", z + NUM_LABELS, h, &mut rng);
        let decoder = LstmParams::init(&mut store, "decoder.lstm", e + z + NUM_LABELS, h, &mut rng);
        let decoder_out = Linear::init(&mut store, "decoder.out", h, v, &mut rng);
        Ok(Self {
            config,
            vocab,
            params: store,
            layout: VaeLayout {
                embedding,
                classifier,
                classifier_head,
                encoder,
                mu_head,
                logvar_head,
                decoder_init,
                decoder,
                decoder_out,
            },
        })
    }

    pub fn layout(&self) -> &VaeLayout {
        &self.layout
    }

    pub fn cast<U: Real>(&self) -> VaeModel<U> {
        VaeModel {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    /// Token ids for a token list; out-of-vocabulary tokens map to UNK.
    pub fn encode_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<usize>> {
        if tokens.is_empty() {
            return Err(Error::Input("empty token sequence".into()));
        }
        Ok(self.vocab.encode(tokens))
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::Input("empty token sequence".into()));
        }
        if let Some(bad) = ids.iter().find(|&&i| i >= self.vocab.len()) {
            return Err(Error::Input(format!("token id {bad} outside vocabulary of {}", self.vocab.len())));
        }
        Ok(())
    }

    pub fn embed(&self, tape: &mut Tape<'_, T>, ids: &[usize]) -> Vec<Var> {
        let table = tape.param(self.layout.embedding);
        ids.iter().map(|&i| tape.gather(table, i)).collect()
    }

    /// Logits of `q(l|x)`.
    pub fn class_logits(&self, tape: &mut Tape<'_, T>, embs: &[Var]) -> Result<Var> {
        let hs = self.layout.classifier.run(tape, embs)?;
        let last = *hs.last().ok_or_else(|| Error::Input("empty token sequence".into()))?;
        Ok(self.layout.classifier_head.forward(tape, last))
    }

    /// Mean and log-variance of `q(z|x,l)`.
    pub fn posterior(&self, tape: &mut Tape<'_, T>, embs: &[Var], l: Var) -> Result<(Var, Var)> {
        let hs = self.layout.encoder.run(tape, embs)?;
        let last = *hs.last().ok_or_else(|| Error::Input("empty token sequence".into()))?;
        let joint = tape.concat(&[last, l]);
        let mu = self.layout.mu_head.forward(tape, joint);
        let logvar = self.layout.logvar_head.forward(tape, joint);
        Ok((mu, logvar))
    }

    /// Token-level cross entropy of `x` under the decoder, teacher forced,
    /// with targets `x_1 .. x_n, EOS` and inputs `BOS, x_1 .. x_n`.
    pub fn reconstruction(
        &self,
        tape: &mut Tape<'_, T>,
        ids: &[usize],
        embs: &[Var],
        z: Var,
        l: Var,
    ) -> Result<Var> {
        let lay = &self.layout;
        let zl = tape.concat(&[z, l]);
        let init = lay.decoder_init.forward(tape, zl);
        let mut h = tape.tanh(init);
        let mut c = tape.zeros(lay.decoder.hidden_size);
        let table = tape.param(lay.embedding);
        let bos = tape.gather(table, BOS);
        let mut terms = Vec::with_capacity(ids.len() + 1);
        for t in 0..=ids.len() {
            let prev = if t == 0 { bos } else { embs[t - 1] };
            let input = tape.concat(&[prev, zl]);
            let (h2, c2) = lay.decoder.step(tape, input, h, c)?;
            h = h2;
            c = c2;
            let logits = lay.decoder_out.forward(tape, h);
            let target = if t < ids.len() { ids[t] } else { EOS_TOKEN };
            terms.push(tape.cross_entropy(logits, target));
        }
        Ok(tape.add_n(&terms))
    }

    pub fn reparameterize_on(&self, tape: &mut Tape<'_, T>, mu: Var, logvar: Var, noise: &[f64]) -> Result<Var> {
        if noise.len() != tape.size(mu) {
            return Err(Error::Shape(format!(
                "noise of length {} for latent of {}",
                noise.len(),
                tape.size(mu)
            )));
        }
        let half = tape.scale(logvar, T::from_f64(0.5));
        let sigma = tape.exp(half);
        let eps = tape.vector(noise.iter().map(|x| T::from_f64(*x)).collect());
        let scaled = tape.mul(sigma, eps);
        Ok(tape.add(mu, scaled))
    }

    pub fn kl_gaussian_on(&self, tape: &mut Tape<'_, T>, mu: Var, logvar: Var) -> Var {
        // -1/2 sum(1 + logvar - mu^2 - exp(logvar))
        let mu2 = tape.square(mu);
        let ev = tape.exp(logvar);
        let a = tape.sub(logvar, mu2);
        let b = tape.sub(a, ev);
        let c = tape.add_const(b, T::one());
        let s = tape.sum(c);
        tape.scale(s, T::from_f64(-0.5))
    }

    /// Reconstruction and Gaussian KL for a given strategy vector `l`.
    pub fn elbo_terms(
        &self,
        tape: &mut Tape<'_, T>,
        ids: &[usize],
        embs: &[Var],
        l: Var,
        gaussian: &[f64],
    ) -> Result<ElboTerms> {
        let (mu, logvar) = self.posterior(tape, embs, l)?;
        let z = self.reparameterize_on(tape, mu, logvar, gaussian)?;
        let recon = self.reconstruction(tape, ids, embs, z, l)?;
        let kl_z = self.kl_gaussian_on(tape, mu, logvar);
        Ok(ElboTerms {
            recon,
            kl_z,
            mu,
            logvar,
            z,
        })
    }

    fn one_hot(&self, tape: &mut Tape<'_, T>, label: StrategyLabel) -> Var {
        let mut v = vec![T::zero(); NUM_LABELS];
        v[label.index()] = T::one();
        tape.vector(v)
    }

    /// Negative labeled ELBO with `l` observed, plus the weighted
    /// cross-entropy of `q(l|x)` against the gold label.
    pub fn loss_labeled(
        &self,
        tape: &mut Tape<'_, T>,
        ids: &[usize],
        label: StrategyLabel,
        noise: &VaeNoise,
    ) -> Result<LabeledLoss> {
        self.check_ids(ids)?;
        let embs = self.embed(tape, ids);
        let l = self.one_hot(tape, label);
        let terms = self.elbo_terms(tape, ids, &embs, l, &noise.gaussian)?;
        let logits = self.class_logits(tape, &embs)?;
        let class_ce = tape.cross_entropy(logits, label.index());
        let weighted = tape.scale(class_ce, T::from_f64(self.config.class_weight));
        let total = tape.add_n(&[terms.recon, terms.kl_z, weighted]);
        Ok(LabeledLoss {
            total,
            recon: terms.recon,
            kl_z: terms.kl_z,
            class_ce,
        })
    }

    /// Negative unlabeled ELBO: one relaxed sample `l ~ q(l|x)`, one `z ~ q(z|x,l)`,
    /// and `KL(q(l|x) || p(l))`.
    pub fn loss_unlabeled(&self, tape: &mut Tape<'_, T>, ids: &[usize], noise: &VaeNoise) -> Result<UnlabeledLoss> {
        self.check_ids(ids)?;
        if noise.gumbel.len() != NUM_LABELS {
            return Err(Error::Shape(format!("expected {NUM_LABELS} Gumbel draws, got {}", noise.gumbel.len())));
        }
        let embs = self.embed(tape, ids);
        let logits = self.class_logits(tape, &embs)?;

        let g = tape.vector(noise.gumbel.iter().map(|x| T::from_f64(*x)).collect());
        let perturbed = tape.add(logits, g);
        let scaled = tape.scale(perturbed, T::from_f64(1.0 / self.config.temperature));
        let l_sample = tape.softmax(scaled);

        let terms = self.elbo_terms(tape, ids, &embs, l_sample, &noise.gaussian)?;

        let log_q = tape.log_softmax(logits);
        let q = tape.exp(log_q);
        let log_p = tape.vector(self.config.log_prior().into_iter().map(T::from_f64).collect());
        let ratio = tape.sub(log_q, log_p);
        let kl_l = tape.dot(q, ratio);

        let total = tape.add_n(&[terms.recon, terms.kl_z, kl_l]);
        Ok(UnlabeledLoss {
            total,
            recon: terms.recon,
            kl_z: terms.kl_z,
            kl_l,
            l_sample,
        })
    }

    pub fn classify_ids(&self, ids: &[usize]) -> Result<Vec<f64>> {
        self.check_ids(ids)?;
        let mut tape = Tape::new(&self.params);
        let embs = self.embed(&mut tape, ids);
        let logits = self.class_logits(&mut tape, &embs)?;
        let p = tape.softmax(logits);
        Ok(tape.value(p).iter().map(|x| x.as_f64()).collect())
    }

    /// Strategy distribution `q(l|x)` for a tokenized sentence.
    pub fn classify_sentence<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<f64>> {
        let ids = self.encode_tokens(tokens)?;
        self.classify_ids(&ids)
    }

    pub fn predict_label<S: AsRef<str>>(&self, tokens: &[S]) -> Result<StrategyLabel> {
        Ok(StrategyLabel::ALL[argmax(&self.classify_sentence(tokens)?)])
    }

    /// Deterministic split of one sentence: full `q(l|x)` and the posterior
    /// mean of `z` given the most likely strategy.
    pub fn disentangle_ids(&self, ids: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_ids(ids)?;
        let mut tape = Tape::new(&self.params);
        let embs = self.embed(&mut tape, ids);
        let logits = self.class_logits(&mut tape, &embs)?;
        let p = tape.softmax(logits);
        let l: Vec<f64> = tape.value(p).iter().map(|x| x.as_f64()).collect();
        let hard = self.one_hot(&mut tape, StrategyLabel::ALL[argmax(&l)]);
        let (mu, _) = self.posterior(&mut tape, &embs, hard)?;
        let z = tape.value(mu).iter().map(|x| x.as_f64()).collect();
        Ok((z, l))
    }

    pub fn disentangle(&self, request: &Request) -> Result<Vec<DisentangledSentence>> {
        if request.is_empty() {
            return Err(Error::Input(format!("request `{}` has no sentences", request.id)));
        }
        request
            .sentences
            .iter()
            .map(|s| {
                let ids = self.encode_tokens(&s.tokens())?;
                let (z, l) = self.disentangle_ids(&ids)?;
                Ok(DisentangledSentence {
                    z,
                    l,
                    gold_label: s.label,
                })
            })
            .collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = self.params.to_checkpoint();
        ckpt.meta.insert("kind".into(), "vae".into());
        ckpt.meta.insert("config".into(), serde_json::to_value(&self.config).expect("config"));
        ckpt.meta.insert("vocab".into(), serde_json::to_value(&self.vocab).expect("vocab"));
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.meta.get("kind").and_then(|v| v.as_str()) != Some("vae") {
            return Err(Error::Checkpoint("not a VAE checkpoint".into()));
        }
        let meta = |k: &str| {
            ckpt.meta
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("missing `{k}` in checkpoint metadata")))
        };
        let config: VaeConfig = serde_json::from_value(meta("config")?).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let vocab: Vocab = serde_json::from_value(meta("vocab")?).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut model = Self::new(config, vocab, 0)?;
        model.params.load_checkpoint(ckpt)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Overwrite embedding rows from a text file: a `vocab_size dim` header,
    /// then `token v1 .. v_dim` per line. Returns how many rows were replaced.
    pub fn load_embeddings(&mut self, path: &Path) -> Result<usize> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Input("empty embedding file".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::Input(format!("bad embedding header `{header}`"))))
            .collect::<Result<_>>()?;
        if dims.len() != 2 {
            return Err(Error::Input(format!("bad embedding header `{header}`")));
        }
        if dims[1] != self.config.embed_dim {
            return Err(Error::Shape(format!(
                "embedding file has dimension {}, model uses {}",
                dims[1], self.config.embed_dim
            )));
        }
        let dim = dims[1];
        let id = self.layout.embedding;
        let mut replaced = 0;
        for (n, line) in lines.enumerate() {
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let values: Vec<f64> = parts
                .map(|p| p.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Input(format!("embedding line {}: bad number", n + 2)))?;
            if values.len() != dim {
                return Err(Error::Shape(format!("embedding line {}: {} values, expected {dim}", n + 2, values.len())));
            }
            if let Some(row) = self.vocab.get(token) {
                let data = self.params.get_mut(id).data_mut();
                for (dst, v) in data[row * dim..(row + 1) * dim].iter_mut().zip(&values) {
                    *dst = T::from_f64(*v);
                }
                replaced += 1;
            }
        }
        Ok(replaced)
    }

    #[cfg(test)]
    pub(crate) fn embedding_tensor(&self) -> &crate::nn::Tensor<T> {
        self.params.get(self.layout.embedding)
    }
}

#[cfg(test)]
mod tests;
