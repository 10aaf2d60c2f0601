//! Request-level persuasiveness classifier.
//!
//! Each sentence arrives as a `(z, l)` pair from the VAE. A two-way attention
//! decides how much of the fused vector comes from content versus strategy:
//!
//! ```text
//! u_z = tanh(W_z z + b)      u_l = tanh(W_l l + b)
//! a   = softmax(u_z . u_q, u_l . u_q)
//! g   = [a_0 z ; a_1 l]
//! ```
//!
//! An LSTM runs over the fused sentences, request attention pools its states
//! with `softmax(u_s . tanh(W_s h_i + b_s))`, and an MLP maps the pooled vector
//! to two logits (index 1 is success).

mod train;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Request, StrategyLabel};
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, Linear, LstmParams, ParamId, ParamStore, Real, Tape, Var};
use crate::vae::{argmax, DisentangledSentence, VaeModel, NUM_LABELS};

pub use train::{evaluate, evaluate_disentangled, train_classifier, train_on_disentangled, ClfEpochMetrics, ClfTrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PersuaderConfig {
    pub latent_dim: usize,
    /// Width of the sentence attention space.
    pub attention_dim: usize,
    pub hidden_dim: usize,
    pub mlp_hidden: usize,
}

impl Default for PersuaderConfig {
    fn default() -> Self {
        Self {
            latent_dim: 64,
            attention_dim: 64,
            hidden_dim: 128,
            mlp_hidden: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PersuaderLayout {
    pub w_z: ParamId,
    pub w_l: ParamId,
    /// Bias shared by both sentence-attention projections.
    pub b: ParamId,
    pub u_q: ParamId,
    pub lstm: LstmParams,
    pub w_s: ParamId,
    pub b_s: ParamId,
    pub u_s: ParamId,
    pub mlp_hidden: Linear,
    pub mlp_out: Linear,
}

/// Attention weights behind one prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    /// Per sentence: weight on content, weight on strategy.
    pub sentence: Vec<[f64; 2]>,
    /// Per sentence request-level weight.
    pub request: Vec<f64>,
    pub success_probability: f64,
}

impl AttentionTrace {
    /// Index of the highest request-level weight; ties go to the earliest sentence.
    pub fn argmax_sentence(&self) -> usize {
        argmax(&self.request)
    }
}

/// A request after the VAE pass; what the classifier and analysis consume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisentangledRequest {
    pub id: String,
    pub sentences: Vec<DisentangledSentence>,
    pub success: bool,
}

impl DisentangledRequest {
    /// Gold label where annotated, otherwise the VAE's argmax.
    pub fn labels(&self) -> Vec<StrategyLabel> {
        self.sentences
            .iter()
            .map(|s| s.gold_label.unwrap_or_else(|| s.predicted_label()))
            .collect()
    }

    pub fn predicted_labels(&self) -> Vec<StrategyLabel> {
        self.sentences.iter().map(|s| s.predicted_label()).collect()
    }
}

pub fn disentangle_request(vae: &VaeModel<f32>, request: &Request) -> Result<DisentangledRequest> {
    Ok(DisentangledRequest {
        id: request.id.clone(),
        sentences: vae.disentangle(request)?,
        success: request.success,
    })
}

pub fn disentangle_corpus(vae: &VaeModel<f32>, corpus: &Corpus) -> Result<Vec<DisentangledRequest>> {
    corpus.iter().map(|r| disentangle_request(vae, r)).collect()
}

#[derive(Clone, Debug)]
pub struct Persuader<T: Real = f32> {
    pub config: PersuaderConfig,
    pub params: ParamStore<T>,
    layout: PersuaderLayout,
}

/// Tape handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub logits: Var,
    pub sentence_attention: Vec<Var>,
    pub request_attention: Var,
}

impl<T: Real> Persuader<T> {
    pub fn new(config: PersuaderConfig, seed: u64) -> Result<Self> {
        let c = &config;
        if c.latent_dim == 0 || c.attention_dim == 0 || c.hidden_dim == 0 || c.mlp_hidden == 0 {
            return Err(Error::Config("classifier dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let w_z = store.add_matrix("sentence.w_z", c.attention_dim, c.latent_dim, &mut rng);
        let w_l = store.add_matrix("sentence.w_l", c.attention_dim, NUM_LABELS, &mut rng);
        let b = store.add_zeros("sentence.b", &[c.attention_dim]);
        let u_q = store.add_uniform_vector("sentence.u_q", c.attention_dim, c.attention_dim, &mut rng);
        let lstm = LstmParams::init(&mut store, "request.lstm", c.latent_dim + NUM_LABELS, c.hidden_dim, &mut rng);
        let w_s = store.add_matrix("request.w_s", c.hidden_dim, c.hidden_dim, &mut rng);
        let b_s = store.add_zeros("request.b_s", &[c.hidden_dim]);
        let u_s = store.add_uniform_vector("request.u_s", c.hidden_dim, c.hidden_dim, &mut rng);
        let mlp_hidden = Linear::init(&mut store, "mlp.hidden", c.hidden_dim, c.mlp_hidden, &mut rng);
        let mlp_out = Linear::init(&mut store, "mlp.out", c.mlp_hidden, 2, &mut rng);
        Ok(Self {
            config,
            params: store,
            layout: PersuaderLayout {
                w_z,
                w_l,
                b,
                u_q,
                lstm,
                w_s,
                b_s,
                u_s,
                mlp_hidden,
                mlp_out,
            },
        })
    }

    pub fn layout(&self) -> &PersuaderLayout {
        &self.layout
    }

    pub fn cast<U: Real>(&self) -> Persuader<U> {
        Persuader {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    fn check_sentence(&self, s: &DisentangledSentence) -> Result<()> {
        if s.z.len() != self.config.latent_dim || s.l.len() != NUM_LABELS {
            return Err(Error::Shape(format!(
                "sentence has z[{}], l[{}]; expected z[{}], l[{NUM_LABELS}]",
                s.z.len(),
                s.l.len(),
                self.config.latent_dim
            )));
        }
        Ok(())
    }

    /// Fused sentence vector and the (content, strategy) attention pair.
    pub fn fuse_on(&self, tape: &mut Tape<'_, T>, z: Var, l: Var) -> (Var, Var) {
        let lay = &self.layout;
        let (w_z, w_l, b, u_q) = (tape.param(lay.w_z), tape.param(lay.w_l), tape.param(lay.b), tape.param(lay.u_q));
        let pz = tape.matvec(w_z, z);
        let pz = tape.add(pz, b);
        let u_z = tape.tanh(pz);
        let pl = tape.matvec(w_l, l);
        let pl = tape.add(pl, b);
        let u_l = tape.tanh(pl);
        let sz = tape.dot(u_z, u_q);
        let sl = tape.dot(u_l, u_q);
        let scores = tape.concat(&[sz, sl]);
        let alpha = tape.softmax(scores);
        let a0 = tape.pick(alpha, 0);
        let a1 = tape.pick(alpha, 1);
        let gz = tape.scale_by(z, a0);
        let gl = tape.scale_by(l, a1);
        (tape.concat(&[gz, gl]), alpha)
    }

    /// Pooled request vector and request attention over the fused sentences.
    pub fn encode_on(&self, tape: &mut Tape<'_, T>, fused: &[Var]) -> Result<(Var, Var)> {
        if fused.is_empty() {
            return Err(Error::Input("request has no sentences".into()));
        }
        let lay = &self.layout;
        let hs = lay.lstm.run(tape, fused)?;
        let (w_s, b_s, u_s) = (tape.param(lay.w_s), tape.param(lay.b_s), tape.param(lay.u_s));
        let scores: Vec<Var> = hs
            .iter()
            .map(|&h| {
                let p = tape.matvec(w_s, h);
                let p = tape.add(p, b_s);
                let u = tape.tanh(p);
                tape.dot(u, u_s)
            })
            .collect();
        let scores = tape.concat(&scores);
        let alpha = tape.softmax(scores);
        let weighted: Vec<Var> = hs
            .iter()
            .enumerate()
            .map(|(i, &h)| {
                let a = tape.pick(alpha, i);
                tape.scale_by(h, a)
            })
            .collect();
        Ok((tape.add_n(&weighted), alpha))
    }

    pub fn forward(&self, tape: &mut Tape<'_, T>, sentences: &[DisentangledSentence]) -> Result<ForwardVars> {
        if sentences.is_empty() {
            return Err(Error::Input("request has no sentences".into()));
        }
        let mut fused = Vec::with_capacity(sentences.len());
        let mut sentence_attention = Vec::with_capacity(sentences.len());
        for s in sentences {
            self.check_sentence(s)?;
            let z = tape.vector(s.z.iter().map(|x| T::from_f64(*x)).collect());
            let l = tape.vector(s.l.iter().map(|x| T::from_f64(*x)).collect());
            let (g, a) = self.fuse_on(tape, z, l);
            fused.push(g);
            sentence_attention.push(a);
        }
        let (v, request_attention) = self.encode_on(tape, &fused)?;
        let hidden = self.layout.mlp_hidden.forward(tape, v);
        let hidden = tape.tanh(hidden);
        let logits = self.layout.mlp_out.forward(tape, hidden);
        Ok(ForwardVars {
            logits,
            sentence_attention,
            request_attention,
        })
    }

    /// Cross entropy of the success label.
    pub fn loss(&self, tape: &mut Tape<'_, T>, sentences: &[DisentangledSentence], success: bool) -> Result<Var> {
        let f = self.forward(tape, sentences)?;
        Ok(tape.cross_entropy(f.logits, success as usize))
    }

    /// Success probability and attention trace for already disentangled sentences.
    pub fn predict_disentangled(&self, sentences: &[DisentangledSentence]) -> Result<AttentionTrace> {
        let mut tape = Tape::new(&self.params);
        let f = self.forward(&mut tape, sentences)?;
        let probs = tape.softmax(f.logits);
        let to64 = |v: &[T]| v.iter().map(|x| x.as_f64()).collect::<Vec<f64>>();
        Ok(AttentionTrace {
            sentence: f
                .sentence_attention
                .iter()
                .map(|&a| {
                    let v = tape.value(a);
                    [v[0].as_f64(), v[1].as_f64()]
                })
                .collect(),
            request: to64(tape.value(f.request_attention)),
            success_probability: tape.value(probs)[1].as_f64(),
        })
    }

    pub fn predict(&self, request: &Request, vae: &VaeModel<f32>) -> Result<AttentionTrace> {
        let d = vae.disentangle(request)?;
        self.predict_disentangled(&d)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = self.params.to_checkpoint();
        ckpt.meta.insert("kind".into(), "persuader".into());
        ckpt.meta.insert("config".into(), serde_json::to_value(&self.config).expect("config"));
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.meta.get("kind").and_then(|v| v.as_str()) != Some("persuader") {
            return Err(Error::Checkpoint("not a classifier checkpoint".into()));
        }
        let config: PersuaderConfig = ckpt
            .meta
            .get("config")
            .cloned()
            .ok_or_else(|| Error::Checkpoint("missing `config` in checkpoint metadata".into()))
            .and_then(|v| serde_json::from_value(v).map_err(|e| Error::Checkpoint(e.to_string())))?;
        let mut model = Self::new(config, 0)?;
        model.params.load_checkpoint(ckpt)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
