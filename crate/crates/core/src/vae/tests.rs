use super::*;
use crate::corpus::{generate_synthetic, GenConfig, Vocab};
use crate::nn::finite_diff_check;
use proptest::prelude::*;

fn small_config() -> VaeConfig {
    VaeConfig {
        embed_dim: 5,
        latent_dim: 3,
        hidden_dim: 4,
        ..VaeConfig::default()
    }
}

fn tiny_corpus(n: usize, seed: u64) -> Corpus {
    let cfg = GenConfig {
        n_requests: n,
        strategy_vocab_size: 3,
        noise_vocab_size: 3,
        content_vocab_size: 2,
        sentences_per_request: [1, 2],
        sentence_length: [2, 3],
        ..GenConfig::default()
    };
    generate_synthetic(&cfg, seed).unwrap()
}

use crate::corpus::Corpus;

fn small_model<T: Real>() -> VaeModel<T> {
    let vocab = Vocab::build(&tiny_corpus(20, 3), 1);
    VaeModel::new(small_config(), vocab, 11).unwrap()
}

fn noise(latent: usize) -> VaeNoise {
    VaeNoise {
        gaussian: (0..latent).map(|i| 0.3 - 0.2 * i as f64).collect(),
        gumbel: vec![0.1, -0.4, 0.7, 0.0, 0.2, -0.1],
    }
}

#[test]
fn reparameterize_with_zero_noise_is_the_mean() {
    let z = reparameterize(&[1.0, -2.0], &[0.3, -5.0], &[0.0, 0.0]).unwrap();
    assert_eq!(z, vec![1.0, -2.0]);
    let z = reparameterize(&[0.0], &[2.0f64.ln() * 2.0], &[1.5]).unwrap();
    assert!((z[0] - 3.0).abs() < 1e-12);
    assert!(matches!(reparameterize(&[0.0], &[0.0, 1.0], &[0.0]), Err(Error::Shape(_))));
}

#[test]
fn gumbel_softmax_reduces_to_softmax() {
    let logits = [1.0, 2.0, 0.5];
    let y = gumbel_softmax(&logits, 1.0, &[0.0; 3]).unwrap();
    let s = crate::nn::softmax(&logits);
    for (a, b) in y.iter().zip(&s) {
        assert!((a - b).abs() < 1e-12);
    }
    let sharp = gumbel_softmax(&logits, 0.01, &[0.0; 3]).unwrap();
    assert!(sharp[1] > 0.999);
    assert!(matches!(gumbel_softmax(&logits, 0.0, &[0.0; 3]), Err(Error::Parameter(_))));
}

#[test]
fn kl_of_standard_normal_is_zero() {
    assert_eq!(kl_gaussian(&[0.0; 4], &[0.0; 4]), 0.0);
    // one dimension, mu = 1, var = 1: KL = 1/2
    assert!((kl_gaussian(&[1.0], &[0.0]) - 0.5).abs() < 1e-12);
}

proptest! {
    #[test]
    fn kl_is_nonnegative(pairs in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..10)) {
        let (mu, lv): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assert!(kl_gaussian(&mu, &lv) >= -1e-12);
    }

    #[test]
    fn gumbel_softmax_is_a_distribution(
        logits in prop::collection::vec(-5.0f64..5.0, 6),
        g in prop::collection::vec(-3.0f64..6.0, 6),
        tau in 0.1f64..5.0,
    ) {
        let y = gumbel_softmax(&logits, tau, &g).unwrap();
        prop_assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(y.iter().all(|p| *p >= 0.0));
    }
}

#[test]
fn tape_kl_matches_closed_form() {
    let model = small_model::<f64>();
    let mut tape = Tape::new(&model.params);
    let mu = tape.vector(vec![0.5, -1.0, 0.2]);
    let lv = tape.vector(vec![0.1, -0.7, 1.3]);
    let kl = model.kl_gaussian_on(&mut tape, mu, lv);
    let expect = kl_gaussian(&[0.5, -1.0, 0.2], &[0.1, -0.7, 1.3]);
    assert!((tape.scalar(kl) - expect).abs() < 1e-12);
}

#[test]
fn labeled_loss_is_sum_of_terms() {
    let model = small_model::<f64>();
    let ids = model.vocab.encode_text("co0 w1 .");
    let mut tape = Tape::new(&model.params);
    let l = model
        .loss_labeled(&mut tape, &ids, StrategyLabel::Concreteness, &noise(3))
        .unwrap();
    let parts = tape.scalar(l.recon) + tape.scalar(l.kl_z) + tape.scalar(l.class_ce);
    assert!((tape.scalar(l.total) - parts).abs() < 1e-10);
    assert!(tape.scalar(l.recon) > 0.0 && tape.scalar(l.kl_z) >= 0.0);
}

#[test]
fn unlabeled_loss_is_sum_of_terms() {
    let model = small_model::<f64>();
    let ids = model.vocab.encode_text("po1 please .");
    let mut tape = Tape::new(&model.params);
    let u = model.loss_unlabeled(&mut tape, &ids, &noise(3)).unwrap();
    let parts = tape.scalar(u.recon) + tape.scalar(u.kl_z) + tape.scalar(u.kl_l);
    assert!((tape.scalar(u.total) - parts).abs() < 1e-10);
    assert!(tape.scalar(u.kl_l) >= -1e-12);
    let l: f64 = tape.value(u.l_sample).iter().sum();
    assert!((l - 1.0).abs() < 1e-12);
}

#[test]
fn labeled_loss_gradients_match_finite_differences() {
    let model = small_model::<f64>();
    let ids = model.vocab.encode_text("re2 co1 w0");
    let nz = noise(3);
    let report = finite_diff_check(&model.params, 1e-5, None, |tape| {
        Ok(model.loss_labeled(tape, &ids, StrategyLabel::Reciprocity, &nz)?.total)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn unlabeled_loss_gradients_match_finite_differences() {
    let model = small_model::<f64>();
    let ids = model.vocab.encode_text("im0 w2 .");
    let nz = noise(3);
    let report = finite_diff_check(&model.params, 1e-5, None, |tape| {
        Ok(model.loss_unlabeled(tape, &ids, &nz)?.total)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn classification_is_a_distribution() {
    let model = small_model::<f32>();
    let p = model.classify_sentence(&["co0", "never-seen"]).unwrap();
    assert_eq!(p.len(), NUM_LABELS);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-5);
    let empty: [&str; 0] = [];
    assert!(matches!(model.classify_sentence(&empty), Err(Error::Input(_))));
}

#[test]
fn bad_noise_shapes_are_rejected() {
    let model = small_model::<f64>();
    let ids = model.vocab.encode_text("co0");
    let mut tape = Tape::new(&model.params);
    let bad = VaeNoise {
        gaussian: vec![0.0; 2],
        gumbel: vec![0.0; 6],
    };
    assert!(matches!(
        model.loss_labeled(&mut tape, &ids, StrategyLabel::Other, &bad),
        Err(Error::Shape(_))
    ));
    assert!(matches!(
        model.loss_labeled(&mut tape, &[], StrategyLabel::Other, &noise(3)),
        Err(Error::Input(_))
    ));
}

#[test]
fn disentangle_uses_the_argmax_strategy() {
    let model = small_model::<f64>();
    let c = tiny_corpus(3, 5);
    let out = model.disentangle(&c.requests[0]).unwrap();
    assert_eq!(out.len(), c.requests[0].len());
    for (d, s) in out.iter().zip(&c.requests[0].sentences) {
        assert_eq!(d.z.len(), 3);
        let ids = model.encode_tokens(&s.tokens()).unwrap();
        let mut tape = Tape::new(&model.params);
        let embs = model.embed(&mut tape, &ids);
        let hard = model.one_hot(&mut tape, d.predicted_label());
        let (mu, _) = model.posterior(&mut tape, &embs, hard).unwrap();
        assert_eq!(tape.value(mu), d.z.as_slice());
    }
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let model = small_model::<f32>();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vae.json");
    model.save(&path).unwrap();
    let back = VaeModel::<f32>::load(&path).unwrap();
    assert_eq!(back.config, model.config);
    assert_eq!(back.vocab, model.vocab);
    let toks = ["co1", "w0", "."];
    assert_eq!(back.classify_sentence(&toks).unwrap(), model.classify_sentence(&toks).unwrap());
}

#[test]
fn embedding_file_overrides_known_rows() {
    let mut model = small_model::<f64>();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("emb.txt");
    std::fs::write(&path, "2 5\nco0 1 2 3 4 5\nunseen 0 0 0 0 0\n").unwrap();
    assert_eq!(model.load_embeddings(&path).unwrap(), 1);
    let row = model.vocab.get("co0").unwrap();
    assert_eq!(model.embedding_tensor().row(row), &[1.0, 2.0, 3.0, 4.0, 5.0]);
    std::fs::write(&path, "1 4\nco0 1 2 3 4\n").unwrap();
    assert!(matches!(model.load_embeddings(&path), Err(Error::Shape(_))));
}

#[test]
fn training_reduces_loss_on_a_tiny_corpus() {
    let labeled = tiny_corpus(40, 8);
    let cfg = super::VaeTrainConfig {
        epochs: 4,
        batch_size: 8,
        ..Default::default()
    };
    let (model, hist) = train_vae(&labeled, &Corpus::empty(), Some(&labeled), &small_config(), &cfg, 1).unwrap();
    assert_eq!(hist.len(), 4);
    assert!(hist[3].labeled_loss < hist[0].labeled_loss, "{hist:?}");
    assert!(hist.iter().all(|m| m.unlabeled_loss.is_none() && m.val_macro_f1.is_some()));
    assert!(model.params.ids().all(|id| model.params.get(id).all_finite()));
}

#[test]
fn training_needs_labels() {
    let unl = tiny_corpus(5, 2);
    let stripped = Corpus {
        requests: unl.requests.iter().map(|r| r.strip_labels()).collect(),
        provenance: unl.provenance.clone(),
    };
    let err = train_vae(&stripped, &Corpus::empty(), None, &small_config(), &Default::default(), 0).unwrap_err();
    assert!(matches!(err, Error::Training(_)));
}

