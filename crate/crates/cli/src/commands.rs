use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;

use anyhow::Context;

use persuasion_core::analysis::{
    aggregate_occurrences, attention_success_correlation, concentration_stats, extract_all, rank_report,
    reference_ranking,
};
use persuasion_core::baselines::{
    evaluate_nb, evaluate_sentence_lstm, random_baseline, score_requests, train_nb, train_sentence_lstm,
};
use persuasion_core::corpus::{generate_synthetic, load_corpus, save_corpus, split, Corpus, Request, Splits};
use persuasion_core::editor::{evaluate_edits, extreme_triples, write_edit_csv};
use persuasion_core::metrics::{write_metric_rows, MetricRow};
use persuasion_core::persuader::{disentangle_corpus, evaluate_disentangled, train_on_disentangled, Persuader};
use persuasion_core::vae::{evaluate_vae, fit_vae, init_vae, VaeModel};

use crate::config::{prepare_output, require_file, RunConfig, TripleChoice};
use crate::BaselineKind;

/// Pearson r at or below this passes `verify-fixture`.
pub const FIXTURE_MAX_R: f64 = -0.85;

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    prepare_output(path)?;
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_metrics(cfg: &RunConfig, name: &str, header: &str, rows: &[MetricRow]) -> anyhow::Result<()> {
    let path = cfg.paths.reports.join(name);
    let mut out = create(&path)?;
    write_metric_rows(&mut out, Some(header), rows)?;
    out.flush()?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn load_splits(cfg: &RunConfig) -> anyhow::Result<(Corpus, Splits)> {
    require_file(&cfg.paths.corpus, "corpus")?;
    let corpus = load_corpus(&cfg.paths.corpus, false)?;
    let splits = split(&corpus, cfg.split, cfg.seeds.split)?;
    Ok((corpus, splits))
}

fn load_vae(cfg: &RunConfig) -> anyhow::Result<VaeModel<f32>> {
    require_file(&cfg.paths.vae, "VAE checkpoint")?;
    Ok(VaeModel::load(&cfg.paths.vae)?)
}

fn load_classifier(cfg: &RunConfig) -> anyhow::Result<Persuader<f32>> {
    require_file(&cfg.paths.classifier, "classifier checkpoint")?;
    Ok(Persuader::load(&cfg.paths.classifier)?)
}

pub fn gen(cfg: &RunConfig) -> anyhow::Result<()> {
    let corpus = generate_synthetic(&cfg.gen, cfg.seeds.gen)?;
    prepare_output(&cfg.paths.corpus)?;
    save_corpus(&corpus, &cfg.paths.corpus)?;
    log::info!(
        "wrote {} requests ({} sentences, success rate {:.3}) to {}",
        corpus.len(),
        corpus.num_sentences(),
        corpus.success_rate().unwrap_or(f64::NAN),
        cfg.paths.corpus.display()
    );
    Ok(())
}

pub fn train_vae(cfg: &RunConfig) -> anyhow::Result<()> {
    let (_, s) = load_splits(cfg)?;
    let mut model = init_vae(&s.labeled_train, &s.unlabeled_train, &cfg.vae, &cfg.vae_train, cfg.seeds.vae)?;
    if let Some(path) = &cfg.paths.embeddings {
        let n = model.load_embeddings(path)?;
        log::info!("loaded {n} word vectors from {}", path.display());
    }
    let (model, history) = fit_vae(
        model,
        &s.labeled_train,
        &s.unlabeled_train,
        Some(&s.val),
        &cfg.vae_train,
        cfg.seeds.vae,
    )?;
    prepare_output(&cfg.paths.vae)?;
    model.save(&cfg.paths.vae)?;

    let test = evaluate_vae(&model, &s.test)?;
    println!("vae sentence macro F1 (test) {:.4}", test.f1);
    let mut rows = Vec::new();
    for m in &history {
        let split = format!("epoch{}", m.epoch);
        rows.push(MetricRow::new("labeled_loss", m.labeled_loss, &split));
        if let Some(u) = m.unlabeled_loss {
            rows.push(MetricRow::new("unlabeled_loss", u, &split));
        }
        if let Some(f) = m.val_macro_f1 {
            rows.push(MetricRow::new("macro_f1", f, &split));
        }
    }
    rows.extend(test.rows("", "test"));
    write_metrics(cfg, "vae_metrics.csv", &cfg.header(&[]), &rows)
}

pub fn train_clf(cfg: &RunConfig) -> anyhow::Result<()> {
    let (_, s) = load_splits(cfg)?;
    let vae = load_vae(cfg)?;
    let train = disentangle_corpus(&vae, &s.train())?;
    let val = disentangle_corpus(&vae, &s.val)?;
    let test = disentangle_corpus(&vae, &s.test)?;
    let (model, history) =
        train_on_disentangled(&train, &val, &cfg.persuader, &cfg.classifier_train, cfg.seeds.classifier)?;
    prepare_output(&cfg.paths.classifier)?;
    model.save(&cfg.paths.classifier)?;

    let m = evaluate_disentangled(&model, &test)?;
    println!("classifier macro F1 (test) {:.4}", m.f1);
    let mut rows = Vec::new();
    for e in &history {
        let split = format!("epoch{}", e.epoch);
        rows.push(MetricRow::new("train_loss", e.train_loss, &split));
        rows.push(MetricRow::new("train_accuracy", e.train_accuracy, &split));
        if let Some(f) = e.val_macro_f1 {
            rows.push(MetricRow::new("macro_f1", f, &split));
        }
    }
    rows.extend(m.rows("", "test"));
    write_metrics(cfg, "classifier_metrics.csv", &cfg.header(&[]), &rows)
}

pub fn baseline(cfg: &RunConfig, kind: BaselineKind) -> anyhow::Result<()> {
    let (_, s) = load_splits(cfg)?;
    let (name, metrics) = match kind {
        BaselineKind::Nb => ("naive_bayes", evaluate_nb(&train_nb(&s.train())?, &s.test)?),
        BaselineKind::Random => (
            "random",
            score_requests(&random_baseline(&s.test, cfg.seeds.baseline), &s.test)?,
        ),
        BaselineKind::SentenceLstm => {
            let model = train_sentence_lstm(&s.labeled_train, &cfg.sentence_lstm, cfg.seeds.baseline)?;
            ("sentence_lstm", evaluate_sentence_lstm(&model, &s.test)?)
        }
    };
    println!("{name} macro F1 (test) {:.4}", metrics.f1);
    write_metrics(
        cfg,
        &format!("baseline_{name}.csv"),
        &cfg.header(&[("baseline", name.to_string())]),
        &metrics.rows("", "test"),
    )
}

pub fn analyze(cfg: &RunConfig) -> anyhow::Result<()> {
    let (corpus, _) = load_splits(cfg)?;
    let vae = load_vae(cfg)?;
    let model = load_classifier(cfg)?;
    let requests = disentangle_corpus(&vae, &corpus)?;
    let occurrences = extract_all(&requests, &model, cfg.analysis.label_source)?;
    let records = aggregate_occurrences(&occurrences, cfg.analysis.min_freq)?;
    let header = cfg.header(&[("labels", cfg.analysis.label_source.to_string())]);
    let csv = cfg.paths.reports.join("triplets.csv");
    prepare_output(&csv)?;
    let tsv = rank_report(&records, &csv, Some(&header))?;
    log::info!("wrote {} and {}", csv.display(), tsv.display());

    let (mu, sigma) = concentration_stats(&occurrences)?;
    let mut rows = vec![
        MetricRow::new("triples_ranked", records.len() as f64, "all"),
        MetricRow::new("window_attention_mean", mu, "all"),
        MetricRow::new("window_attention_std", sigma, "all"),
    ];
    match attention_success_correlation(&records) {
        Ok(c) => {
            println!("attention/success pearson r {:.4} p {:.3e} n {}", c.r, c.p, c.n);
            rows.push(MetricRow::new("pearson_r", c.r, "all"));
            rows.push(MetricRow::new("pearson_p", c.p, "all"));
        }
        Err(e) => log::warn!("no correlation: {e}"),
    }
    println!("window attention mean {mu:.4} std {sigma:.4}");
    write_metrics(cfg, "analysis_summary.csv", &header, &rows)
}

pub fn edit(cfg: &RunConfig) -> anyhow::Result<()> {
    let (corpus, s) = load_splits(cfg)?;
    let vae = load_vae(cfg)?;
    let model = load_classifier(cfg)?;
    let targets = disentangle_corpus(&vae, &corpus)?;
    let bank_requests: Vec<Request> = s.train().requests;
    let bank = disentangle_corpus(&vae, &s.train())?;

    let mut edit_cfg = cfg.edit_config();
    if cfg.edit.triples == TripleChoice::Ranked {
        // ranked on the bank side so every top triple has exemplars
        let occ = extract_all(&bank, &model, cfg.analysis.label_source)?;
        let records = aggregate_occurrences(&occ, cfg.analysis.min_freq)?;
        let (top, bottom) = extreme_triples(&records, cfg.edit.ranked_k)?;
        edit_cfg.top_triples = top;
        edit_cfg.bottom_triples = bottom;
    }
    let list = |ts: &[persuasion_core::analysis::Triple]| ts.iter().map(|t| format!("({t})")).collect::<String>();
    log::info!(
        "editing with top {} and bottom {}",
        list(&edit_cfg.top_triples),
        list(&edit_cfg.bottom_triples)
    );

    let reports = evaluate_edits(
        &corpus.requests,
        &targets,
        &bank_requests,
        &bank,
        &model,
        &edit_cfg,
        cfg.seeds.edit,
    )?;
    for r in &reports {
        println!(
            "{:<6} n={} before {:.4} after {:.4} delta {:+.4}",
            r.operation, r.n_requests, r.before, r.after, r.delta
        );
    }
    let header = cfg.header(&[
        ("labels", cfg.analysis.label_source.to_string()),
        ("top", list(&edit_cfg.top_triples)),
        ("bottom", list(&edit_cfg.bottom_triples)),
    ]);
    let path = cfg.paths.reports.join("edits.csv");
    let mut out = create(&path)?;
    write_edit_csv(&mut out, Some(&header), &reports)?;
    out.flush()?;
    log::info!("wrote {}", path.display());
    Ok(())
}

pub fn verify_fixture(cfg: &RunConfig, out: Option<&Path>) -> anyhow::Result<ExitCode> {
    let records = reference_ranking();
    let c = attention_success_correlation(&records)?;
    println!("pearson r {:.4} p {:.3e} n {}", c.r, c.p, c.n);
    if let Some(path) = out {
        prepare_output(path)?;
        rank_report(&records, path, Some(&cfg.header(&[("source", "reference".into())])))?;
    }
    if c.r <= FIXTURE_MAX_R {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("fixture correlation {:.4} is above {FIXTURE_MAX_R}", c.r);
        Ok(ExitCode::from(1))
    }
}
