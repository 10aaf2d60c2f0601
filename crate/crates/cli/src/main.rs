mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{RunConfig, TripleChoice};

#[derive(Parser, Debug)]
#[command(name = "persuasion", version, about = "Persuasion-strategy modelling pipeline")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Print the effective configuration as JSON and exit.
    #[arg(long, global = true)]
    print_config: bool,

    /// Directory for CSV/TSV reports.
    #[arg(long, global = true, value_name = "DIR")]
    reports: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct ModelPaths {
    /// Corpus JSONL.
    #[arg(long, value_name = "FILE")]
    corpus: Option<PathBuf>,
    /// VAE checkpoint.
    #[arg(long, value_name = "FILE")]
    vae: Option<PathBuf>,
    /// Classifier checkpoint.
    #[arg(long, value_name = "FILE")]
    classifier: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a planted synthetic corpus.
    Gen {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Train the sentence VAE.
    TrainVae {
        #[command(flatten)]
        paths: ModelPaths,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Word-vector text file for the embedding table.
        #[arg(long, value_name = "FILE")]
        embeddings: Option<PathBuf>,
    },
    /// Train the request classifier on VAE representations.
    TrainClf {
        #[command(flatten)]
        paths: ModelPaths,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train and score a baseline.
    Baseline {
        #[arg(value_enum)]
        kind: BaselineKind,
        #[command(flatten)]
        paths: ModelPaths,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Rank strategy triples by success and correlate with attention.
    Analyze {
        #[command(flatten)]
        paths: ModelPaths,
        #[arg(long)]
        min_freq: Option<f64>,
        #[arg(long, value_enum)]
        labels: Option<Labels>,
    },
    /// Insert, delete and swap triples in weak requests.
    Edit {
        #[command(flatten)]
        paths: ModelPaths,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        triples: Option<TripleChoice>,
        #[arg(long, value_enum)]
        labels: Option<Labels>,
    },
    /// Check the bundled reference ranking's attention/success correlation.
    VerifyFixture {
        /// Also write the ranking report here.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BaselineKind {
    Nb,
    Random,
    SentenceLstm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Labels {
    GoldThenPredicted,
    Predicted,
}

impl From<Labels> for persuasion_core::analysis::LabelSource {
    fn from(l: Labels) -> Self {
        match l {
            Labels::GoldThenPredicted => Self::GoldThenPredicted,
            Labels::Predicted => Self::Predicted,
        }
    }
}

fn apply_paths(cfg: &mut RunConfig, p: &ModelPaths) {
    if let Some(c) = &p.corpus {
        cfg.paths.corpus = c.clone();
    }
    if let Some(v) = &p.vae {
        cfg.paths.vae = v.clone();
    }
    if let Some(c) = &p.classifier {
        cfg.paths.classifier = c.clone();
    }
}

/// Merge flags into the configuration.
fn effective_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(r) = &cli.reports {
        cfg.paths.reports = r.clone();
    }
    match &cli.command {
        Command::Gen { n, seed, out } => {
            if let Some(n) = n {
                cfg.gen.n_requests = *n;
            }
            if let Some(s) = seed {
                cfg.seeds.gen = *s;
            }
            if let Some(o) = out {
                cfg.paths.corpus = o.clone();
            }
        }
        Command::TrainVae {
            paths,
            epochs,
            seed,
            embeddings,
        } => {
            apply_paths(&mut cfg, paths);
            if let Some(e) = epochs {
                cfg.vae_train.epochs = *e;
            }
            if let Some(s) = seed {
                cfg.seeds.vae = *s;
            }
            if let Some(e) = embeddings {
                cfg.paths.embeddings = Some(e.clone());
            }
        }
        Command::TrainClf { paths, epochs, seed } => {
            apply_paths(&mut cfg, paths);
            if let Some(e) = epochs {
                cfg.classifier_train.epochs = *e;
            }
            if let Some(s) = seed {
                cfg.seeds.classifier = *s;
            }
        }
        Command::Baseline { paths, seed, .. } => {
            apply_paths(&mut cfg, paths);
            if let Some(s) = seed {
                cfg.seeds.baseline = *s;
            }
        }
        Command::Analyze {
            paths,
            min_freq,
            labels,
        } => {
            apply_paths(&mut cfg, paths);
            if let Some(m) = min_freq {
                cfg.analysis.min_freq = *m;
            }
            if let Some(l) = labels {
                cfg.analysis.label_source = (*l).into();
            }
        }
        Command::Edit {
            paths,
            runs,
            seed,
            triples,
            labels,
        } => {
            apply_paths(&mut cfg, paths);
            if let Some(r) = runs {
                cfg.edit.runs = *r;
            }
            if let Some(s) = seed {
                cfg.seeds.edit = *s;
            }
            if let Some(t) = triples {
                cfg.edit.triples = *t;
            }
            if let Some(l) = labels {
                cfg.analysis.label_source = (*l).into();
            }
        }
        Command::VerifyFixture { .. } => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let cfg = effective_config(&cli)?;
    if cli.print_config {
        println!("{}", serde_json::to_string_pretty(&cfg)?);
        return Ok(ExitCode::SUCCESS);
    }
    log::info!("{}", cfg.header(&[]));
    match cli.command {
        Command::Gen { .. } => commands::gen(&cfg),
        Command::TrainVae { .. } => commands::train_vae(&cfg),
        Command::TrainClf { .. } => commands::train_clf(&cfg),
        Command::Baseline { kind, .. } => commands::baseline(&cfg, kind),
        Command::Analyze { .. } => commands::analyze(&cfg),
        Command::Edit { .. } => commands::edit(&cfg),
        Command::VerifyFixture { out } => return commands::verify_fixture(&cfg, out.as_deref()),
    }?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(2),
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
