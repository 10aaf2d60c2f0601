use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use persuasion_core::analysis::{LabelSource, Triple, DEFAULT_MIN_FREQ};
use persuasion_core::baselines::SentenceLstmConfig;
use persuasion_core::corpus::{GenConfig, SplitCounts};
use persuasion_core::editor::EditConfig;
use persuasion_core::persuader::{ClfTrainConfig, PersuaderConfig};
use persuasion_core::vae::{VaeConfig, VaeTrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    pub vae: PathBuf,
    pub classifier: PathBuf,
    pub reports: PathBuf,
    /// Optional word-vector text file loaded into the VAE embedding table.
    pub embeddings: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            corpus: "data/corpus.jsonl".into(),
            vae: "models/vae.json".into(),
            classifier: "models/persuader.json".into(),
            reports: "reports".into(),
            embeddings: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub gen: u64,
    pub split: u64,
    pub vae: u64,
    pub classifier: u64,
    pub baseline: u64,
    pub edit: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            gen: 42,
            split: 1,
            vae: 7,
            classifier: 3,
            baseline: 5,
            edit: 11,
        }
    }
}

impl Seeds {
    pub fn summary(&self) -> String {
        format!(
            "gen:{},split:{},vae:{},classifier:{},baseline:{},edit:{}",
            self.gen, self.split, self.vae, self.classifier, self.baseline, self.edit
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSettings {
    pub min_freq: f64,
    pub label_source: LabelSource,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            min_freq: DEFAULT_MIN_FREQ,
            label_source: LabelSource::default(),
        }
    }
}

/// Where the edit protocol takes its strong and weak triples from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TripleChoice {
    /// `top_triples` and `bottom_triples` as configured.
    Configured,
    /// The best and worst `ranked_k` triples of this run's own analysis.
    #[default]
    Ranked,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditSettings {
    pub runs: usize,
    pub triples: TripleChoice,
    pub ranked_k: usize,
    pub top_triples: Vec<Triple>,
    pub bottom_triples: Vec<Triple>,
}

impl Default for EditSettings {
    fn default() -> Self {
        let d = EditConfig::default();
        Self {
            runs: d.runs,
            triples: TripleChoice::default(),
            ranked_k: 3,
            top_triples: d.top_triples,
            bottom_triples: d.bottom_triples,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub seeds: Seeds,
    pub gen: GenConfig,
    pub split: SplitCounts,
    pub vae: VaeConfig,
    pub vae_train: VaeTrainConfig,
    pub persuader: PersuaderConfig,
    pub classifier_train: ClfTrainConfig,
    pub sentence_lstm: SentenceLstmConfig,
    pub analysis: AnalysisSettings,
    pub edit: EditSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            seeds: Seeds::default(),
            gen: GenConfig {
                n_requests: 3000,
                ..GenConfig::default()
            },
            split: SplitCounts {
                labeled_train: 450,
                unlabeled_train: 2100,
                val: 200,
                test: 200,
            },
            vae: VaeConfig::default(),
            vae_train: VaeTrainConfig {
                epochs: 6,
                ..VaeTrainConfig::default()
            },
            persuader: PersuaderConfig::default(),
            classifier_train: ClfTrainConfig {
                epochs: 40,
                patience: None,
                ..ClfTrainConfig::default()
            },
            sentence_lstm: SentenceLstmConfig::default(),
            analysis: AnalysisSettings::default(),
            edit: EditSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn hash(&self) -> String {
        persuasion_core::stable_hash(self)
    }

    /// `persuasion <version> config=<hash> seeds=<...>` plus any extra fields.
    pub fn header(&self, extra: &[(&str, String)]) -> String {
        let mut h = format!(
            "persuasion {} config={} seeds={}",
            env!("CARGO_PKG_VERSION"),
            self.hash(),
            self.seeds.summary()
        );
        for (k, v) in extra {
            h.push_str(&format!(" {k}={v}"));
        }
        h
    }

    pub fn edit_config(&self) -> EditConfig {
        EditConfig {
            runs: self.edit.runs,
            top_triples: self.edit.top_triples.clone(),
            bottom_triples: self.edit.bottom_triples.clone(),
            label_source: self.analysis.label_source,
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.gen.validate()?;
        self.vae.validate()?;
        if !(0.0..=1.0).contains(&self.analysis.min_freq) {
            bail!("analysis.min_freq must lie in [0, 1]");
        }
        if self.edit.runs == 0 {
            bail!("edit.runs must be at least 1");
        }
        if self.edit.triples == TripleChoice::Ranked && self.edit.ranked_k == 0 {
            bail!("edit.ranked_k must be at least 1");
        }
        Ok(())
    }
}

/// Fail early when an input artifact is missing.
pub fn require_file(path: &Path, what: &str) -> anyhow::Result<()> {
    if !path.is_file() {
        bail!("{what} not found at {}", path.display());
    }
    Ok(())
}

/// Create the parent directory of an output file.
pub fn prepare_output(path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}
