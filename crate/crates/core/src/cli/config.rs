use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    generate_synthetic_choice, generate_synthetic_extractive, load_choice, load_extractive, AssembleConfig, ChoiceExample,
    ExtractiveExample, RuleTagger, Vocab,
};
use crate::encoder::ModelConfig;
use crate::error::{Error, Result};
use crate::training::{choice_vocab, extractive_vocab, prepare_choice, prepare_extractive, Prepared, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TaskName {
    /// SQuAD-style JSON file.
    Extractive,
    /// JSON lines with id, article, question, options, label.
    Choice,
    SyntheticExtractive,
    SyntheticChoice,
}

impl TaskName {
    pub fn is_synthetic(self) -> bool {
        matches!(self, TaskName::SyntheticExtractive | TaskName::SyntheticChoice)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub task: TaskName,
    /// Training (or input) file for file-backed tasks.
    pub data: Option<PathBuf>,
    /// Dev file for file-backed tasks.
    pub dev: Option<PathBuf>,
    /// Synthetic generator seed; the dev split uses the next seed.
    pub data_seed: u64,
    pub train_size: usize,
    pub dev_size: usize,
    /// Synthetic extractive: make tags the only answer/decoy cue.
    pub pos_dependency: bool,
    /// Synthetic choice: facts needed to identify the gold option.
    pub facts: usize,
    /// Evaluation-time tag corruption rate.
    pub corrupt_rate: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            task: TaskName::SyntheticExtractive,
            data: None,
            dev: None,
            data_seed: 7,
            train_size: 2000,
            dev_size: 500,
            pos_dependency: false,
            facts: 3,
            corrupt_rate: 0.0,
        }
    }
}

/// Everything a run depends on. Defaults, then a JSON file, then flags.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl RunConfig {
    /// Reads a config file. A run manifest is accepted too, so any run can be
    /// replayed from its manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_input(path)?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let inner = match value.get("config") {
            Some(c) if value.get("command").is_some() => c.clone(),
            _ => value,
        };
        serde_json::from_value(inner).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Checks the model section only once `vocab_size` is known; zero means
    /// "derive from the training data".
    pub fn validate(&self) -> Result<()> {
        if self.model.vocab_size > 0 {
            self.model.validate()?;
        }
        self.train.validate()?;
        let d = &self.data;
        if !(0.0..=1.0).contains(&d.corrupt_rate) {
            return Err(Error::Config(format!("corrupt rate {} outside [0, 1]", d.corrupt_rate)));
        }
        if !(1..=4).contains(&d.facts) {
            return Err(Error::Config(format!("facts = {} outside 1..=4", d.facts)));
        }
        if d.task.is_synthetic() && (d.train_size == 0 || d.dev_size == 0) {
            return Err(Error::Config("synthetic split sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn assemble(&self) -> AssembleConfig {
        AssembleConfig::new(self.model.max_positions)
    }
}

/// Reads a file, reporting a missing path as a usage problem.
pub fn read_input(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Config(format!("file not found: {}", path.display())),
        _ => Error::Io(e),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
}

/// Raw examples of one split.
pub enum Examples {
    Extractive(Vec<ExtractiveExample>),
    Choice(Vec<ChoiceExample>),
}

/// Where a split came from and the SHA-256 of its content.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHash {
    pub role: String,
    pub source: String,
    pub sha256: String,
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Train reads `data`; dev reads `dev`, falling back to `data`.
fn split_file(cfg: &DataConfig, split: Split) -> Result<&Path> {
    let path = match split {
        Split::Train => cfg.data.as_deref(),
        Split::Dev => cfg.dev.as_deref().or(cfg.data.as_deref()),
    };
    path.ok_or_else(|| Error::Config(format!("task {:?} needs --data", cfg.task)))
}

/// Loads or generates one split and hashes it.
pub fn load_examples(cfg: &DataConfig, split: Split) -> Result<(Examples, DatasetHash)> {
    let role = match split {
        Split::Train => "train",
        Split::Dev => "dev",
    };
    let seed = match split {
        Split::Train => cfg.data_seed,
        Split::Dev => cfg.data_seed.wrapping_add(1),
    };
    let size = match split {
        Split::Train => cfg.train_size,
        Split::Dev => cfg.dev_size,
    };
    let (examples, source, bytes) = match cfg.task {
        TaskName::SyntheticExtractive => {
            let ex = generate_synthetic_extractive(seed, size, cfg.pos_dependency);
            let bytes = serde_json::to_vec(&ex)?;
            let source = format!("synthetic-extractive(seed={seed}, size={size}, pos_dependency={})", cfg.pos_dependency);
            (Examples::Extractive(ex), source, bytes)
        }
        TaskName::SyntheticChoice => {
            let ex = generate_synthetic_choice(seed, size, cfg.facts);
            let bytes = serde_json::to_vec(&ex)?;
            let source = format!("synthetic-choice(seed={seed}, size={size}, facts={})", cfg.facts);
            (Examples::Choice(ex), source, bytes)
        }
        TaskName::Extractive | TaskName::Choice => {
            let path = split_file(cfg, split)?;
            let bytes = read_input(path)?.into_bytes();
            let ex = if cfg.task == TaskName::Extractive {
                Examples::Extractive(load_extractive(path)?)
            } else {
                Examples::Choice(load_choice(path)?)
            };
            (ex, path.display().to_string(), bytes)
        }
    };
    let hash = DatasetHash {
        role: role.into(),
        source,
        sha256: sha256_hex(&bytes),
    };
    Ok((examples, hash))
}

impl Examples {
    pub fn vocab(&self) -> Vocab {
        match self {
            Examples::Extractive(ex) => extractive_vocab(ex),
            Examples::Choice(ex) => choice_vocab(ex),
        }
    }

    pub fn prepare(&self, vocab: &Vocab, cfg: &AssembleConfig) -> Result<Prepared> {
        match self {
            Examples::Extractive(ex) => prepare_extractive(ex, vocab, cfg, &RuleTagger),
            Examples::Choice(ex) => prepare_choice(ex, vocab, cfg, &RuleTagger),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_files_fill_from_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"model": {"max_turns": 2}, "data": {"task": "synthetic-choice"}}"#).unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.model.max_turns, 2);
        assert_eq!(cfg.model.hidden_size, ModelConfig::default().hidden_size);
        assert_eq!(cfg.data.task, TaskName::SyntheticChoice);
        assert_eq!(cfg.train, TrainConfig::default());
    }

    #[test]
    fn unknown_keys_and_missing_files_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"model": {"turns": 2}}"#).unwrap();
        assert!(matches!(RunConfig::load(&path), Err(Error::Config(_))));
        assert!(matches!(RunConfig::load(&dir.path().join("none.json")), Err(Error::Config(_))));
    }

    #[test]
    fn synthetic_hashes_are_stable_and_split_specific() {
        let cfg = DataConfig {
            train_size: 20,
            dev_size: 20,
            ..DataConfig::default()
        };
        let (_, a) = load_examples(&cfg, Split::Train).unwrap();
        let (_, b) = load_examples(&cfg, Split::Train).unwrap();
        let (_, c) = load_examples(&cfg, Split::Dev).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.sha256, c.sha256);
        assert_eq!(a.sha256.len(), 64);
    }
}
