//! Run configuration.
//!
//! A run is described by a JSON document; every key has a default, so `{}`
//! is a valid configuration. Command-line flags override individual keys.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::generation::DEFAULT_SAMPLES_PER_CELL;
use crate::lexicon::{builtin_lexicon, load_lexicon, Lexicon, LexiconError};
use crate::ngram::{NgramBackend, NgramConfig, NgramError, NgramModel};
use crate::protocol::{Backend, BackendError, Capability, RemoteBackend, RemoteOptions};
use crate::synth::demo_corpus;
use crate::templates::{builtin_templates, parse_template_set, TaskTemplate, TemplateKind};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("referenced path does not exist: {0}")]
    MissingPath(String),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendKind {
    /// The built-in n-gram model, trained on `corpus` or on a generated demo
    /// corpus when no corpus is given.
    Ngram {
        #[serde(default)]
        corpus: Option<PathBuf>,
        #[serde(default = "default_order")]
        order: usize,
        #[serde(default = "default_k")]
        k: f64,
        #[serde(default = "default_weight")]
        fine_tune_weight: u64,
        #[serde(default = "default_demo_sentences")]
        demo_sentences: usize,
        #[serde(default)]
        demo_seed: u64,
    },
    /// A protocol-speaking subprocess.
    Subprocess { command: Vec<String> },
    /// A protocol endpoint on a TCP socket.
    Tcp { address: String },
}

fn default_order() -> usize {
    NgramConfig::default().order
}

fn default_k() -> f64 {
    NgramConfig::default().k
}

fn default_weight() -> u64 {
    NgramConfig::default().fine_tune_weight
}

fn default_demo_sentences() -> usize {
    20_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDef {
    pub id: String,
    #[serde(flatten)]
    pub kind: BackendKind,
    /// Few-shot epochs; defaults depend on the backend.
    #[serde(default)]
    pub fewshot_epochs: Option<u32>,
}

impl BackendDef {
    pub fn builtin() -> Self {
        Self {
            id: "ngram".into(),
            kind: BackendKind::Ngram {
                corpus: None,
                order: default_order(),
                k: default_k(),
                fine_tune_weight: default_weight(),
                demo_sentences: default_demo_sentences(),
                demo_seed: 0,
            },
            fewshot_epochs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub alpha: f64,
    pub standardize: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            alpha: crate::analysis::DEFAULT_ALPHA,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusDef {
    pub id: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    pub batch_size: usize,
    pub retries: u32,
    pub window: usize,
    pub timeout_secs: u64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            retries: 2,
            window: 8,
            timeout_secs: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FewShotConfig {
    /// Data type names; empty means every data type.
    pub data_types: Vec<String>,
    /// Token surfaces to run; empty means both.
    pub tokens: Vec<String>,
    pub singular_token: String,
    pub plural_token: String,
    pub n_sentences: usize,
    pub samples_per_task: usize,
}

impl Default for FewShotConfig {
    fn default() -> Self {
        Self {
            data_types: Vec::new(),
            tokens: Vec::new(),
            singular_token: crate::fewshot::DEFAULT_SINGULAR_TOKEN.into(),
            plural_token: crate::fewshot::DEFAULT_PLURAL_TOKEN.into(),
            n_sentences: crate::fewshot::DEFAULT_SENTENCES,
            samples_per_task: DEFAULT_SAMPLES_PER_CELL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Lexicon TSV; the built-in lists when absent.
    pub lexicon: Option<PathBuf>,
    /// Template file; the built-in templates when absent.
    pub templates: Option<PathBuf>,
    /// Evaluation task ids; all evaluation templates when empty.
    pub tasks: Vec<String>,
    pub backends: Vec<BackendDef>,
    /// Target noun lemmas; every Noun entry when empty.
    pub nouns: Vec<String>,
    pub samples_per_cell: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub threads: Option<usize>,
    pub scoring: ScoringConfig,
    pub analysis: AnalysisConfig,
    pub corpora: Vec<CorpusDef>,
    pub fewshot: FewShotConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            lexicon: None,
            templates: None,
            tasks: Vec::new(),
            backends: vec![BackendDef::builtin()],
            nouns: Vec::new(),
            samples_per_cell: DEFAULT_SAMPLES_PER_CELL,
            seed: 0,
            output_dir: PathBuf::from("out"),
            threads: None,
            scoring: ScoringConfig::default(),
            analysis: AnalysisConfig::default(),
            corpora: Vec::new(),
            fewshot: FewShotConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Checks values and that referenced input paths exist.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.samples_per_cell == 0 {
            return Err(ConfigError::Invalid("samples_per_cell must be at least 1".into()));
        }
        if self.backends.is_empty() {
            return Err(ConfigError::Invalid("no backends configured".into()));
        }
        if !(self.analysis.alpha > 0.0 && self.analysis.alpha < 1.0) {
            return Err(ConfigError::Invalid("analysis.alpha must be in (0, 1)".into()));
        }
        let mut ids: Vec<&str> = self.backends.iter().map(|b| b.id.as_str()).collect();
        ids.sort();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(ConfigError::Invalid("backend ids must be unique".into()));
        }
        let mut paths: Vec<&Path> = Vec::new();
        paths.extend(self.lexicon.as_deref());
        paths.extend(self.templates.as_deref());
        paths.extend(self.corpora.iter().map(|c| c.path.as_path()));
        for b in &self.backends {
            match &b.kind {
                BackendKind::Ngram { corpus, order, k, .. } => {
                    paths.extend(corpus.as_deref());
                    NgramConfig {
                        order: *order,
                        k: *k,
                        ..NgramConfig::default()
                    }
                    .validate()
                    .map_err(|e| ConfigError::Invalid(format!("backend {}: {e}", b.id)))?;
                }
                BackendKind::Subprocess { command } if command.is_empty() => {
                    return Err(ConfigError::Invalid(format!("backend {}: empty command", b.id)))
                }
                _ => {}
            }
        }
        for p in paths {
            if !p.exists() {
                return Err(ConfigError::MissingPath(p.display().to_string()));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, as lowercase hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn load_lexicon(&self) -> Result<Lexicon, ConfigError> {
        Ok(match &self.lexicon {
            Some(p) => load_lexicon(p)?,
            None => builtin_lexicon(),
        })
    }

    /// The evaluation templates selected by `tasks`.
    pub fn evaluation_templates(&self) -> Result<Vec<TaskTemplate>, ConfigError> {
        let all = match &self.templates {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|source| ConfigError::Read {
                    path: p.display().to_string(),
                    source,
                })?;
                parse_template_set(&text).map_err(|e| ConfigError::Invalid(e.to_string()))?
            }
            None => builtin_templates(),
        };
        let eval: Vec<TaskTemplate> = all
            .into_iter()
            .filter(|t| t.kind == TemplateKind::Evaluation)
            .collect();
        if self.tasks.is_empty() {
            return Ok(eval);
        }
        self.tasks
            .iter()
            .map(|id| {
                eval.iter()
                    .find(|t| &t.task_id == id)
                    .cloned()
                    .ok_or_else(|| ConfigError::Invalid(format!("unknown task `{id}`")))
            })
            .collect()
    }

    pub fn remote_options(&self) -> RemoteOptions {
        RemoteOptions {
            timeout: Duration::from_secs(self.scoring.timeout_secs),
            window: self.scoring.window.max(1),
        }
    }
}

#[derive(Debug, Error)]
pub enum OpenError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Ngram(#[from] NgramError),
}

/// Builds or connects to a configured backend.
pub fn open_backend(
    def: &BackendDef,
    lex: &Lexicon,
    options: RemoteOptions,
) -> Result<Box<dyn Backend>, OpenError> {
    Ok(match &def.kind {
        BackendKind::Ngram {
            corpus,
            order,
            k,
            fine_tune_weight,
            demo_sentences,
            demo_seed,
        } => {
            let config = NgramConfig {
                order: *order,
                k: *k,
                fine_tune_weight: *fine_tune_weight,
            };
            let model = match corpus {
                Some(path) => NgramModel::train_file(path, config)?,
                None => {
                    let text = demo_corpus(lex, *demo_sentences, *demo_seed);
                    NgramModel::train(text.iter().map(String::as_str), config)?
                }
            };
            Box::new(NgramBackend::new(def.id.clone(), model))
        }
        BackendKind::Subprocess { command } => {
            let backend = RemoteBackend::spawn(&command[0], &command[1..], options)?;
            if backend.backend_id() != def.id {
                log::info!("backend {} identifies itself as {}", def.id, backend.backend_id());
            }
            Box::new(backend)
        }
        BackendKind::Tcp { address } => Box::new(RemoteBackend::connect(address, options)?),
    })
}

/// Few-shot epochs for a backend: the configured value, 5 count passes for the
/// n-gram model, and 2 or 4 for autoregressive or masked remote models.
pub fn fewshot_epochs(def: &BackendDef, backend: &dyn Backend) -> u32 {
    if let Some(e) = def.fewshot_epochs {
        return e;
    }
    match def.kind {
        BackendKind::Ngram { .. } => 5,
        _ if backend.capabilities().contains(Capability::FullString) => 2,
        _ => 4,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        let c: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn backend_defs_parse() {
        let c: RunConfig = serde_json::from_str(
            r#"{"backends": [
                {"id": "a", "kind": "ngram", "order": 2},
                {"id": "b", "kind": "subprocess", "command": ["adapter", "--model", "x"]},
                {"id": "c", "kind": "tcp", "address": "127.0.0.1:9000", "fewshot_epochs": 3}
            ]}"#,
        )
        .unwrap();
        assert!(matches!(c.backends[0].kind, BackendKind::Ngram { order: 2, .. }));
        assert_eq!(c.backends[2].fewshot_epochs, Some(3));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sead": 1}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(
            r#"{"backends": [{"id": "a", "kind": "ngram", "ordr": 2}]}"#
        )
        .is_err());
        let c = RunConfig {
            samples_per_cell: 0,
            ..RunConfig::default()
        };
        assert!(matches!(c.validate(), Err(ConfigError::Invalid(_))));
        let c = RunConfig {
            lexicon: Some("/no/such/file.tsv".into()),
            ..RunConfig::default()
        };
        assert!(matches!(c.validate(), Err(ConfigError::MissingPath(_))));
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let b = RunConfig {
            seed: 1,
            ..RunConfig::default()
        };
        assert_eq!(a.hash(), RunConfig::default().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
