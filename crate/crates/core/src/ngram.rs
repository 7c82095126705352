//! Built-in word-level n-gram language model.
//!
//! Probabilities use add-k smoothing at the longest context that has been
//! observed, falling back to shorter contexts (down to the unigram
//! distribution, then uniform) when a context has no counts:
//!
//! ```text
//! P(w | h) = (c(h, w) + k) / (c(h) + k * |V|)     for the longest suffix h with c(h) > 0
//! ```
//!
//! `|V|` counts every vocabulary word plus the unknown-word symbol. Each
//! sentence is left-padded with `order - 1` boundary symbols; no end symbol
//! is predicted, so the empty sentence scores exactly 0.
//!
//! Fine-tuning adds `epochs * weight` copies of each sentence's n-gram counts.
//! Reset restores the counts and vocabulary snapshotted at training time.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use thiserror::Error;

use crate::protocol::{Backend, BackendError, Capabilities, TokenInfo};
use crate::text;

/// Id of the unknown-word symbol.
pub const UNK: u32 = 0;
/// Id of the sentence-boundary padding symbol. Never predicted.
pub const BOS: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum NgramError {
    #[error("training corpus contains no tokens")]
    EmptyCorpus,
    #[error("invalid n-gram configuration: {0}")]
    Config(String),
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NgramConfig {
    pub order: usize,
    /// Add-k pseudo-count.
    pub k: f64,
    /// Count multiplicity of one fine-tuning epoch.
    pub fine_tune_weight: u64,
}

impl Default for NgramConfig {
    fn default() -> Self {
        Self {
            order: 3,
            k: 0.1,
            fine_tune_weight: 1,
        }
    }
}

impl NgramConfig {
    pub fn validate(&self) -> Result<(), NgramError> {
        if self.order == 0 {
            return Err(NgramError::Config("order must be at least 1".into()));
        }
        if !(self.k.is_finite() && self.k > 0.0) {
            return Err(NgramError::Config("k must be a positive finite number".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ContextCounts {
    pub total: u64,
    pub next: HashMap<u32, u64>,
}

#[derive(Debug, Clone, PartialEq)]
struct State {
    /// Index = id; entry 0 is the unknown-word symbol.
    words: Vec<String>,
    ids: HashMap<String, u32>,
    /// `counts[n]` maps contexts of length `n` to their continuations.
    counts: Vec<HashMap<Vec<u32>, ContextCounts>>,
}

impl State {
    fn new(order: usize) -> Self {
        Self {
            words: vec!["<unk>".to_string()],
            ids: HashMap::new(),
            counts: vec![HashMap::new(); order],
        }
    }

    fn register(&mut self, word: &str) -> u32 {
        if let Some(&id) = self.ids.get(word) {
            return id;
        }
        let id = self.words.len() as u32;
        self.words.push(word.to_string());
        self.ids.insert(word.to_string(), id);
        id
    }

    fn add_sentence(&mut self, ids: &[u32], times: u64) {
        let order = self.counts.len();
        let mut history = vec![BOS; order - 1];
        for &w in ids {
            for n in 0..order {
                let ctx = history[history.len() - n..].to_vec();
                let entry = self.counts[n].entry(ctx).or_default();
                entry.total += times;
                *entry.next.entry(w).or_default() += times;
            }
            if order > 1 {
                history.remove(0);
                history.push(w);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NgramModel {
    config: NgramConfig,
    state: State,
    frozen_base: State,
}

impl NgramModel {
    /// Trains on sentences, one per item.
    pub fn train<'a>(
        sentences: impl IntoIterator<Item = &'a str>,
        config: NgramConfig,
    ) -> Result<Self, NgramError> {
        config.validate()?;
        let mut state = State::new(config.order);
        let mut tokens = 0usize;
        for sentence in sentences {
            let ids: Vec<u32> = text::tokenize(sentence)
                .iter()
                .map(|t| state.register(t))
                .collect();
            tokens += ids.len();
            state.add_sentence(&ids, 1);
        }
        if tokens == 0 {
            return Err(NgramError::EmptyCorpus);
        }
        Ok(Self {
            config,
            frozen_base: state.clone(),
            state,
        })
    }

    /// Trains on a plain-text file, one sentence per line.
    pub fn train_file(path: impl AsRef<Path>, config: NgramConfig) -> Result<Self, NgramError> {
        let path = path.as_ref();
        let io_err = |source| NgramError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = File::open(path).map_err(io_err)?;
        let lines: Vec<String> = BufReader::new(file)
            .lines()
            .collect::<Result<_, _>>()
            .map_err(io_err)?;
        Self::train(lines.iter().map(String::as_str), config)
    }

    /// An untrained model over a fixed vocabulary; every distribution is uniform.
    pub fn uniform(vocabulary: &[&str], config: NgramConfig) -> Result<Self, NgramError> {
        config.validate()?;
        let mut state = State::new(config.order);
        for w in vocabulary {
            state.register(&w.to_lowercase());
        }
        Ok(Self {
            config,
            frozen_base: state.clone(),
            state,
        })
    }

    pub fn config(&self) -> &NgramConfig {
        &self.config
    }

    pub fn order(&self) -> usize {
        self.config.order
    }

    /// Size of the predicted vocabulary, including the unknown-word symbol.
    pub fn vocab_size(&self) -> usize {
        self.state.words.len()
    }

    pub fn id(&self, word: &str) -> u32 {
        self.state.ids.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: u32) -> &str {
        &self.state.words[id as usize]
    }

    pub fn contains(&self, word: &str) -> bool {
        self.state.ids.contains_key(word)
    }

    /// Counts for an exact context (length < order).
    pub fn context_counts(&self, context: &[u32]) -> Option<&ContextCounts> {
        self.state.counts.get(context.len())?.get(context)
    }

    pub fn count(&self, context: &[u32], word: u32) -> u64 {
        self.context_counts(context)
            .and_then(|c| c.next.get(&word))
            .copied()
            .unwrap_or(0)
    }

    /// Conditional probability of `word` given up to `order - 1` preceding ids.
    /// Longer histories are truncated to their last `order - 1` ids.
    pub fn prob(&self, history: &[u32], word: u32) -> f64 {
        let keep = (self.config.order - 1).min(history.len());
        let history = &history[history.len() - keep..];
        let v = self.vocab_size() as f64;
        let k = self.config.k;
        for start in 0..=history.len() {
            let ctx = &history[start..];
            if let Some(cc) = self.state.counts[ctx.len()].get(ctx) {
                if cc.total > 0 {
                    let c = cc.next.get(&word).copied().unwrap_or(0) as f64;
                    return (c + k) / (cc.total as f64 + k * v);
                }
            }
        }
        1.0 / v
    }

    /// Maps tokens to ids, unknown words to [`UNK`].
    pub fn ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    /// Natural-log probability of a sentence.
    pub fn score(&self, sentence: &str) -> f64 {
        let ids = self.ids(&text::tokenize(sentence));
        let mut history = vec![BOS; self.config.order - 1];
        let mut total = 0.0;
        for w in ids {
            total += self.prob(&history, w).ln();
            history.push(w);
        }
        total
    }

    /// Log-score of each single-word candidate in `left ++ candidate ++ right`.
    pub fn score_masked(
        &self,
        left: &str,
        right: &str,
        candidates: &[String],
    ) -> Result<Vec<f64>, BackendError> {
        candidates
            .iter()
            .map(|c| {
                if text::tokenize(c).len() != 1 {
                    return Err(BackendError::InvalidRequest(format!(
                        "masked candidate `{c}` is not a single word"
                    )));
                }
                Ok(self.score(&format!("{left}{c}{right}")))
            })
            .collect()
    }

    pub fn add_token(&mut self, surface: &str) {
        for t in text::tokenize(surface) {
            self.state.register(&t);
        }
    }

    pub fn fine_tune<S: AsRef<str>>(&mut self, sentences: &[S], epochs: u32) {
        let times = u64::from(epochs) * self.config.fine_tune_weight;
        if times == 0 {
            return;
        }
        for sentence in sentences {
            let ids: Vec<u32> = text::tokenize(sentence.as_ref())
                .iter()
                .map(|t| self.state.register(t))
                .collect();
            self.state.add_sentence(&ids, times);
        }
    }

    pub fn reset(&mut self) {
        self.state = self.frozen_base.clone();
    }
}

/// [`NgramModel`] exposed through the scorer protocol.
#[derive(Debug, Clone)]
pub struct NgramBackend {
    backend_id: String,
    capabilities: Capabilities,
    model: NgramModel,
}

impl NgramBackend {
    pub fn new(backend_id: impl Into<String>, model: NgramModel) -> Self {
        Self {
            backend_id: backend_id.into(),
            capabilities: Capabilities::all(),
            model,
        }
    }

    pub fn model(&self) -> &NgramModel {
        &self.model
    }
}

impl Backend for NgramBackend {
    fn backend_id(&self) -> &str {
        &self.backend_id
    }

    fn capabilities(&self) -> &Capabilities {
        &self.capabilities
    }

    fn score_strings(&self, strings: &[String]) -> Result<Vec<f64>, BackendError> {
        Ok(strings.iter().map(|s| self.model.score(s)).collect())
    }

    fn score_masked(
        &self,
        left: &str,
        right: &str,
        candidates: &[String],
    ) -> Result<Vec<f64>, BackendError> {
        self.model.score_masked(left, right, candidates)
    }

    fn tokenize(&self, words: &[String]) -> Result<Vec<TokenInfo>, BackendError> {
        Ok(words
            .iter()
            .map(|w| TokenInfo {
                count: 1,
                unknown: !self.model.contains(&w.to_lowercase()),
            })
            .collect())
    }

    fn fine_tune(&mut self, sentences: &[String], epochs: u32) -> Result<(), BackendError> {
        self.model.fine_tune(sentences, epochs);
        Ok(())
    }

    fn add_token(&mut self, surface: &str) -> Result<(), BackendError> {
        self.model.add_token(surface);
        Ok(())
    }

    fn reset(&mut self) -> Result<(), BackendError> {
        self.model.reset();
        Ok(())
    }
}
