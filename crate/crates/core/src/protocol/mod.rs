//! The scorer protocol.
//!
//! Every language model the harness talks to implements [`Backend`], either
//! in-process (the built-in n-gram model) or through a [`RemoteBackend`]
//! speaking newline-delimited JSON over a subprocess's stdio or a TCP socket.
//!
//! Scoring calls take `&self` and may run concurrently. `fine_tune`,
//! `add_token` and `reset` take `&mut self`, so no scoring call can be in
//! flight across them.

mod client;
pub mod conformance;
mod server;
pub mod wire;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use client::{RemoteBackend, RemoteOptions};
pub use server::{handle_request, serve};

/// Protocol version spoken by this harness.
pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    FullString,
    Masked,
    Tokenize,
    FineTune,
    AddToken,
    Reset,
}

impl Capability {
    pub const ALL: [Capability; 6] = [
        Capability::FullString,
        Capability::Masked,
        Capability::Tokenize,
        Capability::FineTune,
        Capability::AddToken,
        Capability::Reset,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Capability::FullString => "full_string",
            Capability::Masked => "masked",
            Capability::Tokenize => "tokenize",
            Capability::FineTune => "fine_tune",
            Capability::AddToken => "add_token",
            Capability::Reset => "reset",
        }
    }
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Capability {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Capability::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown capability `{s}`"))
    }
}

/// Capability set declared by a backend at handshake.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Capabilities(BTreeSet<Capability>);

impl Capabilities {
    pub fn all() -> Self {
        Capability::ALL.into_iter().collect()
    }

    pub fn contains(&self, cap: Capability) -> bool {
        self.0.contains(&cap)
    }

    pub fn iter(&self) -> impl Iterator<Item = Capability> + '_ {
        self.0.iter().copied()
    }

    pub fn require(&self, cap: Capability) -> Result<(), BackendError> {
        if self.contains(cap) {
            Ok(())
        } else {
            Err(BackendError::Unsupported(cap.name().to_string()))
        }
    }
}

impl FromIterator<Capability> for Capabilities {
    fn from_iter<I: IntoIterator<Item = Capability>>(iter: I) -> Self {
        Capabilities(iter.into_iter().collect())
    }
}

impl fmt::Display for Capabilities {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.iter().map(Capability::name).collect();
        write!(f, "{{{}}}", names.join(", "))
    }
}

/// One masked-scoring query: the sentence is `left ++ candidate ++ right`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedQuery {
    pub left: String,
    pub right: String,
    pub candidates: Vec<String>,
}

/// Tokenization of one word as reported by a backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenInfo {
    pub count: u32,
    pub unknown: bool,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("unsupported op `{0}`")]
    Unsupported(String),
    #[error("backend reported error: {0}")]
    Remote(String),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("handshake failed: {0}")]
    Handshake(String),
    #[error("protocol version mismatch: expected {expected}, backend speaks {found}")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("timed out waiting for backend reply")]
    Timeout,
    #[error("backend exited unexpectedly; diagnostics:\n{diagnostics}")]
    Crashed { diagnostics: String },
    #[error("non-finite score from backend")]
    NonFinite,
    #[error("i/o error talking to backend: {0}")]
    Io(#[from] std::io::Error),
}

impl BackendError {
    /// Whether retrying the same request may succeed.
    pub fn is_transient(&self) -> bool {
        matches!(
            self,
            BackendError::Remote(_) | BackendError::Timeout | BackendError::NonFinite
        )
    }
}

/// A language-model scorer.
pub trait Backend: Send + Sync {
    fn backend_id(&self) -> &str;

    fn capabilities(&self) -> &Capabilities;

    /// One natural-log score per input string.
    fn score_strings(&self, strings: &[String]) -> Result<Vec<f64>, BackendError>;

    /// One log-score per candidate for the sentence `left ++ candidate ++ right`,
    /// conditioned on both contexts. Scores may be unnormalized.
    fn score_masked(
        &self,
        left: &str,
        right: &str,
        candidates: &[String],
    ) -> Result<Vec<f64>, BackendError>;

    /// Scores several masked queries; remote backends pipeline them.
    fn score_masked_many(&self, queries: &[MaskedQuery]) -> Result<Vec<Vec<f64>>, BackendError> {
        queries
            .iter()
            .map(|q| self.score_masked(&q.left, &q.right, &q.candidates))
            .collect()
    }

    fn tokenize(&self, words: &[String]) -> Result<Vec<TokenInfo>, BackendError>;

    fn fine_tune(&mut self, sentences: &[String], epochs: u32) -> Result<(), BackendError>;

    fn add_token(&mut self, surface: &str) -> Result<(), BackendError>;

    /// Restores the pristine pretrained state.
    fn reset(&mut self) -> Result<(), BackendError>;
}
