//! JSON message shapes. One object per line, UTF-8.
//!
//! Requests: `{"id": <int>, "op": <string>, ...}`.
//! Replies: `{"id": <int>, "ok": true, ...}` or
//! `{"id": <int>, "ok": false, "error": <string>}`.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{BackendError, Capabilities, TokenInfo};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request {
    Hello {
        protocol_version: u32,
    },
    ScoreStrings {
        strings: Vec<String>,
    },
    ScoreMasked {
        left: String,
        right: String,
        candidates: Vec<String>,
    },
    Tokenize {
        words: Vec<String>,
    },
    FineTune {
        sentences: Vec<String>,
        epochs: u32,
    },
    AddToken {
        surface: String,
    },
    Reset,
    Shutdown,
}

impl Request {
    pub fn op(&self) -> &'static str {
        match self {
            Request::Hello { .. } => "hello",
            Request::ScoreStrings { .. } => "score_strings",
            Request::ScoreMasked { .. } => "score_masked",
            Request::Tokenize { .. } => "tokenize",
            Request::FineTune { .. } => "fine_tune",
            Request::AddToken { .. } => "add_token",
            Request::Reset => "reset",
            Request::Shutdown => "shutdown",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestEnvelope {
    pub id: u64,
    #[serde(flatten)]
    pub request: Request,
}

/// Successful reply payloads.
#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    Hello {
        protocol_version: u32,
        backend_id: String,
        capabilities: Capabilities,
    },
    Scores(Vec<f64>),
    Tokens(Vec<TokenInfo>),
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplyEnvelope {
    pub id: u64,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(flatten)]
    pub body: Map<String, Value>,
}

impl ReplyEnvelope {
    pub fn success(id: u64, reply: Reply) -> Self {
        let mut body = Map::new();
        match reply {
            Reply::Hello {
                protocol_version,
                backend_id,
                capabilities,
            } => {
                body.insert("protocol_version".into(), protocol_version.into());
                body.insert("backend_id".into(), backend_id.into());
                body.insert(
                    "capabilities".into(),
                    serde_json::to_value(capabilities).expect("capabilities serialize"),
                );
            }
            Reply::Scores(scores) => {
                body.insert("scores".into(), serde_json::to_value(scores).expect("finite scores"));
            }
            Reply::Tokens(tokens) => {
                body.insert("tokens".into(), serde_json::to_value(tokens).expect("tokens serialize"));
            }
            Reply::Empty => {}
        }
        Self {
            id,
            ok: true,
            error: None,
            body,
        }
    }

    pub fn failure(id: u64, message: impl Into<String>) -> Self {
        Self {
            id,
            ok: false,
            error: Some(message.into()),
            body: Map::new(),
        }
    }

    /// Converts an `ok: false` reply into an error.
    pub fn into_result(self) -> Result<Map<String, Value>, BackendError> {
        if self.ok {
            Ok(self.body)
        } else {
            Err(BackendError::Remote(
                self.error.unwrap_or_else(|| "unspecified error".into()),
            ))
        }
    }
}

fn field<T: serde::de::DeserializeOwned>(
    body: &mut Map<String, Value>,
    name: &str,
) -> Result<T, BackendError> {
    let value = body
        .remove(name)
        .ok_or_else(|| BackendError::Malformed(format!("reply missing field `{name}`")))?;
    serde_json::from_value(value)
        .map_err(|e| BackendError::Malformed(format!("field `{name}`: {e}")))
}

pub fn parse_scores(mut body: Map<String, Value>, expected: usize) -> Result<Vec<f64>, BackendError> {
    let scores: Vec<f64> = field(&mut body, "scores")?;
    if scores.len() != expected {
        return Err(BackendError::Malformed(format!(
            "expected {expected} scores, got {}",
            scores.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(BackendError::NonFinite);
    }
    Ok(scores)
}

pub fn parse_tokens(
    mut body: Map<String, Value>,
    expected: usize,
) -> Result<Vec<TokenInfo>, BackendError> {
    let tokens: Vec<TokenInfo> = field(&mut body, "tokens")?;
    if tokens.len() != expected {
        return Err(BackendError::Malformed(format!(
            "expected {expected} token records, got {}",
            tokens.len()
        )));
    }
    Ok(tokens)
}

pub fn parse_hello(mut body: Map<String, Value>) -> Result<(u32, String, Capabilities), BackendError> {
    let version: u32 = field(&mut body, "protocol_version")
        .map_err(|e| BackendError::Handshake(e.to_string()))?;
    let id: String =
        field(&mut body, "backend_id").map_err(|e| BackendError::Handshake(e.to_string()))?;
    let caps: Capabilities =
        field(&mut body, "capabilities").map_err(|e| BackendError::Handshake(e.to_string()))?;
    Ok((version, id, caps))
}
