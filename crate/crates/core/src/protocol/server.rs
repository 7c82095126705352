use std::io::{BufRead, Write};

use log::debug;
use serde_json::Value;

use super::wire::{Reply, ReplyEnvelope, Request, RequestEnvelope};
use super::{Backend, BackendError, Capability, PROTOCOL_VERSION};

/// Executes one request against a backend.
pub fn handle_request(backend: &mut dyn Backend, request: Request) -> Result<Reply, BackendError> {
    let caps = backend.capabilities().clone();
    match request {
        Request::Hello { protocol_version } => {
            if protocol_version != PROTOCOL_VERSION {
                return Err(BackendError::VersionMismatch {
                    expected: PROTOCOL_VERSION,
                    found: protocol_version,
                });
            }
            Ok(Reply::Hello {
                protocol_version: PROTOCOL_VERSION,
                backend_id: backend.backend_id().to_string(),
                capabilities: caps,
            })
        }
        Request::ScoreStrings { strings } => {
            caps.require(Capability::FullString)?;
            backend.score_strings(&strings).map(Reply::Scores)
        }
        Request::ScoreMasked {
            left,
            right,
            candidates,
        } => {
            caps.require(Capability::Masked)?;
            backend
                .score_masked(&left, &right, &candidates)
                .map(Reply::Scores)
        }
        Request::Tokenize { words } => {
            caps.require(Capability::Tokenize)?;
            backend.tokenize(&words).map(Reply::Tokens)
        }
        Request::FineTune { sentences, epochs } => {
            caps.require(Capability::FineTune)?;
            backend.fine_tune(&sentences, epochs).map(|_| Reply::Empty)
        }
        Request::AddToken { surface } => {
            caps.require(Capability::AddToken)?;
            backend.add_token(&surface).map(|_| Reply::Empty)
        }
        Request::Reset => {
            caps.require(Capability::Reset)?;
            backend.reset().map(|_| Reply::Empty)
        }
        Request::Shutdown => Ok(Reply::Empty),
    }
}

/// Serves the protocol over a line-oriented stream until `shutdown` or EOF.
pub fn serve<R: BufRead, W: Write>(
    backend: &mut dyn Backend,
    input: R,
    mut output: W,
) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (reply, stop) = match serde_json::from_str::<RequestEnvelope>(&line) {
            Ok(env) => {
                debug!("request {} {}", env.id, env.request.op());
                let stop = env.request == Request::Shutdown;
                let reply = match handle_request(backend, env.request) {
                    Ok(Reply::Scores(s)) if s.iter().any(|v| !v.is_finite()) => {
                        ReplyEnvelope::failure(env.id, BackendError::NonFinite.to_string())
                    }
                    Ok(reply) => ReplyEnvelope::success(env.id, reply),
                    Err(e) => ReplyEnvelope::failure(env.id, e.to_string()),
                };
                (reply, stop)
            }
            Err(e) => {
                let id = serde_json::from_str::<Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(Value::as_u64))
                    .unwrap_or(0);
                (ReplyEnvelope::failure(id, format!("bad request: {e}")), false)
            }
        };
        serde_json::to_writer(&mut output, &reply)?;
        output.write_all(b"\n")?;
        output.flush()?;
        if stop {
            break;
        }
    }
    Ok(())
}
