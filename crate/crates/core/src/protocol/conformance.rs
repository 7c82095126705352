//! Capability-aware checks any backend implementation should pass.

use super::{Backend, Capability, MaskedQuery};

/// Scores must be reproducible to this many nats across calls and resets.
pub const TOLERANCE: f64 = 1e-4;

const PROBES: [&str; 3] = ["The cat walks.", "The cats walk.", "The cat next to the boys jumps."];

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub outcome: Result<(), String>,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.outcome.is_ok()
    }
}

fn close(a: &[f64], b: &[f64]) -> Result<(), String> {
    if a.len() != b.len() {
        return Err(format!("{} scores vs {}", a.len(), b.len()));
    }
    for (x, y) in a.iter().zip(b) {
        if (x - y).abs() > TOLERANCE {
            return Err(format!("{x} vs {y} differ by more than {TOLERANCE}"));
        }
    }
    Ok(())
}

fn finite(scores: &[f64], expected: usize) -> Result<(), String> {
    if scores.len() != expected {
        return Err(format!("expected {expected} scores, got {}", scores.len()));
    }
    match scores.iter().find(|s| !s.is_finite()) {
        Some(s) => Err(format!("non-finite score {s}")),
        None => Ok(()),
    }
}

fn probe(backend: &dyn Backend) -> Result<Vec<f64>, String> {
    let caps = backend.capabilities();
    if caps.contains(Capability::FullString) {
        let strings: Vec<String> = PROBES.iter().map(|s| s.to_string()).collect();
        backend.score_strings(&strings).map_err(|e| e.to_string())
    } else {
        backend
            .score_masked("The cat ", ".", &["walks".to_string(), "walk".to_string()])
            .map_err(|e| e.to_string())
    }
}

fn masked_queries() -> Vec<MaskedQuery> {
    PROBES
        .iter()
        .map(|_| MaskedQuery {
            left: "The cat ".into(),
            right: ".".into(),
            candidates: vec!["walks".into(), "walk".into()],
        })
        .collect()
}

/// Runs every check the backend's capabilities allow. Leaves the backend reset.
pub fn run_conformance(backend: &mut dyn Backend) -> Vec<Check> {
    let caps = backend.capabilities().clone();
    let mut checks = Vec::new();
    let mut push = |name, outcome| checks.push(Check { name, outcome });

    if !caps.contains(Capability::FullString) && !caps.contains(Capability::Masked) {
        push("scoring_mode", Err("neither full_string nor masked is supported".into()));
        return checks;
    }
    push("scoring_mode", Ok(()));

    if caps.contains(Capability::FullString) {
        let strings: Vec<String> = PROBES.iter().map(|s| s.to_string()).collect();
        let outcome = backend
            .score_strings(&strings)
            .map_err(|e| e.to_string())
            .and_then(|a| {
                finite(&a, strings.len())?;
                let b = backend.score_strings(&strings).map_err(|e| e.to_string())?;
                close(&a, &b)
            });
        push("score_strings_deterministic", outcome);
        let outcome = backend
            .score_strings(&[])
            .map_err(|e| e.to_string())
            .and_then(|s| finite(&s, 0));
        push("score_strings_empty_batch", outcome);
    }

    if caps.contains(Capability::Masked) {
        let queries = masked_queries();
        let outcome = backend
            .score_masked_many(&queries)
            .map_err(|e| e.to_string())
            .and_then(|all| {
                if all.len() != queries.len() {
                    return Err(format!("{} replies for {} queries", all.len(), queries.len()));
                }
                for s in &all {
                    finite(s, 2)?;
                    close(s, &all[0])?;
                }
                Ok(())
            });
        push("score_masked_pipelined", outcome);
    }

    if caps.contains(Capability::Tokenize) {
        let words = vec!["cat".to_string(), "cats".to_string()];
        let outcome = backend.tokenize(&words).map_err(|e| e.to_string()).and_then(|t| {
            if t.len() != words.len() {
                return Err(format!("{} token records for {} words", t.len(), words.len()));
            }
            match t.iter().find(|i| i.count == 0) {
                Some(_) => Err("a word tokenized to zero pieces".into()),
                None => Ok(()),
            }
        });
        push("tokenize_shape", outcome);
    }

    if caps.contains(Capability::Reset) {
        let outcome = (|| {
            backend.reset().map_err(|e| e.to_string())?;
            let before = probe(backend)?;
            if caps.contains(Capability::AddToken) {
                backend.add_token("wug").map_err(|e| e.to_string())?;
            }
            if caps.contains(Capability::FineTune) {
                let sentences = vec!["The wug walks.".to_string(), "The cat walk.".to_string()];
                backend.fine_tune(&sentences, 2).map_err(|e| e.to_string())?;
            }
            backend.reset().map_err(|e| e.to_string())?;
            close(&before, &probe(backend)?)
        })();
        push("reset_restores_scores", outcome);
    }

    if caps.contains(Capability::FineTune) && caps.contains(Capability::Reset) {
        let outcome = (|| {
            let before = probe(backend)?;
            backend.fine_tune(&["The cat walks.".to_string()], 0).map_err(|e| e.to_string())?;
            let after = probe(backend)?;
            backend.reset().map_err(|e| e.to_string())?;
            close(&before, &after)
        })();
        push("zero_epochs_is_identity", outcome);
    }
    checks
}
