//! Sentence and noun scores.
//!
//! A sampled sentence's score is the mean, over its minimal pairs, of
//! `score(grammatical) - score(ungrammatical)` in nats. A noun's task score
//! is the mean sentence score over the cell, reported with a t-based 95%
//! confidence half-width.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::generation::{Cell, Workload};
use crate::lexicon::Number;
use crate::protocol::{Backend, BackendError, Capability, MaskedQuery};
use crate::templates::VariantSet;

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("backend {0} supports neither full-string nor masked scoring")]
    NoScoringMode(String),
    #[error("masked filler `{0}` is more than one token")]
    MultiTokenFiller(String),
    #[error("variant set for {0} has no minimal pairs")]
    NoPairs(String),
    #[error("variant set for {0} has no agreement slot")]
    NoAgreementSlot(String),
    #[error("empty cell")]
    EmptyCell,
    #[error("non-finite score for `{0}`")]
    NonFinite(String),
    #[error("score table: {0}")]
    Table(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMode {
    FullString,
    Masked,
}

impl ScoringMode {
    /// Full-string scoring when available, masked otherwise.
    pub fn for_backend(backend: &dyn Backend) -> Result<Self, ScoringError> {
        let caps = backend.capabilities();
        if caps.contains(Capability::FullString) {
            Ok(ScoringMode::FullString)
        } else if caps.contains(Capability::Masked) {
            Ok(ScoringMode::Masked)
        } else {
            Err(ScoringError::NoScoringMode(backend.backend_id().to_string()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoringOptions {
    /// `None` picks the mode from the backend's capabilities.
    pub mode: Option<ScoringMode>,
    /// Strings per `score_strings` request.
    pub batch_size: usize,
    /// Extra attempts for transient backend failures.
    pub retries: u32,
}

impl Default for ScoringOptions {
    fn default() -> Self {
        Self {
            mode: None,
            batch_size: 64,
            retries: 2,
        }
    }
}

/// Which target-number subset of pairs a score aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NumberSplit {
    All,
    Only(Number),
}

impl NumberSplit {
    pub const ALL: [NumberSplit; 3] = [
        NumberSplit::All,
        NumberSplit::Only(Number::Singular),
        NumberSplit::Only(Number::Plural),
    ];

    fn index(self) -> usize {
        match self {
            NumberSplit::All => 0,
            NumberSplit::Only(Number::Singular) => 1,
            NumberSplit::Only(Number::Plural) => 2,
        }
    }
}

impl fmt::Display for NumberSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NumberSplit::All => f.write_str("all"),
            NumberSplit::Only(n) => f.write_str(n.short()),
        }
    }
}

impl FromStr for NumberSplit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(NumberSplit::All),
            "sg" => Ok(NumberSplit::Only(Number::Singular)),
            "pl" => Ok(NumberSplit::Only(Number::Plural)),
            other => Err(format!("unknown target number `{other}`")),
        }
    }
}

/// One minimal pair's score difference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairDiff {
    pub target: Number,
    pub diff: f64,
}

/// Mean over pairs of `scores[grammatical] - scores[ungrammatical]`,
/// given one score per variant.
pub fn sentence_score_from_variant_scores(pairs: &[(usize, usize)], scores: &[f64]) -> f64 {
    let total: f64 = pairs.iter().map(|&(g, u)| scores[g] - scores[u]).sum();
    total / pairs.len() as f64
}

fn with_retries<T>(
    retries: u32,
    mut op: impl FnMut() -> Result<T, BackendError>,
) -> Result<T, BackendError> {
    let mut attempt = 0;
    loop {
        match op() {
            Err(e) if e.is_transient() && attempt < retries => {
                attempt += 1;
                warn!("retrying after transient backend error: {e}");
            }
            other => return other,
        }
    }
}

fn check_finite(scores: &[f64], what: impl Fn(usize) -> String) -> Result<(), ScoringError> {
    match scores.iter().position(|s| !s.is_finite()) {
        Some(i) => Err(ScoringError::NonFinite(what(i))),
        None => Ok(()),
    }
}

/// Pair differences for every set in `sets`, in set order.
pub fn pair_differences(
    sets: &[VariantSet],
    backend: &dyn Backend,
    options: &ScoringOptions,
) -> Result<Vec<Vec<PairDiff>>, ScoringError> {
    for vs in sets {
        if vs.pairs.is_empty() {
            return Err(ScoringError::NoPairs(vs.task_id.clone()));
        }
    }
    let mode = match options.mode {
        Some(m) => m,
        None => ScoringMode::for_backend(backend)?,
    };
    match mode {
        ScoringMode::FullString => {
            let strings: Vec<String> = sets
                .iter()
                .flat_map(|vs| vs.variants.iter().map(|v| v.text.clone()))
                .collect();
            let mut scores = Vec::with_capacity(strings.len());
            for chunk in strings.chunks(options.batch_size.max(1)) {
                let got = with_retries(options.retries, || backend.score_strings(chunk))?;
                if got.len() != chunk.len() {
                    return Err(BackendError::Malformed(format!(
                        "expected {} scores, got {}",
                        chunk.len(),
                        got.len()
                    ))
                    .into());
                }
                scores.extend(got);
            }
            check_finite(&scores, |i| strings[i].clone())?;
            let mut offset = 0;
            Ok(sets
                .iter()
                .map(|vs| {
                    let local = &scores[offset..offset + vs.variants.len()];
                    offset += vs.variants.len();
                    vs.pairs
                        .iter()
                        .map(|&(g, u)| PairDiff {
                            target: vs.variants[g].assignment.target,
                            diff: local[g] - local[u],
                        })
                        .collect()
                })
                .collect())
        }
        ScoringMode::Masked => {
            let mut queries = Vec::new();
            let mut targets = Vec::new();
            for vs in sets {
                for &(g, u) in &vs.pairs {
                    let (left, good, right) = vs.variants[g]
                        .split_at_agreement()
                        .ok_or_else(|| ScoringError::NoAgreementSlot(vs.task_id.clone()))?;
                    let (left_u, bad, right_u) = vs.variants[u]
                        .split_at_agreement()
                        .ok_or_else(|| ScoringError::NoAgreementSlot(vs.task_id.clone()))?;
                    debug_assert_eq!((left, right), (left_u, right_u));
                    for filler in [good, bad] {
                        if filler.is_empty() || filler.chars().any(char::is_whitespace) {
                            return Err(ScoringError::MultiTokenFiller(filler.to_string()));
                        }
                    }
                    queries.push(MaskedQuery {
                        left: left.to_string(),
                        right: right.to_string(),
                        candidates: vec![good.to_string(), bad.to_string()],
                    });
                    targets.push(vs.variants[g].assignment.target);
                }
            }
            let mut replies = Vec::with_capacity(queries.len());
            for chunk in queries.chunks(options.batch_size.max(1)) {
                let got = with_retries(options.retries, || backend.score_masked_many(chunk))?;
                replies.extend(got);
            }
            let mut diffs = replies.into_iter().zip(targets).zip(&queries).map(|((s, target), q)| {
                if s.len() != 2 {
                    return Err(ScoringError::Backend(BackendError::Malformed(format!(
                        "expected 2 masked scores, got {}",
                        s.len()
                    ))));
                }
                check_finite(&s, |i| q.candidates[i].clone())?;
                Ok(PairDiff {
                    target,
                    diff: s[0] - s[1],
                })
            });
            let mut out = Vec::with_capacity(sets.len());
            for vs in sets {
                let pairs = (0..vs.pairs.len())
                    .map(|_| diffs.next().expect("one reply per pair"))
                    .collect::<Result<Vec<_>, _>>()?;
                out.push(pairs);
            }
            Ok(out)
        }
    }
}

/// Score of one sampled sentence.
pub fn score_sentence(
    vs: &VariantSet,
    backend: &dyn Backend,
    options: &ScoringOptions,
) -> Result<f64, ScoringError> {
    let diffs = pair_differences(std::slice::from_ref(vs), backend, options)?;
    Ok(mean_diff(&diffs[0], NumberSplit::All).expect("pairs present"))
}

fn mean_diff(diffs: &[PairDiff], split: NumberSplit) -> Option<f64> {
    let selected: Vec<f64> = diffs
        .iter()
        .filter(|d| match split {
            NumberSplit::All => true,
            NumberSplit::Only(n) => d.target == n,
        })
        .map(|d| d.diff)
        .collect();
    if selected.is_empty() {
        None
    } else {
        Some(selected.iter().sum::<f64>() / selected.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NounTaskScore {
    pub noun: String,
    pub task_id: String,
    pub backend_id: String,
    pub split: NumberSplit,
    pub mean: f64,
    pub n: usize,
    pub ci95_halfwidth: f64,
}

impl NounTaskScore {
    /// A single-sample score has no spread estimate; its half-width is 0.
    pub fn is_low_n(&self) -> bool {
        self.n < 2
    }
}

/// Mean and t-based 95% half-width of a sample. `n = 1` yields half-width 0.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    (mean, t * var.sqrt() / (n as f64).sqrt())
}

fn summarize(cell: &Cell, backend_id: &str, diffs: &[Vec<PairDiff>], split: NumberSplit) -> Option<NounTaskScore> {
    let values: Vec<f64> = diffs.iter().filter_map(|d| mean_diff(d, split)).collect();
    if values.is_empty() {
        return None;
    }
    let (mean, ci95_halfwidth) = mean_ci95(&values);
    if values.len() == 1 {
        warn!("{}/{}: single-sample cell, half-width reported as 0", cell.noun, cell.task_id);
    }
    Some(NounTaskScore {
        noun: cell.noun.clone(),
        task_id: cell.task_id.clone(),
        backend_id: backend_id.to_string(),
        split,
        mean,
        n: values.len(),
        ci95_halfwidth,
    })
}

/// Scores for one cell, indexed like [`NumberSplit::ALL`].
pub type CellScores = [Option<NounTaskScore>; 3];

/// Scores a whole cell; any failure fails the cell as a unit.
pub fn score_cell(
    cell: &Cell,
    backend: &dyn Backend,
    options: &ScoringOptions,
) -> Result<CellScores, ScoringError> {
    if cell.sets.is_empty() {
        return Err(ScoringError::EmptyCell);
    }
    let diffs = pair_differences(&cell.sets, backend, options)?;
    let id = backend.backend_id();
    Ok(NumberSplit::ALL.map(|split| summarize(cell, id, &diffs, split)))
}

/// Noun score over a cell's sentences.
pub fn score_noun(
    cell: &Cell,
    backend: &dyn Backend,
    options: &ScoringOptions,
) -> Result<NounTaskScore, ScoringError> {
    let [all, _, _] = score_cell(cell, backend, options)?;
    Ok(all.expect("non-empty cell has an overall score"))
}

/// Nouns × tasks grid of scores for one backend. Missing cells are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub backend_id: String,
    pub nouns: Vec<String>,
    pub tasks: Vec<String>,
    cells: Vec<CellScores>,
}

impl ScoreMatrix {
    pub fn new(backend_id: impl Into<String>, nouns: Vec<String>, tasks: Vec<String>) -> Self {
        let len = nouns.len() * tasks.len();
        Self {
            backend_id: backend_id.into(),
            nouns,
            tasks,
            cells: vec![[None, None, None]; len],
        }
    }

    fn slot(&self, noun: &str, task: &str) -> Option<usize> {
        let i = self.nouns.iter().position(|n| n == noun)?;
        let j = self.tasks.iter().position(|t| t == task)?;
        Some(i * self.tasks.len() + j)
    }

    pub fn get(&self, noun: &str, task: &str, split: NumberSplit) -> Option<&NounTaskScore> {
        self.cells[self.slot(noun, task)?][split.index()].as_ref()
    }

    pub fn set(&mut self, score: NounTaskScore) {
        let idx = self
            .slot(&score.noun, &score.task_id)
            .expect("score belongs to the matrix grid");
        let split = score.split.index();
        self.cells[idx][split] = Some(score);
    }

    pub fn value(&self, noun: &str, task: &str, split: NumberSplit) -> Option<f64> {
        self.get(noun, task, split).map(|s| s.mean)
    }

    /// Number of (noun, task) cells without an overall score.
    pub fn missing_cells(&self) -> usize {
        self.cells.iter().filter(|c| c[0].is_none()).count()
    }

    /// Rows with every task present (listwise deletion), as (nouns, rows).
    pub fn complete_rows(&self, split: NumberSplit) -> (Vec<String>, Vec<Vec<f64>>) {
        let mut nouns = Vec::new();
        let mut rows = Vec::new();
        for noun in &self.nouns {
            let row: Option<Vec<f64>> = self
                .tasks
                .iter()
                .map(|t| self.value(noun, t, split))
                .collect();
            if let Some(row) = row {
                nouns.push(noun.clone());
                rows.push(row);
            }
        }
        (nouns, rows)
    }

    /// Writes `backend_id,task_id,noun,target_number,mean,n,ci95_halfwidth`.
    /// Missing cells are written with `NA` values.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["backend_id", "task_id", "noun", "target_number", "mean", "n", "ci95_halfwidth"])?;
        self.write_rows(&mut w)?;
        w.flush()?;
        Ok(())
    }

    fn write_rows<W: Write>(&self, w: &mut csv::Writer<W>) -> Result<(), csv::Error> {
        for noun in &self.nouns {
            for task in &self.tasks {
                for split in NumberSplit::ALL {
                    let split_label = split.to_string();
                    match self.get(noun, task, split) {
                        Some(s) => w.write_record([
                            self.backend_id.as_str(),
                            task,
                            noun,
                            &split_label,
                            &s.mean.to_string(),
                            &s.n.to_string(),
                            &s.ci95_halfwidth.to_string(),
                        ])?,
                        // A number split can be absent by construction (pinned
                        // novel tokens); only a missing overall score is a gap.
                        None if split == NumberSplit::All => w.write_record([
                            self.backend_id.as_str(),
                            task,
                            noun,
                            &split_label,
                            "NA",
                            "0",
                            "NA",
                        ])?,
                        None => {}
                    }
                }
            }
        }
        Ok(())
    }

    /// Writes several matrices into one CSV.
    pub fn write_many_csv<W: Write>(matrices: &[ScoreMatrix], writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["backend_id", "task_id", "noun", "target_number", "mean", "n", "ci95_halfwidth"])?;
        for m in matrices {
            m.write_rows(&mut w)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a score CSV, returning one matrix per backend in first-seen order.
    pub fn read_csv<R: Read>(reader: R) -> Result<Vec<ScoreMatrix>, ScoringError> {
        let mut r = csv::Reader::from_reader(reader);
        let table_err = |e: csv::Error| ScoringError::Table(e.to_string());
        let headers = r.headers().map_err(table_err)?.clone();
        let expected = ["backend_id", "task_id", "noun", "target_number", "mean", "n", "ci95_halfwidth"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(ScoringError::Table(format!("unexpected header {headers:?}")));
        }
        let mut builders: Vec<(String, Vec<String>, Vec<String>, Vec<NounTaskScore>)> = Vec::new();
        for (line, record) in r.records().enumerate() {
            let record = record.map_err(table_err)?;
            let bad = |what: &str| ScoringError::Table(format!("row {}: bad {what}", line + 2));
            let backend = record[0].to_string();
            let task = record[1].to_string();
            let noun = record[2].to_string();
            let split: NumberSplit = record[3].parse().map_err(|_| bad("target_number"))?;
            let pos = match builders.iter().position(|b| b.0 == backend) {
                Some(p) => p,
                None => {
                    builders.push((backend.clone(), Vec::new(), Vec::new(), Vec::new()));
                    builders.len() - 1
                }
            };
            let b = &mut builders[pos];
            if !b.1.contains(&noun) {
                b.1.push(noun.clone());
            }
            if !b.2.contains(&task) {
                b.2.push(task.clone());
            }
            if &record[4] == "NA" {
                continue;
            }
            b.3.push(NounTaskScore {
                noun,
                task_id: task,
                backend_id: backend,
                split,
                mean: record[4].parse().map_err(|_| bad("mean"))?,
                n: record[5].parse().map_err(|_| bad("n"))?,
                ci95_halfwidth: record[6].parse().map_err(|_| bad("ci95_halfwidth"))?,
            });
        }
        Ok(builders
            .into_iter()
            .map(|(id, nouns, tasks, scores)| {
                let mut m = ScoreMatrix::new(id, nouns, tasks);
                for s in scores {
                    m.set(s);
                }
                m
            })
            .collect())
    }
}

/// Scores every cell of a workload. Cells that fail are left missing and
/// reported alongside the matrix.
pub fn score_workload(
    workload: &Workload,
    backend: &dyn Backend,
    options: &ScoringOptions,
) -> (ScoreMatrix, Vec<(String, String, ScoringError)>) {
    let mut nouns: Vec<String> = Vec::new();
    let mut tasks: Vec<String> = Vec::new();
    for cell in &workload.cells {
        if !nouns.contains(&cell.noun) {
            nouns.push(cell.noun.clone());
        }
        if !tasks.contains(&cell.task_id) {
            tasks.push(cell.task_id.clone());
        }
    }
    let results: Vec<Result<CellScores, ScoringError>> = workload
        .cells
        .par_iter()
        .map(|cell| score_cell(cell, backend, options))
        .collect();
    let mut matrix = ScoreMatrix::new(backend.backend_id(), nouns, tasks);
    let mut failures = Vec::new();
    for (cell, result) in workload.cells.iter().zip(results) {
        match result {
            Ok(scores) => {
                for s in scores.into_iter().flatten() {
                    matrix.set(s);
                }
            }
            Err(e) => failures.push((cell.noun.clone(), cell.task_id.clone(), e)),
        }
    }
    (matrix, failures)
}
