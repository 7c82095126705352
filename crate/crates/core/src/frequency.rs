//! Corpus frequency counting and frequency-performance regression.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;
use walkdir::WalkDir;

use crate::analysis::pearson;
use crate::lexicon::{LexicalEntry, Lexicon, Number, WordClass};
use crate::scoring::{NumberSplit, ScoreMatrix};
use crate::text::for_each_token;

#[derive(Debug, Error)]
pub enum FrequencyError {
    #[error("no forms to count")]
    NoForms,
    #[error("cannot read corpus {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("task {task_id} ({number}): need at least 3 points with nonzero frequency, have {have}")]
    InsufficientPoints {
        task_id: String,
        number: &'static str,
        have: usize,
    },
}

/// Whole-token counts of a fixed set of forms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyTable {
    pub corpus_id: String,
    pub counts: BTreeMap<String, u64>,
    pub total_tokens: u64,
}

impl FrequencyTable {
    /// An all-zero table over `forms`, lowercased.
    pub fn new<S: AsRef<str>>(corpus_id: impl Into<String>, forms: &[S]) -> Result<Self, FrequencyError> {
        if forms.is_empty() {
            return Err(FrequencyError::NoForms);
        }
        Ok(Self {
            corpus_id: corpus_id.into(),
            counts: forms
                .iter()
                .map(|f| (f.as_ref().to_lowercase(), 0))
                .collect(),
            total_tokens: 0,
        })
    }

    pub fn get(&self, form: &str) -> u64 {
        self.counts.get(&form.to_lowercase()).copied().unwrap_or(0)
    }

    /// Adds another table's counts over the same forms.
    pub fn merge(&mut self, other: &FrequencyTable) {
        for (form, c) in &other.counts {
            *self.counts.entry(form.clone()).or_insert(0) += c;
        }
        self.total_tokens += other.total_tokens;
    }

    /// Counts tokens of `reader` line by line.
    pub fn count_reader<R: BufRead>(&mut self, mut reader: R) -> io::Result<()> {
        let mut index: HashMap<String, u64> = self.counts.keys().map(|k| (k.clone(), 0)).collect();
        let mut total = 0u64;
        let mut line = String::new();
        loop {
            line.clear();
            if reader.read_line(&mut line)? == 0 {
                break;
            }
            for_each_token(&line, |tok| {
                total += 1;
                if let Some(c) = index.get_mut(tok) {
                    *c += 1;
                }
            });
        }
        for (form, c) in index {
            *self.counts.get_mut(&form).expect("same keys") += c;
        }
        self.total_tokens += total;
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["corpus_id", "form", "count"])?;
        for (form, c) in &self.counts {
            w.write_record([self.corpus_id.as_str(), form, &c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Counts `forms` in a single text stream.
pub fn count_frequencies<R: BufRead, S: AsRef<str>>(
    corpus_id: &str,
    reader: R,
    forms: &[S],
) -> Result<FrequencyTable, FrequencyError> {
    let mut table = FrequencyTable::new(corpus_id, forms)?;
    table.count_reader(reader).map_err(|source| FrequencyError::Io {
        path: corpus_id.to_string(),
        source,
    })?;
    Ok(table)
}

fn corpus_files(path: &Path) -> Result<Vec<PathBuf>, FrequencyError> {
    let io_err = |source| FrequencyError::Io {
        path: path.display().to_string(),
        source,
    };
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files = Vec::new();
    for entry in WalkDir::new(path).sort_by_file_name() {
        let entry = entry.map_err(|e| io_err(e.into()))?;
        if entry.file_type().is_file() {
            files.push(entry.into_path());
        }
    }
    if files.is_empty() && !path.exists() {
        return Err(io_err(io::Error::new(io::ErrorKind::NotFound, "no such file or directory")));
    }
    Ok(files)
}

/// Counts `forms` in a file or every file under a directory, one file per
/// worker.
pub fn count_path<S: AsRef<str> + Sync>(
    corpus_id: &str,
    path: impl AsRef<Path>,
    forms: &[S],
) -> Result<FrequencyTable, FrequencyError> {
    let files = corpus_files(path.as_ref())?;
    let empty = FrequencyTable::new(corpus_id, forms)?;
    let shards = files
        .par_iter()
        .map(|file| {
            let mut table = empty.clone();
            let f = File::open(file).map_err(|source| FrequencyError::Io {
                path: file.display().to_string(),
                source,
            })?;
            table
                .count_reader(BufReader::with_capacity(1 << 16, f))
                .map_err(|source| FrequencyError::Io {
                    path: file.display().to_string(),
                    source,
                })?;
            Ok(table)
        })
        .collect::<Result<Vec<_>, FrequencyError>>()?;
    let mut total = empty;
    for shard in &shards {
        total.merge(shard);
    }
    Ok(total)
}

/// Singular and plural forms of every noun in the lexicon.
pub fn noun_forms(lex: &Lexicon) -> Vec<String> {
    let mut forms: Vec<String> = [WordClass::Noun, WordClass::NonGenderedNoun]
        .into_iter()
        .flat_map(|c| lex.class(c))
        .flat_map(|e| [e.singular.to_lowercase(), e.plural.to_lowercase()])
        .collect();
    forms.sort();
    forms.dedup();
    forms
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionResult {
    pub task_id: String,
    pub number: Number,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n: usize,
    /// Nouns dropped because their form never occurs.
    pub excluded_zero_freq: usize,
}

/// Ordinary least squares fit of `y` on `x`: (slope, intercept, r_squared).
/// Constant `y` gives slope 0 and r_squared 0.
pub fn ols(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let r_squared = if syy > 0.0 && sxx > 0.0 {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (slope, intercept, r_squared)
}

/// Z-scores with the sample standard deviation; a constant series maps to zeros.
pub fn z_scores(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    values
        .iter()
        .map(|v| if sd > 0.0 { (v - m) / sd } else { 0.0 })
        .collect()
}

fn noun_entry<'a>(lex: &'a Lexicon, lemma: &str) -> Option<&'a LexicalEntry> {
    lex.find(WordClass::Noun, lemma)
        .or_else(|| lex.find(WordClass::NonGenderedNoun, lemma))
}

/// Regresses z-scored per-number task performance on log10 frequency of the
/// matching form, once per (task, number).
pub fn regress_frequency(
    scores: &ScoreMatrix,
    lex: &Lexicon,
    freqs: &FrequencyTable,
) -> Result<Vec<RegressionResult>, FrequencyError> {
    let mut out = Vec::new();
    for task in &scores.tasks {
        for number in Number::BOTH {
            let mut x = Vec::new();
            let mut perf = Vec::new();
            let mut excluded = 0;
            for noun in &scores.nouns {
                let Some(value) = scores.value(noun, task, NumberSplit::Only(number)) else {
                    continue;
                };
                let Some(entry) = noun_entry(lex, noun) else {
                    continue;
                };
                let count = freqs.get(entry.form(number));
                if count == 0 {
                    excluded += 1;
                    continue;
                }
                x.push((count as f64).log10());
                perf.push(value);
            }
            if x.len() < 3 {
                return Err(FrequencyError::InsufficientPoints {
                    task_id: task.clone(),
                    number: number.short(),
                    have: x.len(),
                });
            }
            let y = z_scores(&perf);
            let (slope, intercept, r_squared) = ols(&x, &y);
            out.push(RegressionResult {
                task_id: task.clone(),
                number,
                slope,
                intercept,
                r_squared,
                n: x.len(),
                excluded_zero_freq: excluded,
            });
        }
    }
    Ok(out)
}

/// Squared Pearson correlation, for cross-checking a regression's fit.
pub fn r_squared_via_pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(x, y).ok().map(|c| c.r * c.r)
}

pub fn write_regressions_csv<W: Write>(
    results: &[RegressionResult],
    writer: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["task_id", "number", "slope", "intercept", "r_squared", "n"])?;
    for r in results {
        w.write_record([
            r.task_id.clone(),
            r.number.short().to_string(),
            r.slope.to_string(),
            r.intercept.to_string(),
            r.r_squared.to_string(),
            r.n.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
