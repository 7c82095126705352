//! Word lists used to fill template slots.
//!
//! A lexicon is loaded from a tab-separated file with the columns
//! `lemma, singular, plural, class, gendered`. Lines starting with `#` are
//! comments. Verb-like classes store the third-person singular form in the
//! `singular` column and the plural form in the `plural` column.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{Backend, BackendError, Capability, TokenInfo};

/// The curated word lists shipped with the crate.
pub const BUILTIN_LEXICON: &str = include_str!("../data/lexicon.tsv");

/// Grammatical number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Number {
    Singular,
    Plural,
}

impl Number {
    pub const BOTH: [Number; 2] = [Number::Singular, Number::Plural];

    pub fn flip(self) -> Number {
        match self {
            Number::Singular => Number::Plural,
            Number::Plural => Number::Singular,
        }
    }

    /// Short label used in CSV output and variant labels.
    pub fn short(self) -> &'static str {
        match self {
            Number::Singular => "sg",
            Number::Plural => "pl",
        }
    }
}

impl fmt::Display for Number {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

/// Word class of a lexical entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WordClass {
    Noun,
    NonGenderedNoun,
    /// Agreeing present-tense verb with an intransitive reading.
    Verb,
    PastTransVerb,
    PresentTenseVerb,
    Adj,
}

impl WordClass {
    pub const ALL: [WordClass; 6] = [
        WordClass::Noun,
        WordClass::NonGenderedNoun,
        WordClass::Verb,
        WordClass::PastTransVerb,
        WordClass::PresentTenseVerb,
        WordClass::Adj,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WordClass::Noun => "Noun",
            WordClass::NonGenderedNoun => "NonGenderedNoun",
            WordClass::Verb => "Verb",
            WordClass::PastTransVerb => "PastTransVerb",
            WordClass::PresentTenseVerb => "PresentTenseVerb",
            WordClass::Adj => "Adj",
        }
    }

    /// Whether entries of this class carry distinct singular and plural forms.
    pub fn inflects_for_number(self) -> bool {
        !matches!(self, WordClass::PastTransVerb | WordClass::Adj)
    }

    pub fn is_nominal(self) -> bool {
        matches!(self, WordClass::Noun | WordClass::NonGenderedNoun)
    }
}

impl fmt::Display for WordClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WordClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        WordClass::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown word class `{s}`"))
    }
}

/// A word with its number forms.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LexicalEntry {
    pub lemma: String,
    pub singular: String,
    /// Empty when the class has a single form.
    pub plural: String,
    pub class: WordClass,
    pub gendered: bool,
}

impl LexicalEntry {
    pub fn new(
        lemma: impl Into<String>,
        singular: impl Into<String>,
        plural: impl Into<String>,
        class: WordClass,
    ) -> Self {
        Self {
            lemma: lemma.into(),
            singular: singular.into(),
            plural: plural.into(),
            class,
            gendered: false,
        }
    }

    /// Surface form for the given number. Single-form classes ignore it.
    pub fn form(&self, number: Number) -> &str {
        match number {
            Number::Plural if !self.plural.is_empty() => &self.plural,
            _ => &self.singular,
        }
    }

    /// All distinct surface forms of the entry.
    pub fn forms(&self) -> Vec<&str> {
        if self.plural.is_empty() || self.plural == self.singular {
            vec![self.singular.as_str()]
        } else {
            vec![self.singular.as_str(), self.plural.as_str()]
        }
    }

    fn validate(&self) -> Result<(), String> {
        if self.lemma.is_empty() || self.singular.is_empty() {
            return Err("lemma and singular form must be non-empty".into());
        }
        for form in [&self.lemma, &self.singular, &self.plural] {
            if form.chars().any(char::is_whitespace) {
                return Err(format!("form `{form}` contains whitespace"));
            }
        }
        if self.class.inflects_for_number() {
            if self.plural.is_empty() {
                return Err(format!("{} entry needs a plural form", self.class));
            }
            if self.plural == self.singular {
                return Err(format!(
                    "{} entry has identical singular and plural form `{}`",
                    self.class, self.singular
                ));
            }
        } else if !self.plural.is_empty() {
            return Err(format!("{} entry must carry exactly one form", self.class));
        }
        if self.class == WordClass::NonGenderedNoun && self.gendered {
            return Err("NonGenderedNoun entry is marked gendered".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("cannot read lexicon {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid lexicon rows: {}", join_rows(.0))]
    InvalidRows(Vec<RowError>),
    #[error("duplicate entry ({lemma}, {class}) on lines {first} and {second}")]
    Duplicate {
        lemma: String,
        class: WordClass,
        first: usize,
        second: usize,
    },
    #[error("word class {0} is empty")]
    EmptyClass(WordClass),
    #[error("backend error while filtering: {0}")]
    Backend(#[from] BackendError),
    #[error("malformed tokenize reply: {0}")]
    MalformedReply(String),
}

fn join_rows(rows: &[RowError]) -> String {
    rows.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// An immutable, validated collection of lexical entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    entries: BTreeMap<WordClass, Vec<LexicalEntry>>,
    provenance: String,
}

impl Lexicon {
    /// Builds a lexicon from entries, checking every invariant.
    pub fn from_entries(
        entries: impl IntoIterator<Item = LexicalEntry>,
        provenance: impl Into<String>,
    ) -> Result<Self, LexiconError> {
        let rows: Vec<(usize, LexicalEntry)> = entries
            .into_iter()
            .enumerate()
            .map(|(i, e)| (i + 1, e))
            .collect();
        Self::from_rows(rows, provenance.into())
    }

    fn from_rows(rows: Vec<(usize, LexicalEntry)>, provenance: String) -> Result<Self, LexiconError> {
        let errors: Vec<RowError> = rows
            .iter()
            .filter_map(|(line, e)| {
                e.validate().err().map(|message| RowError {
                    line: *line,
                    message,
                })
            })
            .collect();
        if !errors.is_empty() {
            return Err(LexiconError::InvalidRows(errors));
        }
        let mut seen: HashMap<(String, WordClass), usize> = HashMap::new();
        let mut entries: BTreeMap<WordClass, Vec<LexicalEntry>> = BTreeMap::new();
        for (line, entry) in rows {
            if let Some(&first) = seen.get(&(entry.lemma.clone(), entry.class)) {
                return Err(LexiconError::Duplicate {
                    lemma: entry.lemma,
                    class: entry.class,
                    first,
                    second: line,
                });
            }
            seen.insert((entry.lemma.clone(), entry.class), line);
            entries.entry(entry.class).or_default().push(entry);
        }
        Ok(Self {
            entries,
            provenance,
        })
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn class(&self, class: WordClass) -> &[LexicalEntry] {
        self.entries.get(&class).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn iter(&self) -> impl Iterator<Item = &LexicalEntry> {
        self.entries.values().flatten()
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn find(&self, class: WordClass, lemma: &str) -> Option<&LexicalEntry> {
        self.class(class).iter().find(|e| e.lemma == lemma)
    }

    /// Per-class entry counts, in class order.
    pub fn class_sizes(&self) -> Vec<(WordClass, usize)> {
        WordClass::ALL
            .iter()
            .map(|&c| (c, self.class(c).len()))
            .collect()
    }

    /// Fails with [`LexiconError::EmptyClass`] if any listed class has no entries.
    pub fn ensure_classes(&self, classes: &[WordClass]) -> Result<(), LexiconError> {
        match classes.iter().find(|&&c| self.class(c).is_empty()) {
            Some(&c) => Err(LexiconError::EmptyClass(c)),
            None => Ok(()),
        }
    }

    /// Keeps only entries for which `keep` returns true.
    pub fn retain(&self, mut keep: impl FnMut(&LexicalEntry) -> bool) -> Lexicon {
        let entries = self
            .entries
            .iter()
            .map(|(&c, list)| (c, list.iter().filter(|e| keep(e)).cloned().collect()))
            .collect();
        Lexicon {
            entries,
            provenance: self.provenance.clone(),
        }
    }
}

impl FromStr for Lexicon {
    type Err = LexiconError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        parse_lexicon(text, "<inline>")
    }
}

/// Parses lexicon TSV text.
pub fn parse_lexicon(text: &str, provenance: &str) -> Result<Lexicon, LexiconError> {
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
            continue;
        }
        match parse_row(trimmed) {
            Ok(entry) => rows.push((line, entry)),
            Err(message) => errors.push(RowError { line, message }),
        }
    }
    if !errors.is_empty() {
        return Err(LexiconError::InvalidRows(errors));
    }
    Lexicon::from_rows(rows, provenance.to_string())
}

fn parse_row(line: &str) -> Result<LexicalEntry, String> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != 5 {
        return Err(format!("expected 5 tab-separated columns, found {}", cols.len()));
    }
    let class: WordClass = cols[3].trim().parse()?;
    let gendered = match cols[4].trim() {
        "0" => false,
        "1" => true,
        other => return Err(format!("gendered column must be 0 or 1, found `{other}`")),
    };
    Ok(LexicalEntry {
        lemma: cols[0].trim().to_string(),
        singular: cols[1].trim().to_string(),
        plural: cols[2].trim().to_string(),
        class,
        gendered,
    })
}

pub fn builtin_lexicon() -> Lexicon {
    parse_lexicon(BUILTIN_LEXICON, "builtin").expect("built-in lexicon is valid")
}

/// Loads and validates a lexicon file.
pub fn load_lexicon(path: impl AsRef<Path>) -> Result<Lexicon, LexiconError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| LexiconError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_lexicon(&text, &path.display().to_string())
}

/// Removes entries the backend cannot represent cleanly.
///
/// An entry is dropped when any of its forms is unknown to the backend, or
/// when its singular and plural forms receive different token counts. For
/// backends that can only score a single masked token, agreeing verbs that
/// span more than one token are dropped as well.
pub fn filter_for_backend(lex: &Lexicon, backend: &dyn Backend) -> Result<Lexicon, LexiconError> {
    let mut words: Vec<String> = lex
        .iter()
        .flat_map(|e| e.forms().into_iter().map(str::to_string))
        .collect();
    words.sort();
    words.dedup();
    let infos = backend.tokenize(&words)?;
    if infos.len() != words.len() {
        return Err(LexiconError::MalformedReply(format!(
            "asked for {} words, got {} token records",
            words.len(),
            infos.len()
        )));
    }
    let table: HashMap<&str, TokenInfo> = words.iter().map(String::as_str).zip(infos).collect();
    let caps = backend.capabilities();
    let masked_only = caps.contains(Capability::Masked) && !caps.contains(Capability::FullString);

    Ok(lex.retain(|entry| {
        let forms = entry.forms();
        let infos: Vec<TokenInfo> = forms.iter().map(|f| table[f]).collect();
        if infos.iter().any(|t| t.unknown) {
            return false;
        }
        if infos.windows(2).any(|w| w[0].count != w[1].count) {
            return false;
        }
        if masked_only && entry.class == WordClass::Verb && infos.iter().any(|t| t.count > 1) {
            return false;
        }
        true
    }))
}
