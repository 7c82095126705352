//! Template DSL and minimal-pair expansion.
//!
//! A template is a line of literal words and slots. Slots are written
//! `<Class>` or `<Class:binding>`; punctuation directly after a slot attaches
//! to it. Evaluation templates contain exactly one `<TargetNoun>` and one
//! `:agree` slot. Fine-tuning templates contain exactly one `<NovelToken>`
//! and no agreement site, so they have no grammaticality dimension.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::{LexicalEntry, Number, WordClass};

pub const BUILTIN_TEMPLATES: &str = include_str!("../data/templates.txt");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("column {pos}: unknown slot class `{name}`")]
    UnknownClass { name: String, pos: usize },
    #[error("column {pos}: unknown slot binding `{name}`")]
    UnknownBinding { name: String, pos: usize },
    #[error("column {pos}: {message}")]
    Syntax { message: String, pos: usize },
    #[error("column {pos}: multiple target slots")]
    MultipleTargets { pos: usize },
    #[error("template has no TargetNoun or NovelToken slot")]
    NoTarget,
    #[error("evaluation template has no agreement slot")]
    MissingAgreement,
    #[error("column {pos}: multiple agreement slots")]
    MultipleAgreement { pos: usize },
    #[error("column {pos}: {message}")]
    InvalidBinding { message: String, pos: usize },
    #[error("line {line}: {message}")]
    File { line: usize, message: String },
    #[error("fill is missing slot {slot}")]
    MissingFill { slot: usize },
    #[error("slot {slot} expects {expected}, fill has {found}")]
    ClassMismatch {
        slot: usize,
        expected: String,
        found: WordClass,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SlotKind {
    Literal(String),
    TargetNoun,
    /// Target position of fine-tuning templates ("wug"/"wuz").
    NovelToken,
    Lexical(WordClass),
    /// "himself" / "themselves".
    Reflexive,
    /// "is" / "are".
    Copula,
}

impl SlotKind {
    fn is_target(&self) -> bool {
        matches!(self, SlotKind::TargetNoun | SlotKind::NovelToken)
    }

    /// Whether the slot takes a lexical entry from the fill.
    pub fn is_fillable(&self) -> bool {
        matches!(self, SlotKind::TargetNoun | SlotKind::NovelToken | SlotKind::Lexical(_))
    }

    /// Word class the fill must supply, if any.
    pub fn fill_class(&self) -> Option<WordClass> {
        match self {
            SlotKind::Lexical(c) => Some(*c),
            SlotKind::TargetNoun | SlotKind::NovelToken => Some(WordClass::Noun),
            _ => None,
        }
    }
}

/// Which dimension controls a slot's surface number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Binding {
    None,
    Target,
    Distractor,
    /// Target number, flipped in ungrammatical variants.
    Agree,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Slot {
    pub kind: SlotKind,
    pub binding: Binding,
    /// Rendered without a preceding space.
    pub attached: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dimension {
    TargetNumber,
    DistractorNumber,
    Grammaticality,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemplateKind {
    Evaluation,
    FineTune,
}

/// One assignment of the variation dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Assignment {
    pub target: Number,
    pub distractor: Option<Number>,
    pub grammatical: bool,
}

impl Assignment {
    pub fn label(&self) -> String {
        let mut parts = vec![self.target.short()];
        if let Some(d) = self.distractor {
            parts.push(d.short());
        }
        parts.push(if self.grammatical { "gram" } else { "ungram" });
        parts.join("-")
    }
}

impl fmt::Display for Assignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskTemplate {
    pub task_id: String,
    pub source: String,
    pub slots: Vec<Slot>,
    pub dims: Vec<Dimension>,
    pub agreement_slot: Option<usize>,
    pub kind: TemplateKind,
}

/// Lexical entries for a template's fillable slots, keyed by slot index.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fill(pub BTreeMap<usize, LexicalEntry>);

impl Fill {
    pub fn get(&self, slot: usize) -> Option<&LexicalEntry> {
        self.0.get(&slot)
    }
}

/// One rendered variant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Variant {
    pub assignment: Assignment,
    pub text: String,
    /// Byte range of the agreement word within `text`.
    pub agreement_span: Option<(usize, usize)>,
}

impl Variant {
    /// Splits the sentence around its agreement word: `(left, word, right)`.
    pub fn split_at_agreement(&self) -> Option<(&str, &str, &str)> {
        let (s, e) = self.agreement_span?;
        Some((&self.text[..s], &self.text[s..e], &self.text[e..]))
    }
}

/// All variants of one sampled sentence plus its minimal pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariantSet {
    pub task_id: String,
    pub target: LexicalEntry,
    pub fill: Fill,
    pub variants: Vec<Variant>,
    /// (grammatical index, ungrammatical index).
    pub pairs: Vec<(usize, usize)>,
}

fn parse_class(name: &str, pos: usize) -> Result<SlotKind, TemplateError> {
    Ok(match name {
        "TargetNoun" => SlotKind::TargetNoun,
        "NovelToken" => SlotKind::NovelToken,
        "Reflexive" => SlotKind::Reflexive,
        "Copula" => SlotKind::Copula,
        other => SlotKind::Lexical(other.parse().map_err(|_| TemplateError::UnknownClass {
            name: other.to_string(),
            pos,
        })?),
    })
}

fn parse_binding(name: Option<&str>, pos: usize) -> Result<Binding, TemplateError> {
    Ok(match name {
        None => Binding::None,
        Some("agree") => Binding::Agree,
        Some("distractor") => Binding::Distractor,
        Some("target") => Binding::Target,
        Some(other) => {
            return Err(TemplateError::UnknownBinding {
                name: other.to_string(),
                pos,
            })
        }
    })
}

fn is_punct_run(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_punctuation())
}

/// Parses one template line (without its id).
pub fn parse_template(task_id: &str, source: &str) -> Result<TaskTemplate, TemplateError> {
    let mut slots = Vec::new();
    let mut target_pos = None;
    let mut agree_pos = None;

    let mut offset = 0;
    for word in source.split(' ') {
        let pos = offset + 1;
        offset += word.len() + 1;
        if word.is_empty() {
            continue;
        }
        if let Some(rest) = word.strip_prefix('<') {
            let close = rest.find('>').ok_or_else(|| TemplateError::Syntax {
                message: "unterminated slot".into(),
                pos,
            })?;
            let inner = &rest[..close];
            let tail = &rest[close + 1..];
            let (class, binding) = match inner.split_once(':') {
                Some((c, b)) => (c, Some(b)),
                None => (inner, None),
            };
            let kind = parse_class(class, pos)?;
            let mut binding = parse_binding(binding, pos)?;
            if kind.is_target() {
                if target_pos.is_some() {
                    return Err(TemplateError::MultipleTargets { pos });
                }
                if binding != Binding::None && binding != Binding::Target {
                    return Err(TemplateError::InvalidBinding {
                        message: "target slots take only the :target binding".into(),
                        pos,
                    });
                }
                binding = Binding::Target;
                target_pos = Some(pos);
            }
            if binding == Binding::Agree {
                let agrees = matches!(
                    kind,
                    SlotKind::Reflexive
                        | SlotKind::Copula
                        | SlotKind::Lexical(WordClass::Verb)
                        | SlotKind::Lexical(WordClass::PresentTenseVerb)
                );
                if !agrees {
                    return Err(TemplateError::InvalidBinding {
                        message: format!("{class} cannot be an agreement slot"),
                        pos,
                    });
                }
                if agree_pos.is_some() {
                    return Err(TemplateError::MultipleAgreement { pos });
                }
                agree_pos = Some((pos, slots.len()));
            }
            if binding == Binding::Distractor && !matches!(kind, SlotKind::Lexical(c) if c.is_nominal()) {
                return Err(TemplateError::InvalidBinding {
                    message: format!("{class} cannot be a distractor"),
                    pos,
                });
            }
            if matches!(kind, SlotKind::Reflexive | SlotKind::Copula) && binding == Binding::None {
                return Err(TemplateError::InvalidBinding {
                    message: format!("{class} needs a number binding"),
                    pos,
                });
            }
            slots.push(Slot {
                kind,
                binding,
                attached: false,
            });
            if !tail.is_empty() {
                if !is_punct_run(tail) {
                    return Err(TemplateError::Syntax {
                        message: format!("unexpected text `{tail}` after slot"),
                        pos: pos + close + 2,
                    });
                }
                slots.push(Slot {
                    kind: SlotKind::Literal(tail.to_string()),
                    binding: Binding::None,
                    attached: true,
                });
            }
        } else if word.contains(['<', '>']) {
            return Err(TemplateError::Syntax {
                message: format!("stray angle bracket in `{word}`"),
                pos,
            });
        } else {
            slots.push(Slot {
                kind: SlotKind::Literal(word.to_string()),
                binding: Binding::None,
                attached: is_punct_run(word),
            });
        }
    }

    if target_pos.is_none() {
        return Err(TemplateError::NoTarget);
    }
    let kind = if slots.iter().any(|s| s.kind == SlotKind::TargetNoun) {
        TemplateKind::Evaluation
    } else {
        TemplateKind::FineTune
    };

    let mut dims = vec![Dimension::TargetNumber];
    match kind {
        TemplateKind::Evaluation => {
            // Unbound nouns in an evaluation template vary with the distractor.
            for slot in &mut slots {
                if matches!(slot.kind, SlotKind::Lexical(c) if c.is_nominal())
                    && slot.binding == Binding::None
                {
                    slot.binding = Binding::Distractor;
                }
            }
            if slots.iter().any(|s| s.binding == Binding::Distractor) {
                dims.push(Dimension::DistractorNumber);
            }
            if agree_pos.is_none() {
                return Err(TemplateError::MissingAgreement);
            }
            dims.push(Dimension::Grammaticality);
        }
        TemplateKind::FineTune => {
            if let Some((pos, _)) = agree_pos {
                return Err(TemplateError::InvalidBinding {
                    message: "fine-tuning templates have no agreement slot".into(),
                    pos,
                });
            }
            if slots.iter().any(|s| s.binding == Binding::Distractor) {
                dims.push(Dimension::DistractorNumber);
            }
        }
    }

    Ok(TaskTemplate {
        task_id: task_id.to_string(),
        source: source.to_string(),
        slots,
        dims,
        agreement_slot: agree_pos.map(|(_, idx)| idx),
        kind,
    })
}

/// Parses a template file of `<id>: <template>` lines.
pub fn parse_template_set(text: &str) -> Result<Vec<TaskTemplate>, TemplateError> {
    let mut out: Vec<TaskTemplate> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let file_err = |message: String| TemplateError::File { line: i + 1, message };
        let (id, source) = line
            .split_once(':')
            .ok_or_else(|| file_err("expected `<id>: <template>`".into()))?;
        let id = id.trim();
        if id.is_empty() || id.contains(char::is_whitespace) || id.contains('<') {
            return Err(file_err(format!("invalid template id `{id}`")));
        }
        if out.iter().any(|t| t.task_id == id) {
            return Err(file_err(format!("duplicate template id `{id}`")));
        }
        let template = parse_template(id, source.trim())
            .map_err(|e| file_err(format!("{id}: {e}")))?;
        out.push(template);
    }
    Ok(out)
}

/// The built-in evaluation and fine-tuning templates.
pub fn builtin_templates() -> Vec<TaskTemplate> {
    parse_template_set(BUILTIN_TEMPLATES).expect("built-in templates parse")
}

/// The ten built-in evaluation templates.
pub fn evaluation_templates() -> Vec<TaskTemplate> {
    builtin_templates()
        .into_iter()
        .filter(|t| t.kind == TemplateKind::Evaluation)
        .collect()
}

/// Human-readable task name for reports.
pub fn display_name(task_id: &str) -> String {
    let known = [
        ("sva_simple", "SV Simple"),
        ("sva_subj_rel_clause", "SV SubjRelClause"),
        ("sva_sent_comp", "SV SentComp"),
        ("sva_pp", "SV PP"),
        ("sva_obj_rel_clause_that", "SV ObjRelClauseThat"),
        ("sva_obj_rel_clause_nothat", "SV ObjRelClauseNoThat"),
        ("ra_simple", "RA Simple"),
        ("ra_sent_comp", "RA SentComp"),
        ("ra_obj_rel_clause_that", "RA ObjRelClauseThat"),
        ("ra_obj_rel_clause_nothat", "RA ObjRelClauseNoThat"),
    ];
    known
        .iter()
        .find(|(id, _)| *id == task_id)
        .map(|(_, name)| name.to_string())
        .unwrap_or_else(|| task_id.to_string())
}

impl TaskTemplate {
    pub fn variant_count(&self) -> usize {
        1 << self.dims.len()
    }

    pub fn has_dim(&self, dim: Dimension) -> bool {
        self.dims.contains(&dim)
    }

    pub fn target_slot(&self) -> usize {
        self.slots
            .iter()
            .position(|s| s.kind.is_target())
            .expect("parsed templates have a target slot")
    }

    /// Slots the fill must supply, in slot order.
    pub fn fillable_slots(&self) -> impl Iterator<Item = (usize, &Slot)> {
        self.slots.iter().enumerate().filter(|(_, s)| s.kind.is_fillable())
    }

    /// Word classes required for the non-target slots.
    pub fn required_classes(&self) -> Vec<WordClass> {
        let mut classes: Vec<WordClass> = self
            .slots
            .iter()
            .filter_map(|s| match s.kind {
                SlotKind::Lexical(c) => Some(c),
                _ => None,
            })
            .collect();
        classes.sort();
        classes.dedup();
        classes
    }

    /// Dimension assignments in canonical order: target number outermost,
    /// grammaticality innermost, grammatical before ungrammatical.
    pub fn assignments(&self, pinned_target: Option<Number>) -> Vec<Assignment> {
        let targets: Vec<Number> = match pinned_target {
            Some(n) => vec![n],
            None => Number::BOTH.to_vec(),
        };
        let distractors: Vec<Option<Number>> = if self.has_dim(Dimension::DistractorNumber) {
            Number::BOTH.iter().copied().map(Some).collect()
        } else {
            vec![None]
        };
        let grams: &[bool] = if self.has_dim(Dimension::Grammaticality) {
            &[true, false]
        } else {
            &[true]
        };
        let mut out = Vec::new();
        for &target in &targets {
            for &distractor in &distractors {
                for &grammatical in grams {
                    out.push(Assignment {
                        target,
                        distractor,
                        grammatical,
                    });
                }
            }
        }
        out
    }

    fn check_fill(&self, fill: &Fill) -> Result<(), TemplateError> {
        for (idx, slot) in self.fillable_slots() {
            let entry = fill.get(idx).ok_or(TemplateError::MissingFill { slot: idx })?;
            let ok = match slot.kind {
                SlotKind::Lexical(c) => entry.class == c,
                _ => entry.class.is_nominal(),
            };
            if !ok {
                return Err(TemplateError::ClassMismatch {
                    slot: idx,
                    expected: slot
                        .kind
                        .fill_class()
                        .map(|c| c.to_string())
                        .unwrap_or_default(),
                    found: entry.class,
                });
            }
        }
        Ok(())
    }

    /// Renders one variant. The fill must already be checked.
    fn render(&self, fill: &Fill, a: Assignment) -> Variant {
        let agree_number = if a.grammatical { a.target } else { a.target.flip() };
        let mut text = String::new();
        let mut span = None;
        for (idx, slot) in self.slots.iter().enumerate() {
            let number = match slot.binding {
                Binding::None => Number::Singular,
                Binding::Target => a.target,
                Binding::Distractor => a.distractor.unwrap_or(Number::Singular),
                Binding::Agree => agree_number,
            };
            let word: &str = match &slot.kind {
                SlotKind::Literal(s) => s,
                SlotKind::Reflexive => match number {
                    Number::Singular => "himself",
                    Number::Plural => "themselves",
                },
                SlotKind::Copula => match number {
                    Number::Singular => "is",
                    Number::Plural => "are",
                },
                _ => fill.get(idx).expect("checked fill").form(number),
            };
            if !text.is_empty() && !slot.attached {
                text.push(' ');
            }
            let start = text.len();
            if text.is_empty() {
                let mut chars = word.chars();
                if let Some(first) = chars.next() {
                    text.extend(first.to_uppercase());
                    text.push_str(chars.as_str());
                }
            } else {
                text.push_str(word);
            }
            if Some(idx) == self.agreement_slot {
                span = Some((start, text.len()));
            }
        }
        Variant {
            assignment: a,
            text,
            agreement_span: span,
        }
    }

    /// Renders every dimension assignment of a fill.
    ///
    /// With `pinned_target`, only variants with that target number are
    /// produced (used for novel tokens with a fixed number).
    pub fn expand_variants_pinned(
        &self,
        fill: &Fill,
        pinned_target: Option<Number>,
    ) -> Result<VariantSet, TemplateError> {
        self.check_fill(fill)?;
        let variants: Vec<Variant> = self
            .assignments(pinned_target)
            .into_iter()
            .map(|a| self.render(fill, a))
            .collect();
        let pairs = if self.has_dim(Dimension::Grammaticality) {
            (0..variants.len()).step_by(2).map(|i| (i, i + 1)).collect()
        } else {
            Vec::new()
        };
        let target = fill
            .get(self.target_slot())
            .expect("checked fill")
            .clone();
        Ok(VariantSet {
            task_id: self.task_id.clone(),
            target,
            fill: fill.clone(),
            variants,
            pairs,
        })
    }

    pub fn expand_variants(&self, fill: &Fill) -> Result<VariantSet, TemplateError> {
        self.expand_variants_pinned(fill, None)
    }
}
