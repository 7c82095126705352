//! Few-shot learning of novel nouns ("wug", "wuz").
//!
//! A run resets the backend, registers the novel token, scores it on the
//! evaluation tasks, fine-tunes on a handful of sentences of one data type and
//! scores it again on the identical workload.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::generation::{sample_cell, sample_workload, GenerationError, SamplingOptions, Target};
use crate::lexicon::{Lexicon, Number};
use crate::protocol::{Backend, BackendError, Capability};
use crate::scoring::{score_cell, NounTaskScore, NumberSplit, ScoringError, ScoringOptions};
use crate::templates::{builtin_templates, TaskTemplate};

pub const DEFAULT_SINGULAR_TOKEN: &str = "wug";
pub const DEFAULT_PLURAL_TOKEN: &str = "wuz";
pub const DEFAULT_SENTENCES: usize = 5;

#[derive(Debug, Error)]
pub enum FewShotError {
    #[error("unknown data type `{0}`")]
    UnknownDataType(String),
    #[error("data type {data_type} is {allowed}-only; cannot pair it with a {requested} token")]
    NumberMismatch {
        data_type: DataType,
        allowed: &'static str,
        requested: &'static str,
    },
    #[error("n_sentences must be at least 1")]
    NoSentences,
    #[error("missing fine-tuning template {0}")]
    MissingTemplate(String),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

/// Kind of fine-tuning data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum DataType {
    Simple,
    PredAdj,
    Reflexive,
    AllAlone,
    Unaccompanied,
    SeparatedEntire,
    Personally,
    Unison,
    Together,
    Simultaneously,
    Outnumbered,
    Constituted,
    Gathered,
}

impl DataType {
    pub const SYNTACTIC: [DataType; 3] = [DataType::Simple, DataType::PredAdj, DataType::Reflexive];

    pub const SEMANTIC: [DataType; 10] = [
        DataType::AllAlone,
        DataType::Unaccompanied,
        DataType::SeparatedEntire,
        DataType::Personally,
        DataType::Unison,
        DataType::Together,
        DataType::Simultaneously,
        DataType::Outnumbered,
        DataType::Constituted,
        DataType::Gathered,
    ];

    pub fn all() -> impl Iterator<Item = DataType> {
        Self::SYNTACTIC.into_iter().chain(Self::SEMANTIC)
    }

    pub fn name(self) -> &'static str {
        match self {
            DataType::Simple => "simple",
            DataType::PredAdj => "pred-adj",
            DataType::Reflexive => "reflexive",
            DataType::AllAlone => "all-alone",
            DataType::Unaccompanied => "unaccompanied",
            DataType::SeparatedEntire => "separated-entire",
            DataType::Personally => "personally",
            DataType::Unison => "unison",
            DataType::Together => "together",
            DataType::Simultaneously => "simultaneously",
            DataType::Outnumbered => "outnumbered",
            DataType::Constituted => "constituted",
            DataType::Gathered => "gathered",
        }
    }

    /// Id of the fine-tuning template.
    pub fn template_id(self) -> String {
        format!("ft_{}", self.name().replace('-', "_"))
    }

    /// The only number a semantic construction may be used with.
    pub fn required_number(self) -> Option<Number> {
        match self {
            DataType::Simple | DataType::PredAdj | DataType::Reflexive => None,
            DataType::AllAlone
            | DataType::Unaccompanied
            | DataType::SeparatedEntire
            | DataType::Personally => Some(Number::Singular),
            _ => Some(Number::Plural),
        }
    }
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DataType {
    type Err = FewShotError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        DataType::all()
            .find(|d| d.name() == norm)
            .ok_or_else(|| FewShotError::UnknownDataType(s.to_string()))
    }
}

/// A novel token with its intended number.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NovelToken {
    pub surface: String,
    pub number: Number,
}

impl NovelToken {
    pub fn wug() -> Self {
        Self {
            surface: DEFAULT_SINGULAR_TOKEN.into(),
            number: Number::Singular,
        }
    }

    pub fn wuz() -> Self {
        Self {
            surface: DEFAULT_PLURAL_TOKEN.into(),
            number: Number::Plural,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FineTuneSpec {
    pub data_type: DataType,
    pub token: NovelToken,
    pub n_sentences: usize,
    pub epochs: u32,
}

impl FineTuneSpec {
    pub fn new(data_type: DataType, token: NovelToken, epochs: u32) -> Result<Self, FewShotError> {
        let spec = Self {
            data_type,
            token,
            n_sentences: DEFAULT_SENTENCES,
            epochs,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), FewShotError> {
        if self.n_sentences == 0 {
            return Err(FewShotError::NoSentences);
        }
        match self.data_type.required_number() {
            Some(n) if n != self.token.number => Err(FewShotError::NumberMismatch {
                data_type: self.data_type,
                allowed: n.short(),
                requested: self.token.number.short(),
            }),
            _ => Ok(()),
        }
    }

    /// Label such as `simple/wug`.
    pub fn label(&self) -> String {
        format!("{}/{}", self.data_type, self.token.surface)
    }

    fn target(&self) -> Target {
        Target::novel(&self.token.surface, self.token.number)
    }
}

/// Renders the fine-tuning sentences, with distinct slot fills where the
/// lexicon allows.
pub fn build_finetune_set(
    spec: &FineTuneSpec,
    lex: &Lexicon,
    seed: u64,
) -> Result<Vec<String>, FewShotError> {
    spec.validate()?;
    let id = spec.data_type.template_id();
    let template: TaskTemplate = builtin_templates()
        .into_iter()
        .find(|t| t.task_id == id)
        .ok_or(FewShotError::MissingTemplate(id))?;
    for class in template.required_classes() {
        if lex.class(class).is_empty() {
            return Err(GenerationError::EmptyClass(class).into());
        }
    }
    let options = SamplingOptions {
        samples_per_cell: spec.n_sentences,
        require_distinct: false,
    };
    let sets = sample_cell(lex, &template, &spec.target(), options, seed)?;
    Ok(sets
        .into_iter()
        .map(|mut vs| vs.variants.swap_remove(0).text)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Phase {
    Baseline,
    Post,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Baseline => "baseline",
            Phase::Post => "post",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FewShotResult {
    pub spec: FineTuneSpec,
    pub sentences: Vec<String>,
    pub baseline: Vec<NounTaskScore>,
    pub post: Vec<NounTaskScore>,
    /// Set when the run stopped early; scores gathered so far are kept.
    pub failure: Option<String>,
}

impl FewShotResult {
    pub fn is_complete(&self) -> bool {
        self.failure.is_none()
    }

    pub fn score(&self, phase: Phase, task_id: &str) -> Option<&NounTaskScore> {
        let list = match phase {
            Phase::Baseline => &self.baseline,
            Phase::Post => &self.post,
        };
        list.iter().find(|s| s.task_id == task_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FewShotOptions {
    pub samples_per_task: usize,
    pub seed: u64,
    pub scoring: ScoringOptions,
}

impl Default for FewShotOptions {
    fn default() -> Self {
        Self {
            samples_per_task: crate::generation::DEFAULT_SAMPLES_PER_CELL,
            seed: 0,
            scoring: ScoringOptions::default(),
        }
    }
}

fn evaluate(
    backend: &dyn Backend,
    lex: &Lexicon,
    tasks: &[TaskTemplate],
    target: &Target,
    options: &FewShotOptions,
    out: &mut Vec<NounTaskScore>,
) -> Result<(), FewShotError> {
    let sampling = SamplingOptions {
        samples_per_cell: options.samples_per_task,
        require_distinct: false,
    };
    let workload = sample_workload(lex, tasks, std::slice::from_ref(target), sampling, options.seed)?;
    for cell in &workload.cells {
        let [all, ..] = score_cell(cell, backend, &options.scoring)?;
        out.push(all.expect("pinned cells have pairs"));
    }
    Ok(())
}

/// Reset, add the token, score, fine-tune, score again.
pub fn run_fewshot(
    spec: &FineTuneSpec,
    backend: &mut dyn Backend,
    lex: &Lexicon,
    tasks: &[TaskTemplate],
    options: &FewShotOptions,
) -> Result<FewShotResult, FewShotError> {
    spec.validate()?;
    let caps = backend.capabilities();
    for cap in [Capability::Reset, Capability::AddToken, Capability::FineTune] {
        caps.require(cap)?;
    }
    let sentences = build_finetune_set(spec, lex, options.seed)?;
    let mut result = FewShotResult {
        spec: spec.clone(),
        sentences: sentences.clone(),
        baseline: Vec::new(),
        post: Vec::new(),
        failure: None,
    };
    let target = spec.target();
    let steps = |backend: &mut dyn Backend, result: &mut FewShotResult| -> Result<(), FewShotError> {
        backend.reset()?;
        backend.add_token(&spec.token.surface)?;
        evaluate(backend, lex, tasks, &target, options, &mut result.baseline)?;
        backend.fine_tune(&sentences, spec.epochs)?;
        evaluate(backend, lex, tasks, &target, options, &mut result.post)?;
        Ok(())
    };
    if let Err(e) = steps(backend, &mut result) {
        log::error!("few-shot run {} incomplete: {e}", spec.label());
        result.failure = Some(e.to_string());
    }
    Ok(result)
}

/// Writes `spec,data_type,novel_token,task_id,phase,mean,ci95_halfwidth`.
pub fn write_results_csv<W: Write>(results: &[FewShotResult], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["spec", "data_type", "novel_token", "task_id", "phase", "mean", "ci95_halfwidth"])?;
    for r in results {
        for (phase, scores) in [(Phase::Baseline, &r.baseline), (Phase::Post, &r.post)] {
            for s in scores {
                debug_assert_eq!(s.split, NumberSplit::All);
                w.write_record([
                    r.spec.label(),
                    r.spec.data_type.to_string(),
                    r.spec.token.surface.clone(),
                    s.task_id.clone(),
                    phase.name().to_string(),
                    s.mean.to_string(),
                    s.ci95_halfwidth.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::{LexicalEntry, WordClass};

    fn lex() -> Lexicon {
        Lexicon::from_entries(
            vec![
                LexicalEntry::new("walk", "walks", "walk", WordClass::PresentTenseVerb),
                LexicalEntry::new("run", "runs", "run", WordClass::PresentTenseVerb),
                LexicalEntry::new("saw", "saw", "", WordClass::PastTransVerb),
                LexicalEntry::new("happy", "happy", "", WordClass::Adj),
            ],
            "test",
        )
        .unwrap()
    }

    #[test]
    fn data_type_names() {
        for d in DataType::all() {
            assert_eq!(d.name().parse::<DataType>().unwrap(), d);
        }
        assert_eq!(DataType::PredAdj.template_id(), "ft_pred_adj");
        assert_eq!(DataType::all().count(), 13);
    }

    #[test]
    fn partition_enforced() {
        assert!(matches!(
            FineTuneSpec::new(DataType::Unison, NovelToken::wug(), 1),
            Err(FewShotError::NumberMismatch { .. })
        ));
        assert!(FineTuneSpec::new(DataType::Unison, NovelToken::wuz(), 1).is_ok());
        assert!(FineTuneSpec::new(DataType::Simple, NovelToken::wuz(), 1).is_ok());
    }

    #[test]
    fn renders_sentences() {
        let mut spec = FineTuneSpec::new(DataType::Simple, NovelToken::wug(), 1).unwrap();
        spec.n_sentences = 2;
        let mut s = build_finetune_set(&spec, &lex(), 0).unwrap();
        s.sort();
        assert_eq!(s, vec!["The wug runs.", "The wug walks."]);

        let mut spec = FineTuneSpec::new(DataType::Constituted, NovelToken::wuz(), 1).unwrap();
        spec.n_sentences = 1;
        assert_eq!(
            build_finetune_set(&spec, &lex(), 0).unwrap(),
            vec!["The wuz constituted a majority of the team."]
        );

        let spec = FineTuneSpec::new(DataType::PredAdj, NovelToken::wuz(), 1).unwrap();
        let s = build_finetune_set(&spec, &lex(), 0).unwrap();
        assert_eq!(s.len(), 5);
        assert!(s.iter().all(|x| x == "The wuz are happy."));
    }
}
