//! Sampling of slot fills per (target noun, task) cell.
//!
//! Each cell draws from its own ChaCha stream keyed by `(seed, noun, task)`,
//! so a cell's samples do not depend on which other cells are generated or
//! in which order.

use std::io::{self, Write};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::lexicon::{LexicalEntry, Lexicon, Number, WordClass};
use crate::templates::{Fill, SlotKind, TaskTemplate, TemplateError, VariantSet};

pub const DEFAULT_SAMPLES_PER_CELL: usize = 500;

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("samples per cell must be at least 1")]
    ZeroSamples,
    #[error("word class {0} is empty")]
    EmptyClass(WordClass),
    #[error("task {task_id}: only {space} distinct fills exist but {requested} were requested")]
    InsufficientSpace {
        task_id: String,
        space: usize,
        requested: usize,
    },
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// The noun filling the target slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Target {
    pub entry: LexicalEntry,
    /// Fixed number for novel tokens; `None` varies the target number.
    pub pinned: Option<Number>,
}

impl Target {
    pub fn noun(entry: LexicalEntry) -> Self {
        Self {
            entry,
            pinned: None,
        }
    }

    /// A novel token of fixed number ("wug" singular, "wuz" plural).
    pub fn novel(surface: &str, number: Number) -> Self {
        Self {
            entry: LexicalEntry::new(surface, surface, surface, WordClass::Noun),
            pinned: Some(number),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingOptions {
    pub samples_per_cell: usize,
    /// Fail instead of falling back to sampling with replacement.
    pub require_distinct: bool,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        Self {
            samples_per_cell: DEFAULT_SAMPLES_PER_CELL,
            require_distinct: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cell {
    pub noun: String,
    pub task_id: String,
    pub sets: Vec<VariantSet>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workload {
    pub seed: u64,
    pub samples_per_cell: usize,
    /// Noun-major, in the order nouns and templates were given.
    pub cells: Vec<Cell>,
}

/// Seeds the RNG stream of one cell.
pub fn cell_rng(seed: u64, noun: &str, task_id: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((noun.len() as u64).to_le_bytes());
    hasher.update(noun.as_bytes());
    hasher.update(task_id.as_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

/// Samples `options.samples_per_cell` variant sets for one target and template.
pub fn sample_cell(
    lex: &Lexicon,
    template: &TaskTemplate,
    target: &Target,
    options: SamplingOptions,
    seed: u64,
) -> Result<Vec<VariantSet>, GenerationError> {
    let n = options.samples_per_cell;
    if n == 0 {
        return Err(GenerationError::ZeroSamples);
    }
    let target_slot = template.target_slot();
    let open: Vec<(usize, &[LexicalEntry])> = template
        .fillable_slots()
        .filter(|(idx, _)| *idx != target_slot)
        .map(|(idx, slot)| match slot.kind {
            SlotKind::Lexical(class) => {
                let list = lex.class(class);
                if list.is_empty() {
                    Err(GenerationError::EmptyClass(class))
                } else {
                    Ok((idx, list))
                }
            }
            _ => unreachable!("only lexical slots besides the target are fillable"),
        })
        .collect::<Result<_, _>>()?;

    let space = open
        .iter()
        .try_fold(1usize, |acc, (_, list)| acc.checked_mul(list.len()));
    let mut rng = cell_rng(seed, &target.entry.lemma, &template.task_id);

    let choices: Vec<Vec<usize>> = match space {
        Some(space) if space >= n => index::sample(&mut rng, space, n)
            .into_iter()
            .map(|mut code| {
                open.iter()
                    .map(|(_, list)| {
                        let pick = code % list.len();
                        code /= list.len();
                        pick
                    })
                    .collect()
            })
            .collect(),
        None => {
            // Space overflows usize: collisions are negligible but still excluded.
            let mut seen = std::collections::HashSet::new();
            let mut out = Vec::with_capacity(n);
            while out.len() < n {
                let pick: Vec<usize> = open.iter().map(|(_, l)| rng.random_range(0..l.len())).collect();
                if seen.insert(pick.clone()) {
                    out.push(pick);
                }
            }
            out
        }
        Some(space) => {
            if options.require_distinct {
                return Err(GenerationError::InsufficientSpace {
                    task_id: template.task_id.clone(),
                    space,
                    requested: n,
                });
            }
            (0..n)
                .map(|_| open.iter().map(|(_, l)| rng.random_range(0..l.len())).collect())
                .collect()
        }
    };

    choices
        .into_iter()
        .map(|picks| {
            let mut fill = Fill::default();
            fill.0.insert(target_slot, target.entry.clone());
            for ((idx, list), pick) in open.iter().zip(picks) {
                fill.0.insert(*idx, list[pick].clone());
            }
            Ok(template.expand_variants_pinned(&fill, target.pinned)?)
        })
        .collect()
}

/// Samples every (noun, template) cell.
pub fn sample_workload(
    lex: &Lexicon,
    templates: &[TaskTemplate],
    targets: &[Target],
    options: SamplingOptions,
    seed: u64,
) -> Result<Workload, GenerationError> {
    if options.samples_per_cell == 0 {
        return Err(GenerationError::ZeroSamples);
    }
    for t in templates {
        for class in t.required_classes() {
            if lex.class(class).is_empty() {
                return Err(GenerationError::EmptyClass(class));
            }
        }
    }
    let jobs: Vec<(&Target, &TaskTemplate)> = targets
        .iter()
        .flat_map(|target| templates.iter().map(move |t| (target, t)))
        .collect();
    let cells = jobs
        .par_iter()
        .map(|(target, template)| {
            Ok(Cell {
                noun: target.entry.lemma.clone(),
                task_id: template.task_id.clone(),
                sets: sample_cell(lex, template, target, options, seed)?,
            })
        })
        .collect::<Result<Vec<_>, GenerationError>>()?;
    Ok(Workload {
        seed,
        samples_per_cell: options.samples_per_cell,
        cells,
    })
}

/// Writes `task_id<TAB>noun_lemma<TAB>variant_label<TAB>sentence` lines.
pub fn write_workload<W: Write>(workload: &Workload, mut out: W) -> io::Result<()> {
    for cell in &workload.cells {
        for set in &cell.sets {
            for v in &set.variants {
                writeln!(
                    out,
                    "{}\t{}\t{}\t{}",
                    cell.task_id,
                    cell.noun,
                    v.assignment.label(),
                    v.text
                )?;
            }
        }
    }
    Ok(())
}
