//! Deterministic synthetic corpora for the built-in backend.

use std::io::{self, Write};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::lexicon::{LexicalEntry, Lexicon, Number, WordClass};

fn pick_number(rng: &mut ChaCha8Rng) -> Number {
    if rng.random_bool(0.5) {
        Number::Singular
    } else {
        Number::Plural
    }
}

fn reflexive(n: Number) -> &'static str {
    match n {
        Number::Singular => "himself",
        Number::Plural => "themselves",
    }
}

fn copula(n: Number) -> &'static str {
    match n {
        Number::Singular => "is",
        Number::Plural => "are",
    }
}

/// Grammatical sentences over the lexicon's nouns, verbs and adjectives,
/// in frames resembling the evaluation tasks.
pub fn demo_corpus(lex: &Lexicon, sentences: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nouns: Vec<&LexicalEntry> = lex
        .class(WordClass::Noun)
        .iter()
        .chain(lex.class(WordClass::NonGenderedNoun))
        .collect();
    let verbs = lex.class(WordClass::Verb);
    let ptv = lex.class(WordClass::PastTransVerb);
    let adj = lex.class(WordClass::Adj);
    if nouns.is_empty() || verbs.is_empty() {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(sentences);
    while out.len() < sentences {
        let n = pick_number(&mut rng);
        let d = pick_number(&mut rng);
        let head = nouns.choose(&mut rng).expect("non-empty").form(n);
        let other = nouns.choose(&mut rng).expect("non-empty").form(d);
        let verb = |rng: &mut ChaCha8Rng, num| verbs.choose(rng).expect("non-empty").form(num).to_string();
        let s = match rng.random_range(0..7) {
            0 => format!("The {head} {}.", verb(&mut rng, n)),
            1 => format!("The {head} next to the {other} {}.", verb(&mut rng, n)),
            2 => format!("The {head} that the {other} liked {}.", verb(&mut rng, n)),
            3 => format!("The {head} that liked the {other} {}.", verb(&mut rng, n)),
            4 => format!("The {other} said the {head} {}.", verb(&mut rng, n)),
            5 if !ptv.is_empty() => format!(
                "The {head} {} {}.",
                ptv.choose(&mut rng).expect("non-empty").singular,
                reflexive(n)
            ),
            6 if !adj.is_empty() => format!(
                "The {head} {} {}.",
                copula(n),
                adj.choose(&mut rng).expect("non-empty").singular
            ),
            _ => continue,
        };
        out.push(s);
    }
    out
}

/// A corpus where `nouns` always take the agreeing verb form and `controls`
/// always take the opposite form.
pub fn bias_corpus(
    nouns: &[LexicalEntry],
    controls: &[LexicalEntry],
    verbs: &[LexicalEntry],
    repetitions: usize,
) -> Vec<String> {
    let mut out = Vec::new();
    for _ in 0..repetitions {
        for (entries, flip) in [(nouns, false), (controls, true)] {
            for noun in entries {
                for verb in verbs {
                    for n in Number::BOTH {
                        let v = if flip { n.flip() } else { n };
                        out.push(format!("The {} {}.", noun.form(n), verb.form(v)));
                    }
                }
            }
        }
    }
    out
}

pub fn write_lines<W: Write>(lines: &[String], mut out: W) -> io::Result<()> {
    for l in lines {
        writeln!(out, "{l}")?;
    }
    Ok(())
}
