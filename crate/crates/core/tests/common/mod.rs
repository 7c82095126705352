#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nounprobe::lexicon::{builtin_lexicon, Lexicon};
use nounprobe::synth::{demo_corpus, write_lines};

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_nounprobe")
}

pub fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn lexicon() -> Lexicon {
    builtin_lexicon()
}

/// Writes a demo corpus and returns its path.
pub fn demo_corpus_file(dir: &Path, sentences: usize, seed: u64) -> PathBuf {
    let path = dir.join(format!("demo_{seed}.txt"));
    let file = std::fs::File::create(&path).unwrap();
    write_lines(&demo_corpus(&lexicon(), sentences, seed), file).unwrap();
    path
}

pub const TOY_CORPUS: [&str; 10] = [
    "The cat walks.",
    "The cats walk.",
    "The dog next to the cats runs.",
    "The dogs next to the cat run.",
    "The boy said the girl smiles.",
    "The lawyers said the defendant incriminated himself.",
    "The cat that the dogs liked sleeps.",
    "A cat and a dog walk.",
    "The girls admired themselves.",
    "The horse is happy.",
];

fn oracle_tokens(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    for raw in s.split_whitespace() {
        let mut word = raw.to_lowercase();
        let mut tail = Vec::new();
        while word.chars().last().is_some_and(|c| c.is_ascii_punctuation()) {
            tail.push(word.pop().unwrap().to_string());
        }
        if !word.is_empty() {
            out.push(word);
        }
        out.extend(tail.into_iter().rev());
    }
    out
}

/// Brute-force add-k backoff n-gram: every count is a linear scan of the
/// padded corpus.
pub struct OracleNgram {
    sentences: Vec<Vec<String>>,
    vocab: usize,
    order: usize,
    k: f64,
}

const PAD: &str = "\u{0}<s>";

impl OracleNgram {
    pub fn new(corpus: &[&str], order: usize, k: f64) -> Self {
        let sentences: Vec<Vec<String>> = corpus
            .iter()
            .map(|s| {
                let mut t = vec![PAD.to_string(); order - 1];
                t.extend(oracle_tokens(s));
                t
            })
            .collect();
        let mut words: Vec<&String> = sentences.iter().flatten().filter(|w| *w != PAD).collect();
        words.sort();
        words.dedup();
        let vocab = words.len() + 1;
        Self { sentences, vocab, order, k }
    }

    fn counts(&self, history: &[String], word: &str) -> (f64, f64) {
        let (mut ctx, mut joint) = (0.0, 0.0);
        for s in &self.sentences {
            for i in self.order - 1..s.len() {
                if s[i - history.len()..i] == *history {
                    ctx += 1.0;
                    if s[i] == word {
                        joint += 1.0;
                    }
                }
            }
        }
        (ctx, joint)
    }

    pub fn prob(&self, history: &[String], word: &str) -> f64 {
        for start in 0..=history.len() {
            let (ctx, joint) = self.counts(&history[start..], word);
            if ctx > 0.0 {
                return (joint + self.k) / (ctx + self.k * self.vocab as f64);
            }
        }
        1.0 / self.vocab as f64
    }

    pub fn score(&self, sentence: &str) -> f64 {
        let mut history = vec![PAD.to_string(); self.order - 1];
        let mut total = 0.0;
        for w in oracle_tokens(sentence) {
            total += self.prob(&history, &w).ln();
            if !history.is_empty() {
                history.remove(0);
                history.push(w);
            }
        }
        total
    }
}
