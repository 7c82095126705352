//! Per-noun grammatical agreement evaluation for language models.
//!
//! Minimal pairs are generated from task templates, scored through a
//! pluggable [`protocol::Backend`], and aggregated into per-noun task scores
//! that feed correlation, PCA, frequency and few-shot analyses.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod fewshot;
pub mod frequency;
pub mod generation;
pub mod lexicon;
pub mod ngram;
pub mod protocol;
pub mod scoring;
pub mod svg;
pub mod synth;
pub mod templates;
pub mod text;
