//! Command-line interface and run orchestration.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::analysis::{cross_model_correlations, pca_matrix, task_correlations, AnalysisError, CorrelationSuite, PcaResult};
use crate::config::{fewshot_epochs, open_backend, ConfigError, CorpusDef, OpenError, RunConfig};
use crate::fewshot::{run_fewshot, write_results_csv, DataType, FewShotError, FewShotOptions, FewShotResult, FineTuneSpec, NovelToken, Phase};
use crate::frequency::{count_path, noun_forms, regress_frequency, write_regressions_csv, z_scores, FrequencyError, FrequencyTable, RegressionResult};
use crate::generation::{sample_workload, write_workload, GenerationError, SamplingOptions, Target};
use crate::lexicon::{filter_for_backend, Lexicon, LexiconError, Number, WordClass};
use crate::ngram::{NgramBackend, NgramConfig, NgramModel};
use crate::protocol::conformance::run_conformance;
use crate::protocol::{serve, Backend, BackendError, RemoteBackend, RemoteOptions};
use crate::scoring::{score_workload, NumberSplit, ScoreMatrix, ScoringError, ScoringOptions};
use crate::svg::{heat_grid, scatter_grid, Panel};
use crate::synth::{demo_corpus, write_lines};
use crate::templates::{display_name, TaskTemplate};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;
pub const EXIT_ANALYSIS: i32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Config,
    Backend,
    Analysis,
    Io,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => EXIT_CONFIG,
            ErrorKind::Backend => EXIT_BACKEND,
            ErrorKind::Analysis => EXIT_ANALYSIS,
            ErrorKind::Io => EXIT_INTERNAL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    fn new(kind: ErrorKind, message: impl ToString) -> Self {
        Self {
            kind,
            message: message.to_string(),
        }
    }

    fn config(message: impl ToString) -> Self {
        Self::new(ErrorKind::Config, message)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::config(e)
    }
}

impl From<OpenError> for CliError {
    fn from(e: OpenError) -> Self {
        CliError::new(ErrorKind::Backend, e)
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        CliError::new(ErrorKind::Backend, e)
    }
}

impl From<LexiconError> for CliError {
    fn from(e: LexiconError) -> Self {
        match e {
            LexiconError::Backend(_) | LexiconError::MalformedReply(_) => CliError::new(ErrorKind::Backend, e),
            _ => CliError::config(e),
        }
    }
}

impl From<GenerationError> for CliError {
    fn from(e: GenerationError) -> Self {
        CliError::config(e)
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        CliError::new(ErrorKind::Analysis, e)
    }
}

impl From<FrequencyError> for CliError {
    fn from(e: FrequencyError) -> Self {
        match e {
            FrequencyError::InsufficientPoints { .. } => CliError::new(ErrorKind::Analysis, e),
            _ => CliError::config(e),
        }
    }
}

impl From<FewShotError> for CliError {
    fn from(e: FewShotError) -> Self {
        match e {
            FewShotError::Backend(_) | FewShotError::Scoring(_) => CliError::new(ErrorKind::Backend, e),
            _ => CliError::config(e),
        }
    }
}

impl From<ScoringError> for CliError {
    fn from(e: ScoringError) -> Self {
        match e {
            ScoringError::Table(_) => CliError::config(e),
            _ => CliError::new(ErrorKind::Backend, e),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::new(ErrorKind::Io, e)
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::new(ErrorKind::Io, e)
    }
}

#[derive(Debug, Parser)]
#[command(name = "nounprobe", version, about = "Per-noun grammatical agreement evaluation for language models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sampled sentences per (noun, task) cell.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Parent directory of run directories.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub run_id: Option<String>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Comma-separated target noun lemmas.
    #[arg(long, value_delimiter = ',')]
    pub nouns: Vec<String>,
    /// Comma-separated evaluation task ids.
    #[arg(long, value_delimiter = ',')]
    pub tasks: Vec<String>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// PCA on the raw covariance matrix instead of correlations.
    #[arg(long)]
    pub raw_covariance: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Export the sampled minimal-pair workload.
    Generate(CommonArgs),
    /// Score every (noun, task) cell on every backend.
    Score(CommonArgs),
    /// Task and cross-model correlations and PCA from score CSVs.
    Analyze {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long = "scores", required = true)]
        scores: Vec<PathBuf>,
    },
    /// Corpus frequencies and frequency-performance regressions.
    Freq {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long = "scores", required = true)]
        scores: Vec<PathBuf>,
        /// Corpus as `id=path`; adds to the configured corpora.
        #[arg(long = "corpus")]
        corpora: Vec<String>,
    },
    /// Few-shot learning of novel nouns.
    Fewshot {
        #[command(flatten)]
        common: CommonArgs,
        /// Fine-tuning data types, e.g. `simple`, `reflexive`, `unison`.
        #[arg(long = "spec", value_delimiter = ',')]
        specs: Vec<String>,
        /// Novel token surfaces to run.
        #[arg(long = "token", value_delimiter = ',')]
        tokens: Vec<String>,
        #[arg(long)]
        epochs: Option<u32>,
        /// Sampled sentences per task when evaluating the novel token.
        #[arg(long)]
        fewshot_samples: Option<usize>,
    },
    /// Score, analyze, count frequencies and run few-shot into one report.
    Report {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long = "corpus")]
        corpora: Vec<String>,
        #[arg(long)]
        fewshot_samples: Option<usize>,
        #[arg(long)]
        skip_fewshot: bool,
    },
    /// Serve the built-in n-gram backend over the scoring protocol.
    Serve {
        /// Training corpus, one sentence per line; a demo corpus when absent.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long, default_value = "ngram")]
        id: String,
        #[arg(long, default_value_t = NgramConfig::default().order)]
        order: usize,
        #[arg(long, default_value_t = NgramConfig::default().k)]
        k: f64,
        /// Listen on a TCP address instead of stdio.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Run the protocol conformance checks against a backend command.
    Conformance {
        #[arg(long, default_value_t = 300)]
        timeout_secs: u64,
        /// Backend program and its arguments, after `--`.
        #[arg(last = true, required = true)]
        command: Vec<String>,
    },
    /// Write the synthetic demo corpus.
    SynthCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20_000)]
        sentences: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
}

fn resolve_config(args: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut config = match &args.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(n) = args.samples {
        config.samples_per_cell = n;
    }
    if let Some(o) = &args.out {
        config.output_dir = o.clone();
    }
    if let Some(l) = &args.lexicon {
        config.lexicon = Some(l.clone());
    }
    if !args.nouns.is_empty() {
        config.nouns = args.nouns.clone();
    }
    if !args.tasks.is_empty() {
        config.tasks = args.tasks.clone();
    }
    if let Some(t) = args.threads {
        config.threads = Some(t);
    }
    if let Some(a) = args.alpha {
        config.analysis.alpha = a;
    }
    if args.raw_covariance {
        config.analysis.standardize = false;
    }
    config.validate()?;
    if let Some(t) = config.threads {
        // Fails harmlessly if the pool was already built in this process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    Ok(config)
}

#[derive(Debug, Serialize)]
struct Manifest {
    run_id: String,
    command: String,
    version: &'static str,
    config_hash: String,
    seed: u64,
    samples_per_cell: usize,
    backend_ids: Vec<String>,
    started_at: String,
    status: &'static str,
    artifact_list: Vec<String>,
    details: serde_json::Map<String, Value>,
    config: RunConfig,
}

/// An append-only run directory.
pub struct Run {
    dir: PathBuf,
    manifest: Manifest,
}

impl Run {
    fn create(command: &str, config: &RunConfig, run_id: Option<String>) -> Result<Self, CliError> {
        let now = chrono::Utc::now();
        let hash = config.hash();
        let run_id = run_id.unwrap_or_else(|| {
            format!("{command}-{}-{}", now.format("%Y%m%dT%H%M%S%3f"), &hash[..8])
        });
        if run_id.is_empty() || run_id.contains(['/', '\\']) || run_id == "." || run_id == ".." {
            return Err(CliError::config(format!("invalid run id `{run_id}`")));
        }
        fs::create_dir_all(&config.output_dir)?;
        let dir = config.output_dir.join(&run_id);
        fs::create_dir(&dir).map_err(|e| match e.kind() {
            io::ErrorKind::AlreadyExists => CliError::config(format!(
                "run directory {} already exists; runs never overwrite earlier outputs",
                dir.display()
            )),
            _ => e.into(),
        })?;
        let run = Run {
            dir,
            manifest: Manifest {
                run_id,
                command: command.to_string(),
                version: env!("CARGO_PKG_VERSION"),
                config_hash: hash,
                seed: config.seed,
                samples_per_cell: config.samples_per_cell,
                backend_ids: config.backends.iter().map(|b| b.id.clone()).collect(),
                started_at: now.to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
                status: "running",
                artifact_list: Vec::new(),
                details: serde_json::Map::new(),
                config: config.clone(),
            },
        };
        run.write_manifest()?;
        Ok(run)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn write_manifest(&self) -> io::Result<()> {
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(self.dir.join("manifest.json"), text + "\n")
    }

    fn detail(&mut self, key: &str, value: Value) {
        self.manifest.details.insert(key.to_string(), value);
    }

    /// Writes a new artifact; existing files are never replaced.
    fn artifact(&mut self, name: &str, write: impl FnOnce(&mut dyn Write) -> Result<(), CliError>) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let file = fs::OpenOptions::new().write(true).create_new(true).open(&path)?;
        let mut out = BufWriter::new(file);
        write(&mut out)?;
        out.flush()?;
        self.manifest.artifact_list.push(name.to_string());
        self.write_manifest()?;
        Ok(())
    }

    fn text_artifact(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        self.artifact(name, |w| Ok(w.write_all(text.as_bytes())?))
    }

    fn finish(mut self, outcome: &Result<(), CliError>) -> io::Result<()> {
        match outcome {
            Ok(()) => self.manifest.status = "complete",
            Err(e) => {
                self.manifest.status = "partial";
                let record = json!({ "error": e, "partial": true, "run_dir": self.dir });
                fs::write(self.dir.join("PARTIAL"), format!("{record}\n"))?;
            }
        }
        self.write_manifest()
    }
}

fn file_tag(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn select_targets(lex: &Lexicon, nouns: &[String], strict: bool) -> Result<Vec<Target>, CliError> {
    let pool = lex.class(WordClass::Noun);
    if nouns.is_empty() {
        return Ok(pool.iter().cloned().map(Target::noun).collect());
    }
    let mut out = Vec::new();
    for n in nouns {
        match pool.iter().find(|e| &e.lemma == n) {
            Some(e) => out.push(Target::noun(e.clone())),
            None if strict => return Err(CliError::config(format!("noun `{n}` is not in the lexicon"))),
            None => log::warn!("noun `{n}` was filtered out for this backend"),
        }
    }
    Ok(out)
}

fn sampling(config: &RunConfig) -> SamplingOptions {
    SamplingOptions {
        samples_per_cell: config.samples_per_cell,
        require_distinct: false,
    }
}

fn scoring_options(config: &RunConfig) -> ScoringOptions {
    ScoringOptions {
        mode: None,
        batch_size: config.scoring.batch_size.max(1),
        retries: config.scoring.retries,
    }
}

fn class_sizes(lex: &Lexicon) -> Value {
    lex.class_sizes()
        .into_iter()
        .map(|(c, n)| (c.name().to_string(), json!(n)))
        .collect::<serde_json::Map<_, _>>()
        .into()
}

fn generate(run: &mut Run, config: &RunConfig) -> Result<(), CliError> {
    let lex = config.load_lexicon()?;
    let templates = config.evaluation_templates()?;
    let targets = select_targets(&lex, &config.nouns, true)?;
    let workload = sample_workload(&lex, &templates, &targets, sampling(config), config.seed)?;
    run.detail("lexicon_sizes", class_sizes(&lex));
    run.artifact("workload.tsv", |w| Ok(write_workload(&workload, w)?))
}

struct Scored {
    matrices: Vec<ScoreMatrix>,
    lexicons: Vec<Lexicon>,
}

fn score_all(run: &mut Run, config: &RunConfig, templates: &[TaskTemplate], lex: &Lexicon) -> Result<Scored, CliError> {
    let mut matrices = Vec::new();
    let mut lexicons = Vec::new();
    let mut failures = Vec::new();
    let mut sizes = serde_json::Map::new();
    for def in &config.backends {
        let backend = open_backend(def, lex, config.remote_options())?;
        let filtered = filter_for_backend(lex, backend.as_ref())?;
        let required: Vec<WordClass> = templates.iter().flat_map(|t| t.required_classes()).collect();
        filtered.ensure_classes(&required)?;
        sizes.insert(def.id.clone(), class_sizes(&filtered));
        let targets = select_targets(&filtered, &config.nouns, false)?;
        let workload = sample_workload(&filtered, templates, &targets, sampling(config), config.seed)?;
        let (matrix, failed) = score_workload(&workload, backend.as_ref(), &scoring_options(config));
        for (noun, task, e) in failed {
            log::error!("{}: cell {noun}/{task} failed: {e}", def.id);
            failures.push(json!({ "backend_id": def.id, "noun": noun, "task_id": task, "error": e.to_string() }));
        }
        matrices.push(matrix);
        lexicons.push(filtered);
    }
    run.detail("filtered_lexicon_sizes", sizes.into());
    run.artifact("scores.csv", |w| Ok(ScoreMatrix::write_many_csv(&matrices, w)?))?;
    if !failures.is_empty() {
        let n = failures.len();
        run.detail("failed_cells", failures.into());
        return Err(CliError::new(ErrorKind::Backend, format!("{n} cells failed to score; they are NA in scores.csv")));
    }
    Ok(Scored { matrices, lexicons })
}

fn read_scores(paths: &[PathBuf]) -> Result<Vec<ScoreMatrix>, CliError> {
    let mut out: Vec<ScoreMatrix> = Vec::new();
    for p in paths {
        let file = fs::File::open(p).map_err(|e| CliError::config(format!("cannot read {}: {e}", p.display())))?;
        for m in ScoreMatrix::read_csv(BufReader::new(file))? {
            if out.iter().any(|o| o.backend_id == m.backend_id) {
                return Err(CliError::config(format!("backend {} appears in more than one score file", m.backend_id)));
            }
            out.push(m);
        }
    }
    Ok(out)
}

fn suite_panels(matrices: &[ScoreMatrix], suite: &CorrelationSuite, cross: bool) -> Vec<Panel> {
    let lookup = |series: &str| -> Option<(usize, String)> {
        if cross {
            let (id, task) = series.split_once(':')?;
            Some((matrices.iter().position(|m| m.backend_id == id)?, task.to_string()))
        } else {
            Some((0, series.to_string()))
        }
    };
    suite
        .results
        .iter()
        .filter_map(|r| {
            let (ia, ta) = lookup(&r.series_a)?;
            let (ib, tb) = lookup(&r.series_b)?;
            let (ma, mb) = (&matrices[ia], &matrices[ib]);
            let points = ma
                .nouns
                .iter()
                .filter_map(|n| Some((ma.value(n, &ta, NumberSplit::All)?, mb.value(n, &tb, NumberSplit::All)?)))
                .collect();
            Some(Panel {
                title: format!("r = {:.2}", r.r),
                x_label: r.series_a.clone(),
                y_label: r.series_b.clone(),
                points,
            })
        })
        .collect()
}

struct Analysis {
    suites: Vec<(String, CorrelationSuite)>,
    pcas: Vec<(String, PcaResult)>,
    cross: Option<CorrelationSuite>,
}

fn analyze(run: &mut Run, config: &RunConfig, matrices: &[ScoreMatrix]) -> Result<Analysis, CliError> {
    let alpha = config.analysis.alpha;
    let mut out = Analysis {
        suites: Vec::new(),
        pcas: Vec::new(),
        cross: None,
    };
    let mut first_error = None;
    for m in matrices {
        let tag = file_tag(&m.backend_id);
        let suite = task_correlations(m, NumberSplit::All, alpha);
        run.artifact(&format!("correlations_{tag}.csv"), |w| Ok(suite.write_csv(w)?))?;
        let panels = suite_panels(std::slice::from_ref(m), &suite, false);
        let svg = scatter_grid(&format!("Task correlations: {}", m.backend_id), &panels, 9);
        run.text_artifact(&format!("pairplot_{tag}.svg"), &svg)?;
        run.detail(
            &format!("pca_rows_{tag}"),
            json!({ "complete_rows": m.complete_rows(NumberSplit::All).0.len(), "missing_cells": m.missing_cells() }),
        );
        out.suites.push((m.backend_id.clone(), suite));
        match pca_matrix(m, NumberSplit::All, config.analysis.standardize) {
            Ok(pca) => {
                run.artifact(&format!("pca_variance_{tag}.csv"), |w| Ok(pca.write_variance_csv(w)?))?;
                run.artifact(&format!("pca_loadings_{tag}.csv"), |w| Ok(pca.write_loadings_csv(w)?))?;
                out.pcas.push((m.backend_id.clone(), pca));
            }
            Err(e) => {
                let err = CliError::new(ErrorKind::Analysis, format!("PCA for {}: {e}", m.backend_id));
                log::error!("{}", err.message);
                first_error.get_or_insert(err);
            }
        }
    }
    if matrices.len() > 1 {
        let suite = cross_model_correlations(matrices, alpha);
        run.artifact("cross_model_correlations.csv", |w| Ok(suite.write_csv(w)?))?;
        let panels = suite_panels(matrices, &suite, true);
        run.text_artifact("cross_model.svg", &scatter_grid("Cross-model correlations", &panels, 10))?;
        out.cross = Some(suite);
    }
    match first_error {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

fn parse_corpora(config: &RunConfig, extra: &[String]) -> Result<Vec<CorpusDef>, CliError> {
    let mut corpora = config.corpora.clone();
    for spec in extra {
        let (id, path) = spec
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("corpus `{spec}` must be written id=path")))?;
        if !Path::new(path).exists() {
            return Err(CliError::config(format!("referenced path does not exist: {path}")));
        }
        corpora.push(CorpusDef {
            id: id.to_string(),
            path: path.into(),
        });
    }
    Ok(corpora)
}

fn frequency(
    run: &mut Run,
    lex: &Lexicon,
    matrices: &[ScoreMatrix],
    corpora: &[CorpusDef],
) -> Result<Vec<(String, String, Vec<RegressionResult>)>, CliError> {
    if corpora.is_empty() {
        return Err(CliError::config("no corpora configured for frequency analysis"));
    }
    let forms = noun_forms(lex);
    let mut out = Vec::new();
    for corpus in corpora {
        let table: FrequencyTable = count_path(&corpus.id, &corpus.path, &forms)?;
        let ctag = file_tag(&corpus.id);
        run.artifact(&format!("frequencies_{ctag}.csv"), |w| Ok(table.write_csv(w)?))?;
        for m in matrices {
            let regs = regress_frequency(m, lex, &table)?;
            let tag = file_tag(&m.backend_id);
            run.artifact(&format!("regression_{tag}_{ctag}.csv"), |w| Ok(write_regressions_csv(&regs, w)?))?;
            let panels: Vec<Panel> = regs
                .iter()
                .map(|r| {
                    let (x, y): (Vec<f64>, Vec<f64>) = m
                        .nouns
                        .iter()
                        .filter_map(|n| {
                            let entry = lex.find(WordClass::Noun, n)?;
                            let c = table.get(entry.form(r.number));
                            let v = m.value(n, &r.task_id, NumberSplit::Only(r.number))?;
                            (c > 0).then(|| ((c as f64).log10(), v))
                        })
                        .unzip();
                    Panel {
                        title: format!("{} ({}) R² = {:.3}", display_name(&r.task_id), r.number.short(), r.r_squared),
                        x_label: "log10 frequency".into(),
                        y_label: "z performance".into(),
                        points: x.into_iter().zip(z_scores(&y)).collect(),
                    }
                })
                .collect();
            let svg = scatter_grid(&format!("Frequency vs performance: {} / {}", m.backend_id, corpus.id), &panels, 4);
            run.text_artifact(&format!("frequency_{tag}_{ctag}.svg"), &svg)?;
            out.push((m.backend_id.clone(), corpus.id.clone(), regs));
        }
    }
    Ok(out)
}

struct FewShotArgs {
    specs: Vec<String>,
    tokens: Vec<String>,
    epochs: Option<u32>,
    samples: Option<usize>,
}

fn fewshot_specs(config: &RunConfig, args: &FewShotArgs, epochs: u32) -> Result<Vec<FineTuneSpec>, CliError> {
    let fs = &config.fewshot;
    let names = if args.specs.is_empty() { &fs.data_types } else { &args.specs };
    let data_types: Vec<DataType> = if names.is_empty() {
        DataType::all().collect()
    } else {
        names.iter().map(|n| n.parse()).collect::<Result<_, _>>()?
    };
    let singular = NovelToken {
        surface: fs.singular_token.clone(),
        number: Number::Singular,
    };
    let plural = NovelToken {
        surface: fs.plural_token.clone(),
        number: Number::Plural,
    };
    let token_names = if args.tokens.is_empty() { &fs.tokens } else { &args.tokens };
    let explicit = !token_names.is_empty();
    let tokens: Vec<NovelToken> = if explicit {
        token_names
            .iter()
            .map(|t| {
                if *t == singular.surface {
                    Ok(singular.clone())
                } else if *t == plural.surface {
                    Ok(plural.clone())
                } else {
                    Err(CliError::config(format!(
                        "token `{t}` is neither the singular ({}) nor the plural ({}) novel token",
                        singular.surface, plural.surface
                    )))
                }
            })
            .collect::<Result<_, _>>()?
    } else {
        vec![singular, plural]
    };
    let mut specs = Vec::new();
    for dt in data_types {
        for token in &tokens {
            let spec = FineTuneSpec {
                data_type: dt,
                token: token.clone(),
                n_sentences: fs.n_sentences,
                epochs,
            };
            match spec.validate() {
                Ok(()) => specs.push(spec),
                // Only an explicit request for an invalid pairing is an error.
                Err(e) if explicit && !args.specs.is_empty() => return Err(e.into()),
                Err(_) => {}
            }
        }
    }
    if specs.is_empty() {
        return Err(CliError::config("no valid few-shot specs selected"));
    }
    Ok(specs)
}

fn fewshot(
    run: &mut Run,
    config: &RunConfig,
    templates: &[TaskTemplate],
    lex: &Lexicon,
    args: &FewShotArgs,
) -> Result<Vec<(String, Vec<FewShotResult>)>, CliError> {
    let mut all = Vec::new();
    let mut incomplete = Vec::new();
    for def in &config.backends {
        let mut backend = open_backend(def, lex, config.remote_options())?;
        let filtered = filter_for_backend(lex, backend.as_ref())?;
        let epochs = args.epochs.unwrap_or_else(|| fewshot_epochs(def, backend.as_ref()));
        let specs = fewshot_specs(config, args, epochs)?;
        let options = FewShotOptions {
            samples_per_task: args.samples.unwrap_or(config.fewshot.samples_per_task),
            seed: config.seed,
            scoring: scoring_options(config),
        };
        let mut results = Vec::new();
        for spec in &specs {
            let r = run_fewshot(spec, backend.as_mut(), &filtered, templates, &options)?;
            if let Some(f) = &r.failure {
                incomplete.push(json!({ "backend_id": def.id, "spec": spec.label(), "error": f }));
            }
            let stop = !r.is_complete();
            results.push(r);
            if stop {
                break;
            }
        }
        let tag = file_tag(&def.id);
        run.artifact(&format!("fewshot_{tag}.csv"), |w| Ok(write_results_csv(&results, w)?))?;
        run.text_artifact(&format!("fewshot_{tag}.svg"), &fewshot_grid(&def.id, templates, &results))?;
        run.detail(&format!("fewshot_epochs_{tag}"), json!(epochs));
        all.push((def.id.clone(), results));
    }
    if !incomplete.is_empty() {
        run.detail("incomplete_fewshot", incomplete.into());
        return Err(CliError::new(ErrorKind::Backend, "few-shot runs incomplete; partial results kept"));
    }
    Ok(all)
}

fn fewshot_grid(backend_id: &str, templates: &[TaskTemplate], results: &[FewShotResult]) -> String {
    let cols: Vec<String> = templates.iter().map(|t| display_name(&t.task_id)).collect();
    let mut rows = Vec::new();
    let mut values = Vec::new();
    let mut baselines_seen = Vec::new();
    for r in results {
        let token = &r.spec.token.surface;
        if !baselines_seen.contains(token) {
            baselines_seen.push(token.clone());
            rows.push(format!("baseline/{token}"));
            values.push(templates.iter().map(|t| r.score(Phase::Baseline, &t.task_id).map(|s| s.mean)).collect());
        }
        rows.push(r.spec.label());
        values.push(templates.iter().map(|t| r.score(Phase::Post, &t.task_id).map(|s| s.mean)).collect());
    }
    heat_grid(&format!("Few-shot results: {backend_id}"), &rows, &cols, &values)
}

fn report_text(
    config: &RunConfig,
    scored: &Scored,
    analysis: Option<&Analysis>,
    freq: &[(String, String, Vec<RegressionResult>)],
    fewshot: &[(String, Vec<FewShotResult>)],
    notes: &[String],
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# nounprobe report\n");
    let _ = writeln!(s, "- config hash: `{}`", config.hash());
    let _ = writeln!(s, "- seed: {}", config.seed);
    let _ = writeln!(s, "- samples per cell: {}\n", config.samples_per_cell);
    for (m, lex) in scored.matrices.iter().zip(&scored.lexicons) {
        let _ = writeln!(s, "## Backend `{}`\n", m.backend_id);
        let sizes: Vec<String> = lex.class_sizes().iter().map(|(c, n)| format!("{c} {n}")).collect();
        let _ = writeln!(s, "Word sets after filtering: {}.\n", sizes.join(", "));
        let _ = writeln!(s, "| task | mean | sd across nouns | nouns |");
        let _ = writeln!(s, "|---|---|---|---|");
        for task in &m.tasks {
            let v: Vec<f64> = m.nouns.iter().filter_map(|n| m.value(n, task, NumberSplit::All)).collect();
            let mean = v.iter().sum::<f64>() / v.len().max(1) as f64;
            let sd = if v.len() > 1 {
                (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
            } else {
                0.0
            };
            let _ = writeln!(s, "| {} | {mean:.3} | {sd:.3} | {} |", display_name(task), v.len());
        }
        s.push('\n');
        if let Some(a) = analysis {
            if let Some((_, suite)) = a.suites.iter().find(|(id, _)| id == &m.backend_id) {
                let (raw, bonf) = suite.significant_counts();
                let _ = writeln!(
                    s,
                    "Task pairs with significant positive correlation: {raw} of {} (raw), {bonf} after Bonferroni; {} undefined.\n",
                    suite.results.len(),
                    suite.undefined.len()
                );
            }
            if let Some((_, pca)) = a.pcas.iter().find(|(id, _)| id == &m.backend_id) {
                let cum: Vec<String> = pca.cumulative_explained.iter().take(3).map(|c| format!("{:.1}%", 100.0 * c)).collect();
                let top: Vec<String> = pca.top_contributors(0).into_iter().take(4).map(|(t, _)| display_name(&t)).collect();
                let _ = writeln!(
                    s,
                    "PCA over {} complete nouns: cumulative variance {}; top PC1 contributors: {}.\n",
                    pca.rows_used,
                    cum.join(", "),
                    top.join(", ")
                );
            }
        }
    }
    if let Some(cross) = analysis.and_then(|a| a.cross.as_ref()) {
        let (raw, bonf) = cross.significant_counts();
        let _ = writeln!(s, "## Cross-model correlations\n");
        let _ = writeln!(
            s,
            "{raw} of {} comparisons significantly positive; {bonf} after Bonferroni.\n",
            cross.results.len()
        );
    }
    if !freq.is_empty() {
        let _ = writeln!(s, "## Frequency\n");
        let _ = writeln!(s, "| backend | corpus | max R² | regressions | zero-frequency exclusions |");
        let _ = writeln!(s, "|---|---|---|---|---|");
        for (b, c, regs) in freq {
            let max = regs.iter().map(|r| r.r_squared).fold(0.0, f64::max);
            let excluded: usize = regs.iter().map(|r| r.excluded_zero_freq).sum();
            let _ = writeln!(s, "| {b} | {c} | {max:.4} | {} | {excluded} |", regs.len());
        }
        s.push('\n');
    }
    for (b, results) in fewshot {
        let _ = writeln!(s, "## Few-shot `{b}`\n");
        let _ = writeln!(s, "| spec | SV Simple baseline | SV Simple post | RA Simple baseline | RA Simple post |");
        let _ = writeln!(s, "|---|---|---|---|---|");
        let cell = |r: &FewShotResult, p, t| r.score(p, t).map(|x| format!("{:.3}", x.mean)).unwrap_or_else(|| "NA".into());
        for r in results {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} |",
                r.spec.label(),
                cell(r, Phase::Baseline, "sva_simple"),
                cell(r, Phase::Post, "sva_simple"),
                cell(r, Phase::Baseline, "ra_simple"),
                cell(r, Phase::Post, "ra_simple")
            );
        }
        s.push('\n');
    }
    if !notes.is_empty() {
        let _ = writeln!(s, "## Notes\n");
        for n in notes {
            let _ = writeln!(s, "- {n}");
        }
    }
    s
}

fn with_run(
    command: &str,
    common: &CommonArgs,
    body: impl FnOnce(&mut Run, &RunConfig) -> Result<(), CliError>,
) -> Result<PathBuf, (CliError, Option<PathBuf>)> {
    let config = resolve_config(common).map_err(|e| (e, None))?;
    let mut run = Run::create(command, &config, common.run_id.clone()).map_err(|e| (e, None))?;
    let outcome = body(&mut run, &config);
    let dir = run.dir().to_path_buf();
    if let Err(e) = run.finish(&outcome) {
        log::error!("cannot finalize manifest: {e}");
    }
    match outcome {
        Ok(()) => Ok(dir),
        Err(e) => Err((e, Some(dir))),
    }
}

fn serve_builtin(corpus: Option<PathBuf>, lexicon: Option<PathBuf>, id: String, order: usize, k: f64, listen: Option<String>) -> Result<(), CliError> {
    let config = NgramConfig {
        order,
        k,
        ..NgramConfig::default()
    };
    config.validate().map_err(CliError::config)?;
    let model = match corpus {
        Some(p) => NgramModel::train_file(p, config).map_err(CliError::config)?,
        None => {
            let lex = match lexicon {
                Some(p) => crate::lexicon::load_lexicon(p)?,
                None => crate::lexicon::builtin_lexicon(),
            };
            let text = demo_corpus(&lex, 20_000, 0);
            NgramModel::train(text.iter().map(String::as_str), config).map_err(CliError::config)?
        }
    };
    let mut backend = NgramBackend::new(id, model);
    match listen {
        None => {
            let stdin = io::stdin();
            serve(&mut backend, stdin.lock(), io::stdout().lock())?;
        }
        Some(addr) => {
            let listener = TcpListener::bind(&addr)?;
            eprintln!("listening on {}", listener.local_addr()?);
            for stream in listener.incoming() {
                let stream = stream?;
                let reader = BufReader::new(stream.try_clone()?);
                if let Err(e) = serve(&mut backend, reader, stream) {
                    log::warn!("connection closed: {e}");
                }
                backend.reset()?;
            }
        }
    }
    Ok(())
}

fn conformance(command: &[String], timeout_secs: u64) -> Result<(), CliError> {
    let options = RemoteOptions {
        timeout: std::time::Duration::from_secs(timeout_secs),
        ..RemoteOptions::default()
    };
    let mut backend = RemoteBackend::spawn(&command[0], &command[1..], options)?;
    println!("backend {} with {}", backend.backend_id(), backend.capabilities());
    let checks = run_conformance(&mut backend);
    let mut failed = 0;
    for c in &checks {
        match &c.outcome {
            Ok(()) => println!("PASS {}", c.name),
            Err(e) => {
                failed += 1;
                println!("FAIL {}: {e}", c.name);
            }
        }
    }
    if failed > 0 {
        return Err(CliError::new(ErrorKind::Backend, format!("{failed} of {} conformance checks failed", checks.len())));
    }
    Ok(())
}

/// Runs a parsed command, returning the run directory if one was created.
pub fn execute(command: Command) -> Result<Option<PathBuf>, (CliError, Option<PathBuf>)> {
    match command {
        Command::Generate(common) => with_run("generate", &common, generate).map(Some),
        Command::Score(common) => with_run("score", &common, |run, config| {
            let lex = config.load_lexicon()?;
            let templates = config.evaluation_templates()?;
            score_all(run, config, &templates, &lex).map(|_| ())
        })
        .map(Some),
        Command::Analyze { common, scores } => with_run("analyze", &common, |run, config| {
            let matrices = read_scores(&scores)?;
            analyze(run, config, &matrices).map(|_| ())
        })
        .map(Some),
        Command::Freq { common, scores, corpora } => with_run("freq", &common, |run, config| {
            let matrices = read_scores(&scores)?;
            let lex = config.load_lexicon()?;
            let corpora = parse_corpora(config, &corpora)?;
            frequency(run, &lex, &matrices, &corpora).map(|_| ())
        })
        .map(Some),
        Command::Fewshot {
            common,
            specs,
            tokens,
            epochs,
            fewshot_samples,
        } => with_run("fewshot", &common, |run, config| {
            let lex = config.load_lexicon()?;
            let templates = config.evaluation_templates()?;
            let args = FewShotArgs {
                specs,
                tokens,
                epochs,
                samples: fewshot_samples,
            };
            fewshot(run, config, &templates, &lex, &args).map(|_| ())
        })
        .map(Some),
        Command::Report {
            common,
            corpora,
            fewshot_samples,
            skip_fewshot,
        } => with_run("report", &common, |run, config| {
            let lex = config.load_lexicon()?;
            let templates = config.evaluation_templates()?;
            let corpora = parse_corpora(config, &corpora)?;
            let mut notes = Vec::new();
            let mut first_error: Option<CliError> = None;
            let mut note = |e: CliError, notes: &mut Vec<String>| {
                notes.push(e.message.clone());
                first_error.get_or_insert(e);
            };
            let scored = score_all(run, config, &templates, &lex)?;
            let analysis = match analyze(run, config, &scored.matrices) {
                Ok(a) => Some(a),
                Err(e) => {
                    note(e, &mut notes);
                    None
                }
            };
            let freq = if corpora.is_empty() {
                Vec::new()
            } else {
                frequency(run, &lex, &scored.matrices, &corpora).unwrap_or_else(|e| {
                    note(e, &mut notes);
                    Vec::new()
                })
            };
            let few = if skip_fewshot {
                Vec::new()
            } else {
                let args = FewShotArgs {
                    specs: Vec::new(),
                    tokens: Vec::new(),
                    epochs: None,
                    samples: fewshot_samples,
                };
                fewshot(run, config, &templates, &lex, &args).unwrap_or_else(|e| {
                    note(e, &mut notes);
                    Vec::new()
                })
            };
            let text = report_text(config, &scored, analysis.as_ref(), &freq, &few, &notes);
            run.text_artifact("report.md", &text)?;
            match first_error {
                Some(e) => Err(e),
                None => Ok(()),
            }
        })
        .map(Some),
        Command::Serve {
            corpus,
            lexicon,
            id,
            order,
            k,
            listen,
        } => serve_builtin(corpus, lexicon, id, order, k, listen).map(|_| None).map_err(|e| (e, None)),
        Command::Conformance { timeout_secs, command } => conformance(&command, timeout_secs).map(|_| None).map_err(|e| (e, None)),
        Command::SynthCorpus {
            out,
            sentences,
            seed,
            lexicon,
        } => {
            let go = || -> Result<(), CliError> {
                let lex = match lexicon {
                    Some(p) => crate::lexicon::load_lexicon(p)?,
                    None => crate::lexicon::builtin_lexicon(),
                };
                let file = fs::OpenOptions::new().write(true).create_new(true).open(&out)?;
                let mut w = BufWriter::new(file);
                write_lines(&demo_corpus(&lex, sentences, seed), &mut w)?;
                Ok(w.flush()?)
            };
            go().map(|_| None).map_err(|e| (e, None))
        }
    }
}

/// Entry point of the binary; returns the process exit code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(dir) => {
            if let Some(dir) = dir {
                println!("{}", dir.display());
            }
            EXIT_OK
        }
        Err((e, dir)) => {
            let record = json!({ "error": e, "partial": dir.is_some(), "run_dir": dir });
            eprintln!("{record}");
            e.kind.exit_code()
        }
    }
}
