//! One PASS/FAIL line per primary acceptance criterion.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::io::BufRead;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nounprobe::analysis::{bonferroni, pca, pearson, CorrelationResult};
use nounprobe::fewshot::{run_fewshot, DataType, FewShotOptions, FineTuneSpec, NovelToken, Phase};
use nounprobe::frequency::{count_path, ols, regress_frequency, z_scores, FrequencyTable};
use nounprobe::generation::{sample_cell, sample_workload, SamplingOptions, Target};
use nounprobe::lexicon::{LexicalEntry, Number, WordClass};
use nounprobe::ngram::{NgramBackend, NgramConfig, NgramModel};
use nounprobe::protocol::Backend;
use nounprobe::scoring::{score_workload, sentence_score_from_variant_scores, NounTaskScore, NumberSplit, ScoreMatrix, ScoringOptions};
use nounprobe::synth::{bias_corpus, demo_corpus};
use nounprobe::templates::{builtin_templates, evaluation_templates, Fill, TaskTemplate, TemplateKind};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn entry(lemma: &str, sg: &str, pl: &str, class: WordClass) -> LexicalEntry {
    LexicalEntry::new(lemma, sg, pl, class)
}

fn noun(sg: &str, pl: &str) -> LexicalEntry {
    entry(sg, sg, pl, WordClass::Noun)
}

fn template(id: &str) -> TaskTemplate {
    builtin_templates().into_iter().find(|t| t.task_id == id).unwrap()
}

fn fill(t: &TaskTemplate, entries: &[LexicalEntry]) -> Fill {
    Fill(t.fillable_slots().map(|(i, _)| i).zip(entries.iter().cloned()).collect())
}

fn render(id: &str, entries: &[LexicalEntry], pinned: Option<Number>) -> Vec<String> {
    let t = template(id);
    let vs = t.expand_variants_pinned(&fill(&t, entries), pinned).unwrap();
    vs.variants.into_iter().map(|v| v.text).collect()
}

fn template_fidelity() -> Outcome {
    let start = Instant::now();
    let all = builtin_templates();
    let eval = all.iter().filter(|t| t.kind == TemplateKind::Evaluation).count();
    let ft: Vec<&str> = all
        .iter()
        .filter(|t| t.kind == TemplateKind::FineTune)
        .map(|t| t.task_id.as_str())
        .collect();
    let mut failures = Vec::new();
    if eval != 10 || ft.len() != 13 {
        failures.push(format!("{eval} evaluation and {} fine-tuning templates", ft.len()));
    }

    let cat = noun("cat", "cats");
    let walk = entry("walk", "walks", "walk", WordClass::Verb);
    let jump = entry("jump", "jumps", "jump", WordClass::Verb);
    let boy = noun("boy", "boys");
    let defendant = noun("defendant", "defendants");
    let lawyer = entry("lawyer", "lawyer", "lawyers", WordClass::NonGenderedNoun);
    let incriminate = entry("incriminate", "incriminated", "", WordClass::PastTransVerb);
    let wug = noun("wug", "wug");
    let wuz = noun("wuz", "wuz");
    let walk_pt = entry("walk", "walks", "walk", WordClass::PresentTenseVerb);
    let happy = entry("happy", "happy", "", WordClass::Adj);
    let admire = entry("admire", "admired", "", WordClass::PastTransVerb);

    let expect = |failures: &mut Vec<String>, label: &str, got: Vec<String>, want: &[&str]| {
        let missing: Vec<&&str> = want.iter().filter(|w| !got.iter().any(|g| g == *w)).collect();
        if !missing.is_empty() {
            failures.push(format!("{label}: missing {missing:?}"));
        }
    };
    expect(&mut failures, "sva_simple", render("sva_simple", &[cat.clone(), walk.clone()], None), &["The cat walks."]);
    expect(
        &mut failures,
        "sva_pp",
        render("sva_pp", &[cat.clone(), boy, jump], None),
        &["The cat next to the boys jumps.", "The cat next to the boys jump."],
    );
    expect(
        &mut failures,
        "ra_sent_comp",
        render("ra_sent_comp", &[lawyer, defendant, incriminate], None),
        &[
            "The lawyers said the defendant incriminated himself.",
            "The lawyers said the defendant incriminated themselves.",
        ],
    );
    let horse = render("sva_simple", &[noun("horse", "horses"), walk], None);
    if horse != ["The horse walks.", "The horse walk.", "The horses walk.", "The horses walks."] {
        failures.push(format!("horse variants {horse:?}"));
    }
    let sg = Some(Number::Singular);
    let pl = Some(Number::Plural);
    expect(&mut failures, "ft_simple", render("ft_simple", &[wug.clone(), walk_pt.clone()], sg), &["The wug walks."]);
    expect(&mut failures, "ft_simple", render("ft_simple", &[wuz.clone(), walk_pt], pl), &["The wuz walk."]);
    expect(&mut failures, "ft_pred_adj", render("ft_pred_adj", &[wug.clone(), happy.clone()], sg), &["The wug is happy."]);
    expect(&mut failures, "ft_pred_adj", render("ft_pred_adj", &[wuz.clone(), happy], pl), &["The wuz are happy."]);
    expect(&mut failures, "ft_reflexive", render("ft_reflexive", &[wug.clone(), admire.clone()], sg), &["The wug admired himself."]);
    expect(&mut failures, "ft_reflexive", render("ft_reflexive", &[wuz.clone(), admire], pl), &["The wuz admired themselves."]);
    let semantic = [
        ("ft_all_alone", sg, "The wug worked all alone."),
        ("ft_unaccompanied", sg, "The wug came unaccompanied."),
        ("ft_separated_entire", sg, "The wug became separated from the entire group."),
        ("ft_personally", sg, "The wug personally thanked me."),
        ("ft_unison", pl, "The wuz nodded in unison."),
        ("ft_together", pl, "The wuz ate together."),
        ("ft_simultaneously", pl, "The wuz jumped simultaneously."),
        ("ft_outnumbered", pl, "The wuz outnumbered the cats."),
        ("ft_constituted", pl, "The wuz constituted a majority of the team."),
        ("ft_gathered", pl, "The wuz gathered quietly."),
    ];
    for (id, number, want) in semantic {
        let token = if number == sg { wug.clone() } else { wuz.clone() };
        let got = render(id, &[token], number);
        if got != [want] {
            failures.push(format!("{id}: {got:?}"));
        }
    }
    let elapsed = start.elapsed();
    if elapsed >= Duration::from_secs(1) {
        failures.push(format!("took {elapsed:?}"));
    }
    if failures.is_empty() {
        outcome(true, format!("23 templates parse, 27 example sentences byte-identical, {elapsed:?}"))
    } else {
        outcome(false, failures.join("; "))
    }
}

fn minimal_pair_algebra() -> Outcome {
    let lex = common::lexicon();
    let options = SamplingOptions { samples_per_cell: 20, require_distinct: false };
    let (mut checked, mut bad) = (0usize, Vec::new());
    let wug = Target::novel("wug", Number::Singular);
    for (ti, t) in builtin_templates().iter().enumerate() {
        let target = if t.kind == TemplateKind::FineTune {
            wug.clone()
        } else {
            Target::noun(lex.class(WordClass::Noun)[ti % 30].clone())
        };
        let sets = sample_cell(&lex, t, &target, options, 1000 + ti as u64).unwrap();
        for vs in sets {
            checked += 1;
            let expected = if target.pinned.is_some() { 1 << (t.dims.len() - 1) } else { 1 << t.dims.len() };
            if vs.variants.len() != expected {
                bad.push(format!("{}: {} variants", t.task_id, vs.variants.len()));
            }
            for &(g, u) in &vs.pairs {
                let a: Vec<&str> = vs.variants[g].text.split(' ').collect();
                let b: Vec<&str> = vs.variants[u].text.split(' ').collect();
                let diff = a.iter().zip(&b).filter(|(x, y)| x != y).count();
                if a.len() != b.len() || diff != 1 {
                    bad.push(format!("{} / {}", vs.variants[g].text, vs.variants[u].text));
                }
            }
        }
    }
    outcome(bad.is_empty(), format!("{checked} fills over 23 templates, {} violations {:?}", bad.len(), bad.first()))
}

fn scoring_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..6);
        let scores: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-80.0..0.0)).collect();
        let pairs: Vec<(usize, usize)> = (0..n).map(|i| (2 * i, 2 * i + 1)).collect();
        let swapped: Vec<(usize, usize)> = pairs.iter().map(|&(g, u)| (u, g)).collect();
        let c = rng.random_range(-100.0..100.0);
        let shifted: Vec<f64> = scores.iter().map(|s| s + c).collect();
        let base = sentence_score_from_variant_scores(&pairs, &scores);
        worst = worst
            .max((base - sentence_score_from_variant_scores(&pairs, &shifted)).abs())
            .max((base + sentence_score_from_variant_scores(&swapped, &scores)).abs());
    }
    let exact = sentence_score_from_variant_scores(&[(0, 1), (2, 3)], &[-1.0, -3.0, -2.0, -4.0]);
    outcome(
        worst <= 1e-12 && exact == 2.0,
        format!("max deviation {worst:.2e} over 1000 tuples; (-1,-3,-2,-4) -> {exact}"),
    )
}

fn ngram_oracle() -> Outcome {
    let lex = common::lexicon();
    let corpus = demo_corpus(&lex, 50, 11);
    let refs: Vec<&str> = corpus.iter().map(String::as_str).collect();
    let config = NgramConfig::default();
    let model = NgramModel::train(refs.iter().copied(), config.clone()).unwrap();
    let backend = NgramBackend::new("toy", model.clone());
    let oracle = common::OracleNgram::new(&refs, config.order, config.k);
    let mut probes = corpus.clone();
    probes.extend(demo_corpus(&lex, 50, 12));
    let got = backend.score_strings(&probes).unwrap();
    let worst = probes
        .iter()
        .zip(&got)
        .map(|(s, g)| (g - oracle.score(s)).abs())
        .fold(0.0, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let v = model.vocab_size() as u32;
    let mut norm_worst: f64 = 0.0;
    for _ in 0..100 {
        let len = rng.random_range(0..config.order);
        let ctx: Vec<u32> = (0..len).map(|_| rng.random_range(0..v)).collect();
        let total: f64 = (0..v).map(|w| model.prob(&ctx, w)).sum();
        norm_worst = norm_worst.max((total - 1.0).abs());
    }
    outcome(
        worst <= 1e-9 && norm_worst <= 1e-9,
        format!("max |model - oracle| {worst:.2e} on {} sentences; max |sum - 1| {norm_worst:.2e} on 100 contexts", probes.len()),
    )
}

fn constructed_bias() -> Outcome {
    let start = Instant::now();
    let lex = common::lexicon();
    let nouns_all = lex.class(WordClass::Noun);
    let (biased, controls) = (&nouns_all[..12], &nouns_all[12..18]);
    let verbs = lex.class(WordClass::Verb);
    let corpus = bias_corpus(biased, controls, verbs, 2);
    let model = NgramModel::train(corpus.iter().map(String::as_str), NgramConfig::default()).unwrap();
    let backend = NgramBackend::new("bias", model);
    let targets: Vec<Target> = biased.iter().chain(controls).cloned().map(Target::noun).collect();
    let options = SamplingOptions { samples_per_cell: 100, require_distinct: false };
    let workload = sample_workload(&lex, &[template("sva_simple")], &targets, options, 5).unwrap();
    let (matrix, failed) = score_workload(&workload, &backend, &ScoringOptions::default());
    let score = |e: &LexicalEntry| matrix.value(&e.lemma, "sva_simple", NumberSplit::All).unwrap_or(f64::NAN);
    let wrong_biased: Vec<&str> = biased.iter().filter(|e| !(score(e) > 0.0)).map(|e| e.lemma.as_str()).collect();
    let wrong_controls: Vec<&str> = controls.iter().filter(|e| !(score(e) < 0.0)).map(|e| e.lemma.as_str()).collect();
    let min_b = biased.iter().map(score).fold(f64::INFINITY, f64::min);
    let max_c = controls.iter().map(score).fold(f64::NEG_INFINITY, f64::max);
    let elapsed = start.elapsed();
    outcome(
        failed.is_empty() && wrong_biased.is_empty() && wrong_controls.is_empty() && elapsed < Duration::from_secs(30),
        format!(
            "min biased {min_b:.3} > 0 ({} wrong), max control {max_c:.3} < 0 ({} wrong), {elapsed:?}",
            wrong_biased.len(),
            wrong_controls.len()
        ),
    )
}

/// Cyclic Jacobi eigenvalue iteration for a small symmetric matrix.
fn jacobi_eigen(mut a: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut v = DMatrix::identity(n, n);
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| a[(i, j)].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let mut rot = DMatrix::identity(n, n);
                rot[(p, p)] = c;
                rot[(q, q)] = c;
                rot[(p, q)] = s;
                rot[(q, p)] = -s;
                a = rot.transpose() * &a * &rot;
                v *= rot;
            }
        }
    }
    ((0..n).map(|i| a[(i, i)]).collect(), v)
}

fn analysis_oracles() -> Outcome {
    let r = pearson(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 1.0, 4.0, 3.0, 6.0]).unwrap().r;
    let pearson_ok = (r - 0.8704).abs() <= 1e-4;

    let tasks: Vec<String> = (0..4).map(|i| format!("t{i}")).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (mut eig_worst, mut vec_worst, mut sum_worst): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for trial in 0..50 {
        let rows: Vec<Option<Vec<f64>>> = (0..6).map(|_| Some((0..4).map(|_| rng.random_range(-3.0..3.0)).collect())).collect();
        let standardize = trial % 2 == 0;
        let p = pca(&rows, &tasks, standardize).unwrap();
        // covariance rebuilt independently from the raw rows
        let data = DMatrix::from_fn(6, 4, |i, j| rows[i].as_ref().unwrap()[j]);
        let mut centered = data.clone();
        for j in 0..4 {
            let col = data.column(j);
            let m = col.mean();
            let sd = (col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 5.0).sqrt();
            for i in 0..6 {
                centered[(i, j)] = (data[(i, j)] - m) / if standardize { sd } else { 1.0 };
            }
        }
        let cov = centered.transpose() * &centered / 5.0;
        let (mut vals, vecs) = jacobi_eigen(cov.clone());
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
        vals = order.iter().map(|&i| vals[i].max(0.0)).collect();
        for (k, &i) in order.iter().enumerate() {
            eig_worst = eig_worst.max((vals[k] - p.eigenvalues[k]).abs());
            let ours = p.loadings.column(k);
            let theirs: DVector<f64> = vecs.column(i).into();
            vec_worst = vec_worst.max(1.0 - ours.dot(&theirs).abs());
        }
        if standardize {
            sum_worst = sum_worst.max((p.eigenvalues.iter().sum::<f64>() - 4.0).abs());
        }
    }
    let pca_ok = eig_worst <= 1e-7 && vec_worst <= 1e-7 && sum_worst <= 1e-9;

    let base = CorrelationResult {
        series_a: "a".into(),
        series_b: "b".into(),
        r: 0.5,
        n: 20,
        p: 0.5,
        significant_raw: false,
        significant_bonferroni: false,
    };
    let mut results = vec![base; 30];
    results[0].p = 0.01;
    let corrected = bonferroni(&results, 0.05).unwrap();
    let bonf_ok = corrected[0].significant_raw && !corrected[0].significant_bonferroni;

    outcome(
        pearson_ok && pca_ok && bonf_ok,
        format!(
            "pearson r = {r:.6} (target 0.8704 ± 1e-4: {}); PCA vs Jacobi: eigenvalues {eig_worst:.1e}, vectors {vec_worst:.1e}, standardized sum {sum_worst:.1e}; bonferroni m=30 p=0.01 raw-only: {bonf_ok}",
            if pearson_ok { "ok" } else { "MISMATCH" }
        ),
    )
}

fn naive_tokens(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    for raw in line.split_whitespace() {
        let trimmed = raw.trim_end_matches(|c: char| c.is_ascii_punctuation());
        if !trimmed.is_empty() {
            out.push(trimmed.to_lowercase());
        }
    }
    out
}

fn frequency_checks() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let lex = common::lexicon();
    let path = dir.path().join("big.txt");
    let mut text = String::new();
    let mut seed = 0;
    while text.len() < 10 * 1024 * 1024 {
        for s in demo_corpus(&lex, 20_000, seed) {
            text.push_str(&s);
            text.push('\n');
        }
        seed += 1;
    }
    fs::write(&path, &text).unwrap();
    let forms: Vec<String> = nounprobe::frequency::noun_forms(&lex);
    let streamed = count_path("big", &path, &forms).unwrap();
    let mut naive: BTreeMap<String, u64> = forms.iter().map(|f| (f.clone(), 0)).collect();
    for line in std::io::BufReader::new(fs::File::open(&path).unwrap()).lines() {
        for t in naive_tokens(&line.unwrap()) {
            if let Some(c) = naive.get_mut(&t) {
                *c += 1;
            }
        }
    }
    let counts_ok = streamed.counts == naive;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut ols_worst: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(3..40);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.7 * v - 1.0 + rng.random_range(-2.0..2.0)).collect();
        let design = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { x[i] });
        let beta = (design.transpose() * &design)
            .lu()
            .solve(&(design.transpose() * DVector::from_vec(y.clone())))
            .unwrap();
        let (slope, intercept, _) = ols(&x, &y);
        ols_worst = ols_worst.max((slope - beta[1]).abs()).max((intercept - beta[0]).abs());
    }

    let nouns: Vec<LexicalEntry> = lex.class(WordClass::Noun)[..20].to_vec();
    let mut matrix = ScoreMatrix::new("m", nouns.iter().map(|e| e.lemma.clone()).collect(), vec!["t".into()]);
    let mut table = FrequencyTable::new("c", &forms).unwrap();
    for e in &nouns {
        for (number, split) in [(Number::Singular, NumberSplit::Only(Number::Singular)), (Number::Plural, NumberSplit::Only(Number::Plural))] {
            matrix.set(NounTaskScore {
                noun: e.lemma.clone(),
                task_id: "t".into(),
                backend_id: "m".into(),
                split,
                mean: rng.random_range(-2.0..3.0),
                n: 10,
                ci95_halfwidth: 0.1,
            });
            table.counts.insert(e.form(number).to_string(), rng.random_range(1..100_000));
        }
    }
    let regs = regress_frequency(&matrix, &lex, &table).unwrap();
    let mut r2_worst: f64 = 0.0;
    for reg in &regs {
        let split = NumberSplit::Only(reg.number);
        let x: Vec<f64> = nouns.iter().map(|e| (table.get(e.form(reg.number)) as f64).log10()).collect();
        let y = z_scores(&nouns.iter().map(|e| matrix.value(&e.lemma, "t", split).unwrap()).collect::<Vec<_>>());
        let r = pearson(&x, &y).unwrap().r;
        r2_worst = r2_worst.max((reg.r_squared - r * r).abs());
    }
    outcome(
        counts_ok && ols_worst <= 1e-9 && r2_worst <= 1e-9 && regs.len() == 2,
        format!(
            "{:.1} MB streamed == naive: {counts_ok}; OLS vs normal equations {ols_worst:.1e}; R² vs r² {r2_worst:.1e}",
            text.len() as f64 / 1048576.0
        ),
    )
}

fn fewshot_checks() -> Outcome {
    let start = Instant::now();
    let lex = common::lexicon();
    let corpus = demo_corpus(&lex, 20_000, 0);
    let model = NgramModel::train(corpus.iter().map(String::as_str), NgramConfig::default()).unwrap();
    let mut backend = NgramBackend::new("ngram", model);
    let tasks = evaluation_templates();
    let options = FewShotOptions { samples_per_task: 100, seed: 0, scoring: ScoringOptions::default() };
    let wug = NovelToken::wug();
    let run = |backend: &mut NgramBackend, dt, epochs| {
        let spec = FineTuneSpec::new(dt, wug.clone(), epochs).unwrap();
        run_fewshot(&spec, backend, &lex, &tasks, &options).unwrap()
    };
    let simple = run(&mut backend, DataType::Simple, 5);
    let reflexive = run(&mut backend, DataType::Reflexive, 5);
    let zero = run(&mut backend, DataType::Simple, 0);
    let mean = |r: &nounprobe::fewshot::FewShotResult, p, t| r.score(p, t).unwrap().mean;
    let sva_base = mean(&simple, Phase::Baseline, "sva_simple");
    let sva_post = mean(&simple, Phase::Post, "sva_simple");
    let ra_simple = mean(&simple, Phase::Post, "ra_simple");
    let ra_reflexive = mean(&reflexive, Phase::Post, "ra_simple");
    let zero_ok = zero.baseline == zero.post;
    backend.reset().unwrap();
    let again = run(&mut backend, DataType::Simple, 5);
    let reset_ok = again.baseline == simple.baseline && again.post == simple.post && reflexive.baseline == simple.baseline;
    let elapsed = start.elapsed();
    outcome(
        sva_post > sva_base && ra_reflexive > ra_simple && zero_ok && reset_ok && elapsed < Duration::from_secs(60),
        format!(
            "SVA Simple {sva_base:.3} -> {sva_post:.3} after (simple, wug); RA Simple reflexive {ra_reflexive:.3} vs simple {ra_simple:.3}; epochs=0 unchanged: {zero_ok}; reset restores: {reset_ok}; {elapsed:?}"
        ),
    )
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().display().to_string();
    let mut csvs = Vec::new();
    for id in ["one", "two"] {
        let score = common::run(&["score", "--out", &out, "--run-id", &format!("{id}-s"), "--seed", "42", "--samples", "100"]);
        if !score.status.success() {
            return outcome(false, format!("score failed: {}", common::stderr(&score)));
        }
        let scores = tmp.path().join(format!("{id}-s")).join("scores.csv");
        let analyze = common::run(&[
            "analyze", "--out", &out, "--run-id", &format!("{id}-a"), "--seed", "42", "--raw-covariance",
            "--scores", scores.to_str().unwrap(),
        ]);
        if !analyze.status.success() {
            return outcome(false, format!("analyze failed: {}", common::stderr(&analyze)));
        }
        let mut files = vec![("scores.csv".to_string(), fs::read(&scores).unwrap())];
        let adir = tmp.path().join(format!("{id}-a"));
        let mut names: Vec<String> = fs::read_dir(&adir)
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .filter(|n| n.ends_with(".csv"))
            .collect();
        names.sort();
        for n in names {
            files.push((n.clone(), fs::read(adir.join(&n)).unwrap()));
        }
        csvs.push(files);
    }
    let same = csvs[0] == csvs[1];
    let names: Vec<&str> = csvs[0].iter().map(|(n, _)| n.as_str()).collect();
    outcome(same && names.len() == 4, format!("{} CSVs byte-identical across runs: {same} ({names:?})", names.len()))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("template fidelity", template_fidelity),
        ("minimal-pair algebra", minimal_pair_algebra),
        ("scoring identities", scoring_identities),
        ("n-gram oracle equivalence", ngram_oracle),
        ("constructed-bias end-to-end", constructed_bias),
        ("analysis oracles", analysis_oracles),
        ("frequency", frequency_checks),
        ("few-shot directional checks", fewshot_checks),
        ("determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let o = check();
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
