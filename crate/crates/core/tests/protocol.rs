mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::os::unix::net::UnixStream;
use std::process::{Command, Stdio};
use std::thread;
use std::time::Duration;

use nounprobe::lexicon::{LexicalEntry, WordClass};
use nounprobe::ngram::{NgramBackend, NgramConfig, NgramModel};
use nounprobe::protocol::conformance::run_conformance;
use nounprobe::protocol::wire::{Reply, ReplyEnvelope, Request, RequestEnvelope};
use nounprobe::protocol::{
    Backend, BackendError, Capabilities, Capability, MaskedQuery, RemoteBackend, RemoteOptions,
    PROTOCOL_VERSION,
};
use nounprobe::scoring::{pair_differences, ScoringOptions};
use nounprobe::templates::{parse_template, Fill};
use serde_json::Value;

fn quick() -> RemoteOptions {
    RemoteOptions {
        timeout: Duration::from_secs(20),
        window: 4,
    }
}

fn toy_file(dir: &std::path::Path) -> std::path::PathBuf {
    let path = dir.join("toy.txt");
    std::fs::write(&path, common::TOY_CORPUS.join("\n")).unwrap();
    path
}

fn spawn_serve(corpus: &std::path::Path) -> RemoteBackend {
    let args = vec!["serve".to_string(), "--corpus".into(), corpus.display().to_string()];
    RemoteBackend::spawn(common::bin(), &args, quick()).unwrap()
}

#[test]
fn subprocess_scores_match_in_process_model() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = toy_file(dir.path());
    let remote = spawn_serve(&corpus);
    let local = NgramModel::train_file(&corpus, NgramConfig::default()).unwrap();
    assert_eq!(remote.backend_id(), "ngram");
    assert_eq!(remote.capabilities(), &Capabilities::all());
    let probes: Vec<String> = [
        "The cat walks.",
        "The cats walks.",
        "The wug gathered quietly.",
        "",
        "The lawyers said the defendant incriminated themselves.",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let got = remote.score_strings(&probes).unwrap();
    for (s, g) in probes.iter().zip(&got) {
        assert_eq!(*g, local.score(s), "{s}");
    }
    assert_eq!(got[3], 0.0);
}

#[test]
fn builtin_backend_passes_conformance_over_stdio() {
    let dir = tempfile::tempdir().unwrap();
    let mut remote = spawn_serve(&toy_file(dir.path()));
    let checks = run_conformance(&mut remote);
    assert!(checks.len() >= 7);
    for c in checks {
        assert!(c.passed(), "{}: {:?}", c.name, c.outcome);
    }
}

#[test]
fn builtin_backend_passes_conformance_in_process() {
    let model = NgramModel::train(common::TOY_CORPUS, NgramConfig::default()).unwrap();
    let mut backend = NgramBackend::new("local", model);
    assert!(run_conformance(&mut backend).iter().all(|c| c.passed()));
}

#[test]
fn fine_tune_reset_round_trip_over_stdio() {
    let dir = tempfile::tempdir().unwrap();
    let mut remote = spawn_serve(&toy_file(dir.path()));
    let probe = vec!["The wug walks.".to_string(), "The wug walk.".to_string()];
    let before = remote.score_strings(&probe).unwrap();
    remote.add_token("wug").unwrap();
    remote.fine_tune(&["The wug walks.".to_string()], 3).unwrap();
    let tuned = remote.score_strings(&probe).unwrap();
    assert!(tuned[0] - tuned[1] > before[0] - before[1]);
    remote.reset().unwrap();
    assert_eq!(remote.score_strings(&probe).unwrap(), before);
}

#[test]
fn raw_ndjson_exchange() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = toy_file(dir.path());
    let mut child = Command::new(common::bin())
        .args(["serve", "--corpus", corpus.to_str().unwrap(), "--id", "toy"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stdin = child.stdin.take().unwrap();
    let lines = [
        r#"{"id":1,"op":"hello","protocol_version":1}"#,
        r#"{"id":2,"op":"score_strings","strings":["The cat walks.",""]}"#,
        r#"{"id":3,"op":"score_masked","left":"The cat ","right":".","candidates":["walks","walk"]}"#,
        r#"{"id":4,"op":"tokenize","words":["cat","zyzzyva"]}"#,
        r#"{"id":5,"op":"score_masked","left":"The cat ","right":".","candidates":["two words"]}"#,
        r#"{"id":6,"op":"hello","protocol_version":99}"#,
        r#"{"id":7,"op":"fly"}"#,
        "not json",
        r#"{"id":8,"op":"shutdown"}"#,
    ];
    for l in lines {
        writeln!(stdin, "{l}").unwrap();
    }
    drop(stdin);
    let mut out = String::new();
    child.stdout.take().unwrap().read_to_string(&mut out).unwrap();
    assert!(child.wait().unwrap().success());
    let replies: Vec<Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(replies.len(), lines.len());

    assert_eq!(replies[0]["id"], 1);
    assert_eq!(replies[0]["ok"], true);
    assert_eq!(replies[0]["protocol_version"], PROTOCOL_VERSION);
    assert_eq!(replies[0]["backend_id"], "toy");
    let caps: Vec<&str> = replies[0]["capabilities"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    for c in Capability::ALL {
        assert!(caps.contains(&c.name()), "{c}");
    }

    assert_eq!(replies[1]["scores"].as_array().unwrap().len(), 2);
    assert_eq!(replies[1]["scores"][1], 0.0);
    let masked = replies[2]["scores"].as_array().unwrap();
    assert!(masked[0].as_f64().unwrap() > masked[1].as_f64().unwrap());
    assert_eq!(replies[3]["tokens"][0]["unknown"], false);
    assert_eq!(replies[3]["tokens"][1]["unknown"], true);
    for (i, r) in replies.iter().enumerate().skip(4).take(4) {
        assert_eq!(r["ok"], false, "reply {i}");
        assert!(r["error"].as_str().is_some_and(|e| !e.is_empty()));
    }
    assert_eq!(replies[7]["id"], 0);
    assert_eq!(replies[8]["ok"], true);
}

#[test]
fn tcp_listener_serves_connections_in_turn() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = toy_file(dir.path());
    let mut child = Command::new(common::bin())
        .args(["serve", "--corpus", corpus.to_str().unwrap(), "--listen", "127.0.0.1:0"])
        .stderr(Stdio::piped())
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    let mut err = BufReader::new(child.stderr.take().unwrap());
    let mut line = String::new();
    err.read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").unwrap().to_string();
    let mut baselines = Vec::new();
    for round in 0..2 {
        let mut remote = RemoteBackend::connect(&addr, quick()).unwrap();
        let before = remote.score_strings(&["The wug walks.".to_string()]).unwrap();
        baselines.push(before.clone());
        remote.fine_tune(&["The wug walks.".to_string()], 5).unwrap();
        assert!(remote.score_strings(&["The wug walks.".to_string()]).unwrap()[0] > before[0]);
        if round == 1 {
            let checks = run_conformance(&mut remote);
            assert!(checks.iter().all(|c| c.passed()), "{checks:?}");
        }
        drop(remote);
        thread::sleep(Duration::from_millis(50));
    }
    // fine-tuning on the first connection does not leak into the second
    assert_eq!(baselines[0], baselines[1]);
    child.kill().unwrap();
    child.wait().unwrap();
}

/// Masked-only fake that answers pipelined requests two at a time in
/// reverse order.
fn fake_masked_server(stream: UnixStream, caps: Capabilities, version: u32) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut writer = stream.try_clone().unwrap();
    let read = |reader: &mut BufReader<UnixStream>, wait: Option<Duration>| -> Option<RequestEnvelope> {
        stream.set_read_timeout(wait).unwrap();
        let mut line = String::new();
        match reader.read_line(&mut line) {
            Ok(0) | Err(_) => None,
            Ok(_) => Some(serde_json::from_str(&line).unwrap()),
        }
    };
    let mut send = |env: ReplyEnvelope| {
        serde_json::to_writer(&mut writer, &env).unwrap();
        writer.write_all(b"\n").unwrap();
    };
    let answer = |env: RequestEnvelope| -> ReplyEnvelope {
        match env.request {
            Request::Hello { .. } => ReplyEnvelope::success(
                env.id,
                Reply::Hello {
                    protocol_version: version,
                    backend_id: "fake-masked".into(),
                    capabilities: caps.clone(),
                },
            ),
            Request::ScoreMasked { left, candidates, .. } => {
                if left.contains("boom") {
                    return ReplyEnvelope::failure(env.id, "model exploded");
                }
                let scores = candidates
                    .iter()
                    .map(|c| -(c.len() as f64) - 0.01 * left.len() as f64)
                    .collect();
                ReplyEnvelope::success(env.id, Reply::Scores(scores))
            }
            Request::Reset | Request::Shutdown => ReplyEnvelope::success(env.id, Reply::Empty),
            other => ReplyEnvelope::failure(env.id, format!("unsupported op `{}`", other.op())),
        }
    };
    let Some(hello) = read(&mut reader, None) else { return };
    send(answer(hello));
    while let Some(first) = read(&mut reader, None) {
        if first.request == Request::Shutdown {
            send(answer(first));
            return;
        }
        match read(&mut reader, Some(Duration::from_millis(100))) {
            Some(second) => {
                send(answer(second));
                send(answer(first));
            }
            None => send(answer(first)),
        }
    }
}

fn fake(caps: Capabilities, version: u32) -> Result<RemoteBackend, BackendError> {
    let (client, server) = UnixStream::pair().unwrap();
    thread::spawn(move || fake_masked_server(server, caps, version));
    RemoteBackend::over_stream(client.try_clone().unwrap(), client, quick())
}

fn masked_caps() -> Capabilities {
    [Capability::Masked, Capability::Reset].into_iter().collect()
}

#[test]
fn out_of_order_replies_are_matched_by_id() {
    let remote = fake(masked_caps(), PROTOCOL_VERSION).unwrap();
    let queries: Vec<MaskedQuery> = (0..10)
        .map(|i| MaskedQuery {
            left: "x".repeat(i),
            right: ".".into(),
            candidates: vec!["a".repeat(i + 1), "b".into()],
        })
        .collect();
    let got = remote.score_masked_many(&queries).unwrap();
    for (i, s) in got.iter().enumerate() {
        let expected = vec![-((i + 1) as f64) - 0.01 * i as f64, -1.0 - 0.01 * i as f64];
        assert_eq!(s, &expected, "query {i}");
    }
}

#[test]
fn masked_only_backend_routes_scoring_through_agreement_word() {
    let remote = fake(masked_caps(), PROTOCOL_VERSION).unwrap();
    assert!(matches!(
        remote.score_strings(&["The cat walks.".to_string()]),
        Err(BackendError::Unsupported(_))
    ));
    let t = parse_template("sva_simple", "The <TargetNoun> <Verb:agree>.").unwrap();
    let fill = Fill(
        [
            (1, LexicalEntry::new("cat", "cat", "cats", WordClass::Noun)),
            (3, LexicalEntry::new("walk", "walks", "walk", WordClass::Verb)),
        ]
        .into_iter()
        .collect(),
    );
    let fill = Fill(t.fillable_slots().map(|(i, _)| i).zip(fill.0.into_values()).collect());
    let vs = t.expand_variants(&fill).unwrap();
    let diffs = pair_differences(&[vs], &remote, &ScoringOptions::default()).unwrap();
    let d: Vec<f64> = diffs[0].iter().map(|p| p.diff).collect();
    // gram "walks" (-5) vs "walk" (-4) for the singular, reversed for the plural
    assert_eq!(d, vec![-1.0, 1.0]);
}

#[test]
fn masked_only_conformance_skips_unsupported_ops() {
    let mut remote = fake(masked_caps(), PROTOCOL_VERSION).unwrap();
    let checks = run_conformance(&mut remote);
    let names: Vec<&str> = checks.iter().map(|c| c.name).collect();
    assert_eq!(names, vec!["scoring_mode", "score_masked_pipelined", "reset_restores_scores"]);
    assert!(checks.iter().all(|c| c.passed()));
}

#[test]
fn remote_error_is_transient_and_reported() {
    let remote = fake(masked_caps(), PROTOCOL_VERSION).unwrap();
    let err = remote.score_masked("boom ", ".", &["a".into()]).unwrap_err();
    assert!(matches!(&err, BackendError::Remote(m) if m == "model exploded"));
    assert!(err.is_transient());
    // The connection stays usable after an error reply.
    assert_eq!(remote.score_masked("", ".", &["ab".into()]).unwrap(), vec![-2.0]);
}

#[test]
fn version_mismatch_fails_handshake() {
    let err = fake(masked_caps(), PROTOCOL_VERSION + 1).err().unwrap();
    assert!(matches!(err, BackendError::VersionMismatch { found, .. } if found == PROTOCOL_VERSION + 1));
}

#[test]
fn crashed_backend_reports_stderr_tail() {
    let args = vec!["-c".to_string(), "echo loading weights >&2; echo out of memory >&2; exit 3".into()];
    let err = RemoteBackend::spawn("sh", &args, quick()).err().unwrap();
    match err {
        BackendError::Crashed { diagnostics } => {
            assert!(diagnostics.contains("out of memory"), "{diagnostics}");
        }
        other => panic!("expected crash, got {other}"),
    }
}

#[test]
fn missing_program_is_an_io_error() {
    let err = RemoteBackend::spawn("/nonexistent/backend", &[], quick()).err().unwrap();
    assert!(matches!(err, BackendError::Io(_)));
}

#[test]
fn malformed_reply_is_rejected() {
    let args = vec!["-c".to_string(), "read line; echo '{\"id\":1,\"ok\":true}'; sleep 1".into()];
    let err = RemoteBackend::spawn("sh", &args, quick()).err().unwrap();
    assert!(matches!(err, BackendError::Handshake(_)), "{err}");
}

#[test]
fn silent_backend_times_out() {
    let args = vec!["-c".to_string(), "sleep 5".into()];
    let options = RemoteOptions {
        timeout: Duration::from_millis(200),
        window: 1,
    };
    let err = RemoteBackend::spawn("sh", &args, options).err().unwrap();
    assert!(matches!(err, BackendError::Timeout));
}

#[test]
fn conformance_subcommand_reports_each_check() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = toy_file(dir.path());
    let o = common::run(&["conformance", "--", common::bin(), "serve", "--corpus", corpus.to_str().unwrap()]);
    assert!(o.status.success(), "{}", common::stderr(&o));
    let out = common::stdout(&o);
    assert!(out.lines().filter(|l| l.starts_with("PASS ")).count() >= 7, "{out}");
    assert!(!out.contains("FAIL"));
}
