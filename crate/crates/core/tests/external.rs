//! External trainer protocol, driven by small shell stubs.

#![cfg(unix)]

mod common;

use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::{Task, TaskSpec};
use pathrank::error::Error;
use pathrank::eval::{avg_ndcg, Bm25Passthrough, EvalConfig, RunReranker};
use pathrank::reranker::{prepare_external_inputs, ExternalTrainer};

const ARG_LOOP: &str = r#"while [ $# -gt 0 ]; do
  case "$1" in
    --triplets) t="$2" ;;
    --queries) q="$2" ;;
    --candidates) c="$2" ;;
    --out) o="$2" ;;
  esac
  shift 2
done
"#;

fn stub(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, format!("#!/bin/sh\n{ARG_LOOP}{body}\n")).unwrap();
    fs::set_permissions(&path, fs::Permissions::from_mode(0o755)).unwrap();
    path
}

fn setup() -> (Task, tempfile::TempDir) {
    let task = Task::build(TaskSpec {
        docs: 300,
        validation_queries: 5,
        test_queries: 15,
        ..TaskSpec::default()
    });
    (task, tempfile::tempdir().unwrap())
}

#[test]
fn copying_the_candidates_reproduces_bm25() {
    let (task, dir) = setup();
    let cfg = EvalConfig::default();
    let inputs = prepare_external_inputs(dir.path(), &task.test, &task.index, &cfg).unwrap();
    let program = stub(
        dir.path(),
        "copy.sh",
        r#"test -f "$t" && test -f "$q" || exit 9
cp "$c" "$o""#,
    );
    let triplets = dir.path().join("triplets.tsv");
    fs::write(&triplets, "query_text\tpositive_doc_id\tnegative_doc_id\tgroup_index\n").unwrap();

    let lists = ExternalTrainer::new(program)
        .run(&triplets, &inputs, &dir.path().join("out.run"))
        .unwrap();
    assert_eq!(lists.len(), 15);
    let external = avg_ndcg(&RunReranker::new(lists, "copy"), &task.test, &task.index, &cfg).unwrap();
    let bm25 = avg_ndcg(&Bm25Passthrough, &task.test, &task.index, &cfg).unwrap();
    assert_eq!(external.mean, bm25.mean);
    assert_eq!(fs::read_to_string(&inputs.queries).unwrap().lines().count(), 15);
}

#[test]
fn malformed_output_reports_the_line() {
    let (task, dir) = setup();
    let inputs = prepare_external_inputs(dir.path(), &task.test, &task.index, &EvalConfig::default()).unwrap();
    let program = stub(dir.path(), "bad.sh", r#"printf 'q1 Q0 d1 1 2.5 x\nq1 Q0 d2 two 1.0 x\n' > "$o""#);
    let err = ExternalTrainer::new(program)
        .run(Path::new("t.tsv"), &inputs, &dir.path().join("out.run"))
        .unwrap_err();
    assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
}

#[test]
fn nonzero_exit_carries_stderr() {
    let (task, dir) = setup();
    let inputs = prepare_external_inputs(dir.path(), &task.test, &task.index, &EvalConfig::default()).unwrap();
    let program = stub(dir.path(), "fail.sh", "echo 'out of memory' >&2\nexit 3");
    let err = ExternalTrainer::new(program)
        .run(Path::new("t.tsv"), &inputs, &dir.path().join("out.run"))
        .unwrap_err();
    match err {
        Error::External(msg) => assert!(msg.contains("out of memory"), "{msg}"),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn slow_trainers_are_killed() {
    let (task, dir) = setup();
    let inputs = prepare_external_inputs(dir.path(), &task.test, &task.index, &EvalConfig::default()).unwrap();
    let program = stub(dir.path(), "slow.sh", "exec sleep 30");
    let started = Instant::now();
    let err = ExternalTrainer::new(program)
        .with_timeout(Duration::from_millis(300))
        .run(Path::new("t.tsv"), &inputs, &dir.path().join("out.run"))
        .unwrap_err();
    assert!(matches!(err, Error::ExternalTimeout(_)), "{err}");
    assert!(started.elapsed() < Duration::from_secs(10));
}

#[test]
fn missing_program_is_an_error() {
    let (task, dir) = setup();
    let inputs = prepare_external_inputs(dir.path(), &task.test, &task.index, &EvalConfig::default()).unwrap();
    let err = ExternalTrainer::new(dir.path().join("absent"))
        .run(Path::new("t.tsv"), &inputs, &dir.path().join("out.run"))
        .unwrap_err();
    assert!(matches!(err, Error::External(_)), "{err}");
}
