//! Binary-level contract tests: exit codes, dependency errors naming the
//! producing subcommand, manifest skip behavior, and ad-hoc retrieval.

use std::path::Path;
use std::process::{Command, Output};

fn retlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_retlab"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn retlab")
}

fn write_tiny_corpus(dir: &Path) {
    let corpus = concat!(
        "{\"title\":\"Velka\",\"body\":\"Velka is a glazier from the north coast\"}\n",
        "{\"title\":\"Mara\",\"body\":\"Mara is a chandler of some renown\"}\n",
        "{\"title\":\"Trades\",\"body\":\"the occupation rolls list many trades\"}\n",
    );
    std::fs::write(dir.join("corpus.jsonl"), corpus).unwrap();
    let qa = "{\"question\":\"What is Velka's occupation?\",\"answers\":[\"glazier\"],\
\"subject_entity\":\"Velka\",\"relation\":\"occupation\",\"frequency\":10}\n";
    std::fs::write(dir.join("qa.jsonl"), qa).unwrap();
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

#[test]
fn invalid_config_field_exits_2_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = retlab(dir.path(), &["ingest", "--sparse.b", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("sparse.b"), "stderr: {}", stderr(&out));
}

#[test]
fn malformed_override_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = retlab(dir.path(), &["ingest", "--no-dots-here", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = retlab(dir.path(), &["ingest", "--train.bogus_knob", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_upstream_artifact_exits_3_naming_the_producer() {
    let dir = tempfile::tempdir().unwrap();
    write_tiny_corpus(dir.path());
    let args_base = [
        "--paths.corpus",
        "corpus.jsonl",
        "--paths.workdir",
        "work",
        "--paths.qa_eval",
        "qa.jsonl",
    ];

    // eval before anything: the store is missing, produced by `ingest`
    let mut args = vec!["eval"];
    args.extend_from_slice(&args_base);
    let out = retlab(dir.path(), &args);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("`ingest`"), "stderr: {}", stderr(&out));

    // after ingest, eval is blocked on the sparse index
    let mut args = vec!["ingest"];
    args.extend_from_slice(&args_base);
    assert!(retlab(dir.path(), &args).status.success());
    let mut args = vec!["eval"];
    args.extend_from_slice(&args_base);
    let out = retlab(dir.path(), &args);
    assert_eq!(out.status.code(), Some(3));
    assert!(
        stderr(&out).contains("`index-sparse`"),
        "stderr: {}",
        stderr(&out)
    );
}

#[test]
fn rerun_with_matching_hashes_is_a_no_op_and_force_rebuilds() {
    let dir = tempfile::tempdir().unwrap();
    write_tiny_corpus(dir.path());
    let args = [
        "ingest",
        "--paths.corpus",
        "corpus.jsonl",
        "--paths.workdir",
        "work",
    ];
    let first = retlab(dir.path(), &args);
    assert!(first.status.success());
    assert!(stdout(&first).contains("ingested 3 passages"));

    let second = retlab(dir.path(), &args);
    assert!(second.status.success());
    assert!(stdout(&second).contains("[skip]"), "stdout: {}", stdout(&second));

    // named flags must precede the dotted overrides
    let mut forced = vec!["ingest", "--force"];
    forced.extend_from_slice(&args[1..]);
    let third = retlab(dir.path(), &forced);
    assert!(third.status.success());
    assert!(!stdout(&third).contains("[skip]"));
}

#[test]
fn sparse_and_dense_retrieval_work_end_to_end_on_a_tiny_corpus() {
    let dir = tempfile::tempdir().unwrap();
    write_tiny_corpus(dir.path());
    let base = [
        "--paths.corpus",
        "corpus.jsonl",
        "--paths.workdir",
        "work",
        "--encoder.d",
        "8",
        "--encoder.feature_dim",
        "256",
    ];
    for step in [
        vec!["ingest"],
        vec!["index-sparse"],
        vec!["index-dense", "--variant", "untrained"],
    ] {
        let mut args = step.clone();
        args.extend_from_slice(&base);
        let out = retlab(dir.path(), &args);
        assert!(out.status.success(), "step {step:?}: {}", stderr(&out));
    }

    let mut args = vec!["retrieve", "glazier Velka", "--system", "bm25", "-k", "2"];
    args.extend_from_slice(&base);
    let out = retlab(dir.path(), &args);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("Velka"), "stdout: {text}");

    let mut args = vec![
        "retrieve",
        "glazier",
        "--system",
        "dense-untrained",
        "-k",
        "3",
    ];
    args.extend_from_slice(&base);
    let out = retlab(dir.path(), &args);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out).lines().count(), 3);
}

#[test]
fn gen_testbed_writes_every_input_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = retlab(
        dir.path(),
        &["gen-testbed", "--out", "tb", "--testbed-seed", "5"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    for file in [
        "corpus.jsonl",
        "triples.jsonl",
        "templates.jsonl",
        "qa_eval.jsonl",
        "routing.jsonl",
        "reserved.jsonl",
        "testbed_manifest.json",
        "config.toml",
    ] {
        assert!(dir.path().join("tb").join(file).exists(), "missing {file}");
    }
}

#[test]
fn unknown_eval_system_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    write_tiny_corpus(dir.path());
    let out = retlab(
        dir.path(),
        &[
            "eval",
            "--paths.corpus",
            "corpus.jsonl",
            "--paths.workdir",
            "work",
            "--eval.systems",
            "[\"bm42\"]",
        ],
    );
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
}

#[test]
fn malformed_corpus_line_is_reported_with_its_number() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("corpus.jsonl"),
        "{\"title\":\"A\",\"body\":\"ok\"}\nnot json\n",
    )
    .unwrap();
    let out = retlab(
        dir.path(),
        &[
            "ingest",
            "--paths.corpus",
            "corpus.jsonl",
            "--paths.workdir",
            "work",
        ],
    );
    assert!(!out.status.success());
    assert!(stderr(&out).contains("line 2"), "stderr: {}", stderr(&out));
}
