use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn clues(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clues")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn generate(dir: &Path, seed: &str) {
    let o = clues(&["generate", "--seed", seed, "--tasks-per-type", "3", "--out", dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(tree(&p));
        } else {
            out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
        }
    }
    out.sort();
    out
}

#[test]
fn generate_writes_144_tasks_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    generate(&a, "7");
    generate(&b, "7");
    let dirs = fs::read_dir(&a).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
    assert_eq!(dirs, 144);
    assert!(tree(&a) == tree(&b), "same seed, different bytes");
}

#[test]
fn evaluate_ablate_and_scramble() {
    let tmp = tempfile::tempdir().unwrap();
    let bench = tmp.path().join("bench");
    generate(&bench, "42");
    let b = bench.to_str().unwrap();

    // a quantifier-free task: the oracle is exact
    let o = clues(&["evaluate", "--tasks", &format!("{b}/task-00-000"), "--backend", "symbolic"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("mean accuracy 1.000 over 1 tasks"), "{}", stdout(&o));

    let o = clues(&["--format", "csv", "evaluate", "--tasks", b, "--split", "val"]);
    let text = stdout(&o);
    assert!(text.starts_with("task,task_type,accuracy,random,majority,weighted_random\n"));
    assert_eq!(text.lines().count(), 145);

    let o = clues(&["--format", "json", "ablate", "--tasks", b, "--axis", "quantifier,arity"]);
    let rows: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 4);
    assert_eq!(rows[0]["value"], "unquantified");
    assert_eq!(rows[0]["mean_accuracy"], 1.0);

    let o = clues(&["--format", "json", "scramble-exp", "--tasks", b, "--seeds", "42..46"]);
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["per_seed"].as_array().unwrap().len(), 5);
}

#[test]
fn linearize_and_render() {
    let tmp = tempfile::tempdir().unwrap();
    let bench = tmp.path().join("bench");
    generate(&bench, "42");
    let task = bench.join("task-00-000");
    let plain = stdout(&clues(&["linearize", "--task", task.to_str().unwrap(), "--split", "test"]));
    assert_eq!(plain.lines().count(), 200);
    let first = plain.lines().next().unwrap();
    assert_eq!(first.matches(" [SEP] ").count(), 4);
    let scrambled = stdout(&clues(&["linearize", "--task", task.to_str().unwrap(), "--split", "test", "--scramble-seed", "42"]));
    let names = |l: &str| l.split(" [SEP] ").map(|p| p.split(" | ").next().unwrap().to_string()).collect::<Vec<_>>();
    assert_eq!(names(first), names(scrambled.lines().next().unwrap()));

    let rendered = stdout(&clues(&["render-expl", "--rules", task.join("rules.json").to_str().unwrap()]));
    let stored = fs::read_to_string(task.join("explanations.jsonl")).unwrap();
    for (line, json) in rendered.lines().zip(stored.lines()) {
        let v: serde_json::Value = serde_json::from_str(json).unwrap();
        assert_eq!(line, v["text"]);
    }

    let schema = task.join("schema.json");
    let o = clues(&["parse-expl", "--text", rendered.lines().next().unwrap(), "--schema", schema.to_str().unwrap()]);
    assert!(o.status.success());
    let parsed: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(parsed["rule"]["antecedent"].is_object());
}

#[test]
fn errors_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let schema = tmp.path().join("s.json");
    fs::write(&schema, r#"{"column_names": {"odor": ["categorical", ["pungent", "none"]]}, "targets": {"class": ["poisonous", "edible"]}}"#).unwrap();
    let o = clues(&["parse-expl", "--text", "gibberish", "--schema", schema.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cannot parse explanation"));

    let o = clues(&["parse-expl", "--text", "If odor equal to pungent, then poisonous", "--schema", schema.to_str().unwrap()]);
    assert!(o.status.success());

    assert!(!clues(&["frobnicate"]).status.success());
    assert!(!clues(&["evaluate", "--tasks", "/nonexistent"]).status.success());
    assert!(!clues(&["evaluate", "--tasks", ".", "--backend", "bogus"]).status.success());

    let bench = tmp.path().join("bench");
    generate(&bench, "3");
    fs::remove_file(bench.join("task-05-001/rules.json")).unwrap();
    let o = clues(&["evaluate", "--tasks", bench.to_str().unwrap()]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("task-05-001") && err.contains("rules.json"), "{err}");
}
