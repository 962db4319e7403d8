use std::path::Path;
use std::process::{Command, Output};

fn cfr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfr"))
        .args(args)
        .current_dir(dir)
        .env_remove("CFR_RUN_ROOT")
        .output()
        .expect("spawn cfr")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Value of a `key: value` line in command output.
fn field(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}: ")))
        .unwrap_or_else(|| panic!("no `{key}` in {text}"))
        .to_string()
}

fn synthetic(dir: &Path) {
    let o = cfr(dir, &["gen-synthetic", "--out", "data", "--per-class", "10", "--ood-per-class", "6"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn help_lists_commands_and_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    let o = cfr(dir.path(), &["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for cmd in ["stress-test", "reinforce", "evaluate", "blend", "report", "gen-synthetic"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
    for key in ["tau_grid", "train.alpha", "editing.ddim_steps"] {
        assert!(text.contains(key), "{key} missing from help");
    }
}

#[test]
fn bad_usage_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cfr(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(cfr(dir.path(), &["blend", "--alpha", "0.5"]).status.code(), Some(1));
}

#[test]
fn invalid_config_exits_one_and_missing_run_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    synthetic(dir.path());
    let o = cfr(dir.path(), &["--config", "data/cfr.toml", "stress-test", "stress.factors=[]"]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    let o = cfr(dir.path(), &["--config", "data/cfr.toml", "reinforce", "--run", "stress-nope-001"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn stress_test_then_reinforce_then_report() {
    let dir = tempfile::tempdir().unwrap();
    synthetic(dir.path());
    let o = cfr(dir.path(), &["--config", "data/cfr.toml", "stress-test", "--out", "runs"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let run = field(&text, "run_id");
    let report = field(&text, "report");
    assert!(Path::new(&report).exists());
    assert!(Path::new(&field(&text, "manifest")).exists());

    let o = cfr(dir.path(), &["--config", "data/cfr.toml", "reinforce", "--run", &run, "--out", "runs"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let comparison = field(&text, "report");
    let params = field(&text, "params");
    assert!(Path::new(&params).join("index.json").exists());

    for format in ["table", "csv", "json"] {
        let o = cfr(dir.path(), &["report", &comparison, "--format", format]);
        assert!(o.status.success());
        assert!(stdout(&o).contains("ood"), "{format}");
    }
    let o = cfr(dir.path(), &["report", &report, "--format", "csv"]);
    assert!(stdout(&o).starts_with("class,"), "{}", stdout(&o));

    let o = cfr(
        dir.path(),
        &["--config", "data/cfr.toml", "evaluate", "--params", &params, "--format", "csv", "data/ood.jsonl"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).lines().any(|l| l.starts_with("ood,all,")), "{}", stdout(&o));
}

fn same_files(a: &Path, b: &Path) {
    for entry in std::fs::read_dir(a).unwrap() {
        let name = entry.unwrap().file_name();
        let x = std::fs::read(a.join(&name)).unwrap();
        let y = std::fs::read(b.join(&name)).unwrap();
        assert_eq!(x, y, "{name:?} differs");
    }
}

#[test]
fn blend_endpoints_reproduce_their_inputs() {
    let dir = tempfile::tempdir().unwrap();
    synthetic(dir.path());
    // A second baseline with a differently fitted head.
    let o = cfr(dir.path(), &["--seed", "99", "gen-synthetic", "--out", "other", "--per-class", "4", "--ood-per-class", "2"]);
    assert!(o.status.success());
    let p0 = dir.path().join("data/baseline");
    let p1 = dir.path().join("other/baseline");
    assert_ne!(std::fs::read_dir(&p1).unwrap().count(), 0);

    let blend = |alpha: &str, out: &str| {
        cfr(dir.path(), &["blend", "--alpha", alpha, "--theta0", "data/baseline", "--theta1", "other/baseline", "--out", out])
    };
    assert!(blend("0", "zero").status.success());
    same_files(&p0, &dir.path().join("zero"));
    assert!(blend("1", "one").status.success());
    same_files(&p1, &dir.path().join("one"));
    assert!(blend("0.5", "half").status.success());
    assert!(dir.path().join("half/index.json").exists());

    // Refuses to overwrite, rejects alpha outside [0, 1].
    assert_eq!(blend("0", "zero").status.code(), Some(2));
    assert_eq!(blend("1.5", "x").status.code(), Some(1));
}
