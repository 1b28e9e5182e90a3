use std::path::Path;
use std::process::{Command, Output};

fn fedbayes(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedbayes")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

const BERN: &str = r#"{"kind":"bern","params":{"m":200,"n":10,"prior":{"kind":"three_spike"}},"seeds":[1,2]}"#;

const ACCOUNTANT_FLAGS: [&str; 11] =
    ["accountant", "--sampled", "5", "--clients", "20", "--iterations", "40", "--sigma1", "2", "--sigma2", "3"];

#[test]
fn successful_run_writes_the_requested_format() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "bern.json", BERN);
    let out = dir.path().join("report.csv");
    let result = fedbayes(&["bern", "--config", &config, "--out", out.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(result.status.code(), Some(0), "{}", String::from_utf8_lossy(&result.stderr));
    let text = std::fs::read_to_string(out).unwrap();
    assert!(text.starts_with("# kind: bern\n"));
    assert!(text.contains("\nmse,personalized,"));
}

#[test]
fn seed_flags_replace_config_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "bern.json", BERN);
    let result = fedbayes(&["run", "--config", &config, "--seed", "7"]);
    let report: serde_json::Value = serde_json::from_slice(&result.stdout).unwrap();
    assert_eq!(report["seeds"], serde_json::json!([7]));
}

#[test]
fn bad_input_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let typo = write(dir.path(), "typo.json", &BERN.replace("\"n\"", "\"nn\""));
    let bern = write(dir.path(), "bern.json", BERN);
    let panel = write(dir.path(), "p.csv", "id,r1,r2\na,1,0\nb,1,7\n");
    let panel_cfg = write(
        dir.path(),
        "panel.json",
        &format!(r#"{{"kind":"panel-cv","params":{{"panel":{{"source":"file","path":"{panel}"}}}},"seeds":[0]}}"#),
    );
    for args in [
        vec!["bern", "--config", typo.as_str()],
        vec!["gauss", "--config", bern.as_str()],
        vec!["panel-cv", "--config", panel_cfg.as_str()],
        vec!["accountant", "--sampled", "5"],
        vec!["presets", "--show", "nothing"],
    ] {
        let result = fedbayes(&args);
        assert_eq!(result.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&result.stderr));
    }
}

#[test]
fn missing_config_file_exits_with_code_one() {
    let result = fedbayes(&["bern", "--config", "/nonexistent/config.json"]);
    assert_eq!(result.status.code(), Some(1));
}

#[test]
fn divergence_exits_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        dir.path(),
        "linreg.json",
        r#"{"kind":"linreg","params":{"m":20,"n":10,"d":3,"gd":{"eta":10.0,"iterations":200}},"seeds":[0]}"#,
    );
    let result = fedbayes(&["linreg", "--config", &config]);
    assert_eq!(result.status.code(), Some(3), "{}", String::from_utf8_lossy(&result.stderr));
}

#[test]
fn accountant_depends_only_on_its_flags() {
    let first = fedbayes(&ACCOUNTANT_FLAGS);
    assert_eq!(first.status.code(), Some(0));
    let again = fedbayes(&ACCOUNTANT_FLAGS);
    let parse = |o: &Output| -> serde_json::Value { serde_json::from_slice(&o.stdout).unwrap() };
    assert_eq!(first.stdout, again.stdout);
    let budget = parse(&first);
    for key in ["alpha_star", "epsilon", "delta"] {
        assert!(budget[key].is_f64(), "{key} missing from {budget}");
    }

    let mut changed = ACCOUNTANT_FLAGS.to_vec();
    changed[10] = "6";
    assert_ne!(parse(&fedbayes(&changed)), budget);

    let dir = tempfile::tempdir().unwrap();
    let config = write(
        dir.path(),
        "acct.json",
        r#"{"kind":"accountant","params":{"accounting":{"sampled":5,"clients":20,"iterations":40,"sync_gap":1,
            "clip":{"c1":1.0,"c2":1.0,"mode":"separate"},"sigma_q1":2.0,"sigma_q2":3.0}},"seeds":[0]}"#,
    );
    let from_file = fedbayes(&["accountant", "--config", &config]);
    assert_eq!(from_file.stdout, first.stdout);
}

#[test]
fn presets_list_and_show() {
    let list = fedbayes(&["presets"]);
    let text = String::from_utf8(list.stdout).unwrap();
    for name in ["paper-linreg", "paper-bern-3spike", "paper-dp-gauss", "paper-fed"] {
        assert!(text.contains(name));
        let shown = fedbayes(&["presets", "--show", name]);
        assert_eq!(shown.status.code(), Some(0));
        let config: serde_json::Value = serde_json::from_slice(&shown.stdout).unwrap();
        assert!(config["kind"].is_string());
    }
}
