use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn latblend(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_latblend"));
    cmd.args(args);
    if let Some(t) = threads {
        cmd.env("LATBLEND_THREADS", t);
    }
    cmd.output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const CONSISTENCY: &str = r#"{"dim":1,"model":{"name":"morse"},"n_list":[8,16,32,64]}"#;

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", CONSISTENCY);
    let a = dir.path().join("a").to_string_lossy().into_owned();
    let b = dir.path().join("b").to_string_lossy().into_owned();
    let ra = latblend(&["consistency", "--config", &cfg, "--out", &a], Some("1"));
    let rb = latblend(&["consistency", "--config", &cfg, "--out", &b], Some("3"));
    assert_eq!(ra.status.code(), Some(0), "{}", String::from_utf8_lossy(&ra.stderr));
    assert_eq!(rb.status.code(), Some(0));
    let ca = fs::read(format!("{a}.csv")).unwrap();
    assert_eq!(ca, fs::read(format!("{b}.csv")).unwrap());
    assert_eq!(fs::read(format!("{a}.json")).unwrap(), fs::read(format!("{b}.json")).unwrap());
    let text = String::from_utf8(ca).unwrap();
    assert!(text.starts_with("# latblend-csv v1"));
    assert_eq!(text.lines().count(), 2 + 4);
}

#[test]
fn unknown_subcommand_exits_2() {
    assert_eq!(latblend(&["frobnicate"], None).status.code(), Some(2));
}

#[test]
fn bad_configs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o").to_string_lossy().into_owned();
    let cases = [
        ("syntax.json", "{not json"),
        ("order.json", r#"{"dim":1,"model":{"name":"morse"},"n_list":[16,8]}"#),
        ("model.json", r#"{"dim":1,"model":{"name":"nope"},"n_list":[8]}"#),
        ("study.json", r#"{"study":"stability","dim":1,"model":{"name":"morse"},"n_list":[8]}"#),
        ("cap.json", r#"{"dim":2,"model":{"name":"morse"},"n_list":[64]}"#),
    ];
    for (name, text) in cases {
        let cfg = write(dir.path(), name, text);
        let sub = if name == "cap.json" { "stability-constant" } else { "consistency" };
        let r = latblend(&[sub, "--config", &cfg, "--out", &out], None);
        assert_eq!(r.status.code(), Some(2), "{name}: {}", String::from_utf8_lossy(&r.stderr));
    }
    let missing = dir.path().join("missing.json").to_string_lossy().into_owned();
    assert_eq!(latblend(&["consistency", "--config", &missing, "--out", &out], None).status.code(), Some(2));
    let cfg = write(dir.path(), "ok.json", CONSISTENCY);
    assert_eq!(latblend(&["consistency", "--config", &cfg, "--out", &out], Some("zero")).status.code(), Some(2));
}

#[test]
fn failing_study_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    // Too few grids for a slope fit.
    let cfg = write(dir.path(), "f.json", r#"{"dim":1,"model":{"name":"morse"},"n_list":[8,16]}"#);
    let out = dir.path().join("f").to_string_lossy().into_owned();
    let r = latblend(&["consistency", "--config", &cfg, "--out", &out], None);
    assert_eq!(r.status.code(), Some(1));
    assert!(Path::new(&format!("{out}.csv")).exists());
}

#[test]
fn output_prefix_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("sub").join("deriv");
    let text = format!(
        r#"{{"dim":1,"model":{{"name":"pair-angular"}},"n_list":[4,8],"output":{}}}"#,
        serde_json::to_string(&prefix.to_string_lossy()).unwrap()
    );
    let cfg = write(dir.path(), "d.json", &text);
    let r = latblend(&["check-derivatives", "--config", &cfg], None);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let json: serde_json::Value = serde_json::from_slice(&fs::read(prefix.with_extension("json")).unwrap()).unwrap();
    assert_eq!(json["passed"], true);
    assert_eq!(json["study"], "derivative_check");
}
