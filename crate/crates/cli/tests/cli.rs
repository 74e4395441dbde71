use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fdre(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fdre")).args(args).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("exp.toml");
    let text = format!(
        r#"experiment = "toy2d"
seeds = [0, 1]
output_path = {:?}
model_dir = {:?}
{body}

[arch]
n_blocks = 2
hidden_sizes = [8]

[flow]
epochs = 3
learning_rate = 1e-3

[classifier]
hidden_sizes = [8]
epochs = 3

[data]
n = 200
grid_points = 5
"#,
        dir.join("out/result.json").to_str().unwrap(),
        dir.join("models").to_str().unwrap(),
    );
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn records(dir: &Path) -> serde_json::Value {
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("out/result.json")).unwrap()).unwrap();
    v["records"].clone()
}

#[test]
fn validate_reports_ok_and_issues() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = fdre(&["validate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "experiment = \"toy2d\"\ntraining_mode = \"separate\"\nalpha = 0.5\n").unwrap();
    let out = fdre(&["validate", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("output_path") && err.contains("alpha"), "{err}");

    let out = fdre(&["validate", "--config", "/no/such/config.toml"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn run_is_reproducible_and_overridable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = fdre(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let first = records(dir.path());
    assert_eq!(first.as_array().unwrap().iter().filter(|r| r["metric"] == "mse").count(), 2);
    let csv = fs::read_to_string(dir.path().join("out/result.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 25);

    assert_eq!(fdre(&["run", "--config", &cfg]).status.code(), Some(0));
    assert_eq!(records(dir.path()), first);

    let out = fdre(&["run", "--config", &cfg, "--seed", "7", "--set", "data.grid_points=3"]);
    assert_eq!(out.status.code(), Some(0));
    let r = records(dir.path());
    assert!(r.as_array().unwrap().iter().all(|x| x["seed"] == 7));
    let csv = fs::read_to_string(dir.path().join("out/result.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 9);
}

#[test]
fn encode_uses_saved_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    assert_eq!(fdre(&["run", "--config", &cfg, "--seed", "3"]).status.code(), Some(0));
    let input = dir.path().join("in.csv");
    fs::write(&input, "a,b\n0.0,0.0\n1.5,-2.0\n3.0,3.0\n").unwrap();
    let output = dir.path().join("z.csv");
    let model = dir.path().join("models/seed-3");
    let out = fdre(&[
        "encode",
        "--model",
        model.to_str().unwrap(),
        "--in",
        input.to_str().unwrap(),
        "--out",
        output.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&output).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "z1,z2");
    assert_eq!(lines.len(), 4);
}

#[test]
fn runtime_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = fdre(&["encode", "--model", "/no/model", "--in", "/no/in.csv", "--out", "/tmp/x.csv"]);
    assert_eq!(out.status.code(), Some(2));

    let cfg = write_config(dir.path(), "dre_kind = \"kliep\"\n[kernel]\nbandwidth = 1e-6");
    let out = fdre(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(dir.path().join("out/result.json").exists());
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed 0"));
}

#[test]
fn bad_arguments_are_validation_failures() {
    assert_eq!(fdre(&["run"]).status.code(), Some(1));
    assert_eq!(fdre(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(fdre(&["--help"]).status.code(), Some(0));
}
