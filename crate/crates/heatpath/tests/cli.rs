//! Exit-code and file-output contract of the command-line driver.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_heatpath"))
}

fn write_config(dir: &std::path::Path, out_dir: &std::path::Path) -> std::path::PathBuf {
    let text = format!(
        r#"
[geometry]
kind = "interval"
a = 0.0
b = 3.141592653589793

[bundle]
rank = 1
scalar = "real"
connection = "zero"
potential = "zero"
alpha = 0.0

[boundary]
preset = "dirichlet"

[section]
name = "sine-mode"
mode = 1

[run]
time = 0.25
partitions = [1, 2]
samples = 2000
seed = 9

[grid]
kind = "uniform"
count = 3

[output]
dir = "{}"
format = "csv"

[trace]
position = [0.3]
velocity = [1.0]
time = 4.0
"#,
        out_dir.display()
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn happy_path_commands_exit_zero_and_write_files() {
    let dir = std::env::temp_dir().join("heatpath-cli-ok");
    std::fs::create_dir_all(&dir).unwrap();
    let out = dir.join("out");
    let cfg = write_config(&dir, &out);

    for (args, file) in [
        (vec!["heat", "step"], "estimate.csv"),
        (vec!["heat", "slices"], "estimate.csv"),
        (vec!["heat", "converge"], "convergence.csv"),
        (vec!["oracle", "eval"], "oracle.csv"),
        (vec!["billiard", "trace"], "trace.csv"),
    ] {
        let status = bin()
            .args(&args)
            .arg("--config")
            .arg(&cfg)
            .arg("--workers")
            .arg("2")
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0), "{args:?}");
        assert!(out.join(file).exists(), "{file} missing after {args:?}");
    }
    // format override switches the emitted file kind
    for (args, file) in [
        (vec!["heat", "step"], "estimate.jsonl"),
        (vec!["heat", "converge"], "convergence.jsonl"),
    ] {
        let status = bin()
            .args(&args)
            .arg("--config")
            .arg(&cfg)
            .args(["--format", "jsonl"])
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
        let text = std::fs::read_to_string(out.join(file)).unwrap();
        for line in text.lines() {
            serde_json::from_str::<serde_json::Value>(line).expect("valid JSON line");
        }
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn validation_errors_exit_two() {
    let dir = std::env::temp_dir().join("heatpath-cli-bad");
    std::fs::create_dir_all(&dir).unwrap();
    let bad = dir.join("bad.toml");
    std::fs::write(&bad, "[geometry]\nkind = \"interval\"\n").unwrap();
    let status = bin().args(["heat", "step"]).arg("--config").arg(&bad).status().unwrap();
    assert_eq!(status.code(), Some(2));

    // unknown key in an otherwise valid config is also a validation error
    let out = dir.join("out");
    let cfg = write_config(&dir, &out);
    let text = std::fs::read_to_string(&cfg).unwrap().replace("[run]", "[run]\ntypo_knob = 1");
    std::fs::write(&cfg, text).unwrap();
    let status = bin().args(["heat", "step"]).arg("--config").arg(&cfg).status().unwrap();
    assert_eq!(status.code(), Some(2));

    let status = bin().args(["heat", "step"]).status().unwrap();
    assert_eq!(status.code(), Some(2), "missing --config");
    std::fs::remove_dir_all(&dir).ok();
}
