use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SQUARE: &str = r#"{
  "name": "small",
  "walk": { "waypoints": [[5, 5], [25, 5], [25, 25]], "speed": 1.3, "cadence": 2.0 },
  "world": { "seed": 4 }
}"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_calfree"));
    c.env_remove("CALFREE_OUT");
    c
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn run_writes_artifacts_and_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = write(tmp.path(), "s.json", SQUARE);
    let out = tmp.path().join("out");
    let o = bin()
        .args(["run", "--scenario"])
        .arg(&sc)
        .args(["--mode", "rss", "--rho", "0,0.4", "--benchmark", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let s = text(&o);
    assert!(s.contains("rho=0 ") && s.contains("rho=0.4") && s.contains("benchmark"), "{s}");
    let dir = out.join("small/rss/seed-4");
    for f in ["summary.json", "rho-0/report.json", "rho-0.4/trace.csv", "benchmark/cdf.csv", "imu.csv"] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
}

#[test]
fn seed_flag_and_env_output_root() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = write(tmp.path(), "s.json", SQUARE);
    let root = tmp.path().join("from-env");
    let o = bin()
        .env("CALFREE_OUT", &root)
        .args(["run", "--scenario"])
        .arg(&sc)
        .args(["--mode", "rtt", "--rho", "0", "--seed", "11"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    assert!(root.join("small/rtt/seed-11/rho-0/report.json").is_file());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = write(tmp.path(), "s.json", SQUARE);
    let run = |out: &Path, extra: &[&str]| {
        let o = bin()
            .args(["run", "--scenario"])
            .arg(&sc)
            .args(["--mode", "rtt", "--rho", "0,0.2,0.8", "--benchmark", "--out"])
            .arg(out)
            .args(extra)
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    };
    run(&tmp.path().join("a"), &[]);
    run(&tmp.path().join("b"), &[]);
    run(&tmp.path().join("c"), &["--sequential"]);
    let a = files(&tmp.path().join("a"));
    assert!(a.len() > 10);
    assert_eq!(a, files(&tmp.path().join("b")));
    assert_eq!(a, files(&tmp.path().join("c")));
}

#[test]
fn validate_accepts_good_file() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = write(tmp.path(), "s.json", SQUARE);
    let o = bin().args(["validate", "--scenario"]).arg(&sc).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("ok:"));
}

#[test]
fn validate_names_negative_rho() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = write(
        tmp.path(),
        "s.json",
        r#"{ "walk": { "waypoints": [[0, 0], [10, 0]], "speed": 1, "cadence": 2 }, "rho": [0, -0.5] }"#,
    );
    let o = bin().args(["validate", "--scenario"]).arg(&sc).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let lines: Vec<String> = String::from_utf8_lossy(&o.stdout).lines().map(String::from).collect();
    assert_eq!(lines.len(), 1, "{lines:?}");
    assert!(lines[0].contains("rho[1]"), "{}", lines[0]);
}

#[test]
fn validate_warns_on_sparse_rtt_aps() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = write(
        tmp.path(),
        "s.json",
        r#"{ "walk": { "waypoints": [[0, 0], [10, 0]], "speed": 1, "cadence": 2 },
             "world": { "aps": [ { "id": "a", "position": [0, 5], "kind": "rtt" },
                                 { "id": "b", "position": [10, 5], "kind": "rtt" } ] } }"#,
    );
    let o = bin().args(["validate", "--scenario"]).arg(&sc).args(["--mode", "rtt"]).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    assert!(text(&o).contains("warning: world.aps"), "{}", text(&o));
}

#[test]
fn run_without_aps_is_a_validation_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = write(
        tmp.path(),
        "s.json",
        r#"{ "walk": { "waypoints": [[0, 0], [10, 0]], "speed": 1, "cadence": 2 }, "world": { "aps": [] } }"#,
    );
    let o = bin()
        .args(["run", "--scenario"])
        .arg(&sc)
        .args(["--mode", "rss", "--out"])
        .arg(tmp.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
    assert!(text(&o).contains("no access points"));
}

#[test]
fn malformed_json_reports_line_and_field() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = write(
        tmp.path(),
        "s.json",
        "{\n  \"walk\": {\n    \"waypoints\": [[0, 0], [10, 0]],\n    \"speed\": \"fast\",\n    \"cadence\": 2\n  }\n}",
    );
    for cmd in ["validate", "run"] {
        let o = bin().args([cmd, "--scenario"]).arg(&sc).args(["--mode", "rss"]).output().unwrap();
        assert_eq!(o.status.code(), Some(2));
        let s = text(&o);
        assert!(s.contains("line 4") && s.contains("walk.speed"), "{s}");
    }
}

#[test]
fn negative_rho_flag_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = write(tmp.path(), "s.json", SQUARE);
    let o = bin()
        .args(["run", "--scenario"])
        .arg(&sc)
        .args(["--mode", "rss", "--rho", "0,-0.2", "--out"])
        .arg(tmp.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
    assert!(text(&o).contains("rho[1]"));
}

#[test]
fn missing_mode_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = write(tmp.path(), "s.json", SQUARE);
    let o = bin().args(["run", "--scenario"]).arg(&sc).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn overflowing_initial_guess_exits_with_divergence() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = write(
        tmp.path(),
        "s.json",
        r#"{ "walk": { "waypoints": [[5, 5], [25, 5]], "speed": 1.3, "cadence": 2 },
             "engine": { "initial_guess": { "rss_eta": 0.001 } } }"#,
    );
    let o = bin()
        .args(["run", "--scenario"])
        .arg(&sc)
        .args(["--mode", "rss", "--rho", "0", "--out"])
        .arg(tmp.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3), "{}", text(&o));
    assert!(text(&o).contains("diverged"));
}
