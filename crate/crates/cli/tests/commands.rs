use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

const CONFIG: &str = r#"
algorithms = ["coxph", { kind = "xgboost", n_rounds = 40 }]
n_repeats = 2
mice_cycles = 2
"#;

fn carespan(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_carespan"))
        .current_dir(dir)
        .env_remove("CARESPAN_SEED")
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn printed(out: &Output) -> Vec<PathBuf> {
    String::from_utf8(out.stdout.clone())
        .unwrap()
        .lines()
        .map(PathBuf::from)
        .collect()
}

fn setup() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("exp.toml"), CONFIG).unwrap();
    let out = carespan(dir.path(), &["simulate", "--n", "800", "--config", "exp.toml", "--seed", "5"]);
    let csv = dir.path().join(&printed(&out)[0]);
    (dir, csv)
}

#[test]
fn outputs_land_in_a_directory_named_by_the_config_hash() {
    let (dir, csv) = setup();
    let run = csv.parent().unwrap().to_path_buf();
    assert_eq!(run.parent().unwrap(), dir.path().join("runs"));
    assert_eq!(run.file_name().unwrap().len(), 12);
    assert!(run.join("config.toml").exists());
    assert!(run.join("ground_truth.json").exists());

    // the env var and the flag select the same seed and so the same run
    let out = Command::new(env!("CARGO_BIN_EXE_carespan"))
        .current_dir(dir.path())
        .env("CARESPAN_SEED", "5")
        .args(["simulate", "--n", "800", "--config", "exp.toml"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(dir.path().join(&printed(&out)[0]), csv);

    let other = carespan(dir.path(), &["simulate", "--n", "800", "--config", "exp.toml", "--seed", "6"]);
    assert_ne!(dir.path().join(&printed(&other)[0]), csv);
}

#[test]
fn train_calibrate_explain() {
    let (dir, csv) = setup();
    let data = csv.to_str().unwrap();
    let common = ["--config", "exp.toml", "--seed", "5"];
    let mut args = vec!["train", "--data", data, "--algorithm", "xgb", "--rounds", "60"];
    args.extend(common);
    let out = carespan(dir.path(), &args);
    let bundle = dir.path().join(&printed(&out)[0]);
    let loaded = carespan::bundle::load_bundle(&bundle).unwrap();
    assert_eq!(loaded.horizons(), vec![30, 91, 182, 365]);

    let mut args = vec!["calibrate", "--bundle", bundle.to_str().unwrap(), "--data", data];
    args.extend(common);
    let out = carespan(dir.path(), &args);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(printed(&out).last().unwrap())).unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 4);
    assert_eq!(json[2]["curve"]["counts"].as_array().unwrap().len(), 10);
    assert!(json[2]["roc"].is_array());

    let mut args = vec!["explain", "--bundle", bundle.to_str().unwrap(), "--data", data, "--row", "3", "--top-k", "4"];
    args.extend(common);
    let out = carespan(dir.path(), &args);
    let files = printed(&out);
    let names: Vec<String> = files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(names.iter().filter(|n| n.starts_with("dependence-")).count(), 3);
    let waterfall: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join(&files[names.iter().position(|n| n == "waterfall.json").unwrap()]))
            .unwrap(),
    )
    .unwrap();
    let rows = waterfall["rows"].as_array().unwrap();
    assert!(rows.len() <= 5);
    let sum: f64 = rows.iter().map(|r| r["contribution"].as_f64().unwrap()).sum();
    assert!((waterfall["base_value"].as_f64().unwrap() + sum - waterfall["margin"].as_f64().unwrap()).abs() < 1e-6);

    // a Cox bundle has nothing to explain
    let mut args = vec!["train", "--data", data, "--algorithm", "cox"];
    args.extend(common);
    let cox = dir.path().join(&printed(&carespan(dir.path(), &args))[0]);
    let status = Command::new(env!("CARGO_BIN_EXE_carespan"))
        .current_dir(dir.path())
        .args(["explain", "--bundle", cox.to_str().unwrap(), "--data", data])
        .stderr(Stdio::null())
        .status()
        .unwrap();
    assert!(!status.success());
}

#[test]
fn evaluate_then_report() {
    let (dir, csv) = setup();
    let out = carespan(
        dir.path(),
        &["evaluate", "--data", csv.to_str().unwrap(), "--config", "exp.toml", "--seed", "5"],
    );
    let files = printed(&out);
    assert_eq!(files.len(), 3);
    let json = dir.path().join(&files[0]);
    let md = std::fs::read_to_string(dir.path().join(&files[1])).unwrap();
    assert!(md.contains("| XGB |") && md.contains("| CoxPH |"));

    let out = carespan(dir.path(), &["report", "--input", json.to_str().unwrap()]);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), md);
    let out = carespan(
        dir.path(),
        &["report", "--input", json.to_str().unwrap(), "--format", "csv", "--output", "t.csv"],
    );
    assert_eq!(printed(&out), vec![PathBuf::from("t.csv")]);
    let csv_text = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert_eq!(csv_text.lines().count(), 1 + 2 * 3 + 2 * 4 * 4);
}

fn get(port: u16, path: &str) -> Option<String> {
    let mut stream = TcpStream::connect(("127.0.0.1", port)).ok()?;
    write!(stream, "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").ok()?;
    let mut text = String::new();
    stream.read_to_string(&mut text).ok()?;
    Some(text)
}

#[test]
fn serve_answers_health() {
    let (dir, csv) = setup();
    let out = carespan(
        dir.path(),
        &["train", "--data", csv.to_str().unwrap(), "--algorithm", "cox", "--config", "exp.toml"],
    );
    let bundle = dir.path().join(&printed(&out)[0]);
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = Command::new(env!("CARGO_BIN_EXE_carespan"))
        .args(["serve", "--bundle", bundle.to_str().unwrap(), "--port", &port.to_string()])
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(30);
    let response = loop {
        if let Some(r) = get(port, "/health") {
            break r;
        }
        assert!(Instant::now() < deadline, "server did not start");
        std::thread::sleep(Duration::from_millis(100));
    };
    let metadata = get(port, "/model/metadata").unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(response.starts_with("HTTP/1.1 200"));
    assert!(response.contains("\"model_loaded\":true"));
    assert!(metadata.contains("\"algorithm\":\"CoxPH\""));
}
