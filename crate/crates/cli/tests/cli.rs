use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn msnas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msnas"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("cfg.json");
    let cfg = r#"{
        "training": {"batch_size": 64, "max_epochs": 2, "patience_train": 1, "patience_search": 1},
        "gp": {"max_points": 50, "steps": 5},
        "scaling_epochs": 1
    }"#;
    fs::write(&path, cfg).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn generate_run_report_and_gp() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let data = dir.path().join("data");
    let out = dir.path().join("out");
    let (data, out) = (data.to_str().unwrap(), out.to_str().unwrap());

    let o = msnas(&["gen", "--n-events", "300", "--seed", "4", "--out", data]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let o = msnas(&[
        "run", "--config", &cfg, "--method", "grid", "--data", data, "--v1", "0.5", "--seeds", "1", "--out", out,
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let runs = fs::read_to_string(Path::new(out).join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 11);
    assert!(String::from_utf8_lossy(&o.stdout).contains("grid-best"));

    let o = msnas(&["report", "--out", out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(Path::new(out).join("auc_vs_v1.svg").exists());
    assert!(Path::new(out).join("pairs_auc.svg").exists());

    let run_id = runs.lines().nth(1).unwrap().split(',').next().unwrap();
    let o = msnas(&["gp", "--config", &cfg, "--data", data, "--run", run_id, "--out", out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().count(), 7);
    assert!(stdout.contains("pt1") && stdout.contains("all"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing");
    let missing = missing.to_str().unwrap();

    // configuration errors
    let o = msnas(&["run", "--method", "darts", "--v1", "1.5", "--data", missing]);
    assert_eq!(code(&o), 2);
    let o = msnas(&["run", "--method", "spos", "--dummies", "--data", missing]);
    assert_eq!(code(&o), 2);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"seeds\": [1, 1]}").unwrap();
    let o = msnas(&["reopt", "--config", bad.to_str().unwrap(), "--data", missing]);
    assert_eq!(code(&o), 2);
    fs::write(&bad, "{not json").unwrap();
    let o = msnas(&["report", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2);

    // data errors
    let o = msnas(&["run", "--method", "grid", "--data", missing, "--seeds", "0"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));

    // nothing to report
    let o = msnas(&["report", "--out", missing]);
    assert_eq!(code(&o), 4);
}
