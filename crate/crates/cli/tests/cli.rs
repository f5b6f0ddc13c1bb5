use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_oos-infer"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env_remove("OOS_INFER_THREADS").output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Random-walk prices from a fixed LCG so the test needs no RNG crate.
fn write_prices(path: &Path, n: usize) {
    let mut state: u64 = 42;
    let mut price = 100.0;
    let mut text = String::from("date,close\n");
    for i in 0..n {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let u = (state >> 11) as f64 / (1u64 << 53) as f64;
        price += u - 0.5;
        text.push_str(&format!("{i},{price:.6}\n"));
    }
    fs::write(path, text).unwrap();
}

fn small_coverage(out: &Path) -> Vec<String> {
    vec![
        "coverage".into(),
        "--T".into(),
        "200".into(),
        "--pi".into(),
        "1,0.25".into(),
        "--reps".into(),
        "6".into(),
        "--seed".into(),
        "7".into(),
        "--out".into(),
        out.display().to_string(),
    ]
}

#[test]
fn coverage_writes_table_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let args = small_coverage(&out);
    let o = run(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(o.status.success(), "{}", stderr(&o));
    let table = stdout(&o);
    assert!(table.starts_with("dgp,T,pi,n_ok,n_failed,coverage_0.9"));
    assert_eq!(table.lines().count(), 3);
    let csv = fs::read_to_string(out.join("coverage.csv")).unwrap();
    assert!(csv.contains("fast-rates"));
    assert!(out.join("manifest.json").is_file());
}

#[test]
fn manifest_lists_every_output_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let args = small_coverage(&out);
    assert!(run(&args.iter().map(String::as_str).collect::<Vec<_>>()).status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let mut listed: Vec<String> = manifest["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f.as_str().unwrap().to_string())
        .collect();
    listed.push("manifest.json".into());
    listed.sort();
    let mut present: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    present.sort();
    assert_eq!(listed, present);
    for f in &listed {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    assert_eq!(manifest["master_seed"], 7);
    assert_eq!(manifest["config"]["reps"], "6");
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 16);
}

#[test]
fn negative_ratio_is_a_usage_error() {
    let o = run(&["coverage", "--pi", "-1", "--reps", "2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("'pi'"), "{}", stderr(&o));
}

#[test]
fn zero_reps_and_bad_alpha_are_named() {
    let o = run(&["coverage", "--reps", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("'reps'"));
    let o = run(&["power", "--alpha", "1.5", "--reps", "2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("'alpha'"));
}

#[test]
fn unknown_flag_and_subcommand_exit_one() {
    assert_eq!(run(&["coverage", "--bogus", "3"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    let o = run(&["--help"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("coverage"));
}

#[test]
fn bad_thread_env_is_named() {
    let o = bin()
        .args(["coverage", "--reps", "2", "--T", "200"])
        .env("OOS_INFER_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("OOS_INFER_THREADS"));
}

#[test]
fn missing_input_file_exits_one() {
    let o = run(&["mdh", "--input", "/definitely/not/here.csv", "--column", "close"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("'input'"));
}

#[test]
fn malformed_csv_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    let mut text = String::from("date,close\n");
    for i in 0..300 {
        text.push_str(&format!("{i},{}\n", if i == 150 { "abc".to_string() } else { format!("{}", 100 + i) }));
    }
    fs::write(&path, text).unwrap();
    let o = run(&["mdh", "--input", path.to_str().unwrap(), "--column", "close"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn mdh_prints_one_row_per_learner() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("EURUSD.csv");
    write_prices(&path, 1200);
    let out = dir.path().join("mdh");
    let o = run(&[
        "mdh",
        "--input",
        path.to_str().unwrap(),
        "--column",
        "close",
        "--learner",
        "ridge,ap",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "pair,method,pi,p_value");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("EURUSD,ridge,1,"));
    assert!(lines[2].starts_with("EURUSD,ap,1,"));
    for l in &lines[1..] {
        let p: f64 = l.rsplit(',').next().unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&p));
    }
    assert!(out.join("mdh.csv").is_file());
    assert!(out.join("manifest.json").is_file());
}

#[test]
fn diagnose_score_reports_json() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("res.csv");
    let mut text = String::from("e\n");
    for i in 0..200 {
        text.push_str(&format!("{}\n", if i % 2 == 0 { 0.5 } else { -0.5 }));
    }
    fs::write(&path, text).unwrap();
    let o = run(&["diagnose-score", "--input", path.to_str().unwrap(), "--column", "e"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v.is_object());
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("study.cfg");
    let out = dir.path().join("run");
    fs::write(
        &cfg,
        format!("# small run\nT=200\npi=1\nreps=50\nseed=3\nout={}\n", out.display()),
    )
    .unwrap();
    let o = run(&["coverage", "--config", cfg.to_str().unwrap(), "--reps", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["reps"], "4");
    assert_eq!(manifest["config"]["seed"], "3");
    let table = stdout(&o);
    assert!(table.lines().nth(1).unwrap().contains(",200,1,4,"));
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("study.cfg");
    fs::write(&cfg, "colour=blue\n").unwrap();
    let o = run(&["coverage", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("'colour'"));
}

fn strip_wall_time(text: &str) -> String {
    text.lines()
        .filter(|l| !l.contains("wall_time_secs"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn outputs_do_not_depend_on_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let cwd = dir.path().join(format!("t{threads}"));
        fs::create_dir_all(&cwd).unwrap();
        let out = cwd.join("run");
        let o = bin()
            .args([
                "power", "--dgp", "garch", "--T", "300", "--pi", "1", "--reps", "6", "--seed", "11", "--methods",
                "ols,ap", "--out", "run",
            ])
            .current_dir(&cwd)
            .env("OOS_INFER_THREADS", threads)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        let mut files: Vec<(String, String)> = fs::read_dir(&out)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                let name = e.file_name().to_string_lossy().into_owned();
                let text = fs::read_to_string(e.path()).unwrap();
                (name, strip_wall_time(&text))
            })
            .collect();
        files.sort();
        outputs.push((stdout(&o), files));
    }
    assert_eq!(outputs[0], outputs[1]);
}
