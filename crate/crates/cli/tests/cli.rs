use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use circafactor::archive::PosteriorArchive;
use circafactor::io::read_dataset_csv;
use circafactor::synth::{generate_dependent, SynthConfig};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_circafactor"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

/// Simulates a small dependent dataset into `dir/sim`.
fn simulate_small(dir: &Path, p: usize) -> PathBuf {
    let cfg = write(
        dir,
        "sim.json",
        &format!(r#"{{"seed": 17, "p": {p}, "k_true": 2, "loading_count_range": [5, 3]}}"#),
    );
    let out = dir.join("sim");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    out
}

fn fit_config(dir: &Path, extra: &str) -> PathBuf {
    write(
        dir,
        "fit.json",
        &format!(r#"{{"seed": 3, "n_iter": 200, "burn_in": 100, "thin": 4, "checkpoint_every": 25{extra}}}"#),
    )
}

fn read(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn simulate_requires_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "sim.json", r#"{"p": 20}"#);
    let out = run(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}

#[test]
fn simulate_reports_bad_fields_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "sim.json", r#"{"seed": 1, "p": 20, "k_true": "two"}"#);
    let out = run(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("k_true"));
}

#[test]
fn simulated_dataset_round_trips_and_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate_small(dir.path(), 20);
    let data = read_dataset_csv(&sim.join("dataset.csv")).unwrap();

    let mut cfg = SynthConfig::dependent(20, 17);
    cfg.k_true = 2;
    cfg.loading_count_range = (5, 3);
    let (expected, truth) = generate_dependent(&cfg).unwrap();
    assert_eq!(data, expected);

    let truth_text = fs::read_to_string(sim.join("truth.json")).unwrap();
    assert!(truth_text.contains(&format!("\"n_circadian\": {}", truth.n_circadian())));
    let echo = fs::read_to_string(sim.join("config.json")).unwrap();
    assert!(echo.contains("\"seed\": 17") && echo.contains("\"bandwidth\""));

    let again = dir.path().join("again");
    ok(&["simulate", "--config", s(&dir.path().join("sim.json")), "--out", s(&again)]);
    for f in ["dataset.csv", "truth.json", "config.json"] {
        assert_eq!(read(&sim.join(f)), read(&again.join(f)), "{f}");
    }
}

#[test]
fn smoke_fit_summarize_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate_small(dir.path(), 20);
    let data = sim.join("dataset.csv");
    let cfg = fit_config(dir.path(), "");
    let fit = dir.path().join("fit");
    ok(&["fit", "--data", s(&data), "--config", s(&cfg), "--out", s(&fit)]);
    let archive = PosteriorArchive::read_dir(&fit).unwrap();
    assert_eq!(archive.len(), (200 - 100) / 4);
    assert_eq!(archive.n_probes(), 20);

    let summary = dir.path().join("summary");
    ok(&["summarize", "--archive", s(&fit), "--out", s(&summary), "--k-star", "0.1"]);
    let table = fs::read_to_string(summary.join("summary.csv")).unwrap();
    let header = table.lines().next().unwrap();
    assert!(header.starts_with("probe_id,shrunk_pct_4h"));
    assert!(header.contains("prob_circadian") && header.contains("amplitude_24h_q500"));
    assert_eq!(table.lines().count(), 21);
    for f in ["discoveries.csv", "edges.csv", "ess.csv", "scores_periodic.csv"] {
        assert!(summary.join(f).exists(), "{f}");
    }

    let fisher = dir.path().join("fisher.csv");
    ok(&["baseline", "--data", s(&data), "--out", s(&fisher)]);
    let eval = dir.path().join("eval");
    let bayes = format!("bayes={}", s(&summary.join("scores_periodic.csv")));
    let same = format!("same={}", s(&summary.join("scores_periodic.csv")));
    let g = format!("fisher={}", s(&fisher));
    ok(&[
        "evaluate", "--truth", s(&sim.join("truth.json")), "--scores", &bayes, "--scores", &same, "--scores", &g,
        "--out", s(&eval),
    ]);
    let auc = fs::read_to_string(eval.join("auc.csv")).unwrap();
    let rows: Vec<&str> = auc.lines().collect();
    assert_eq!(rows[0], "method,auc");
    let value = |r: &str| r.split(',').nth(1).unwrap().parse::<f64>().unwrap();
    assert_eq!(value(rows[1]), value(rows[2]));
    assert!(eval.join("curves_fisher.csv").exists());
}

#[test]
fn perfect_scores_give_unit_auc() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate_small(dir.path(), 20);
    let truth = circafactor::synth::GroundTruth::read_labels(&sim.join("truth.json")).unwrap();
    let mut text = String::from("probe_id,score,direction\n");
    for (id, &label) in truth.probe_ids.iter().zip(&truth.periodic) {
        text.push_str(&format!("{id},{},higher\n", if label { 1.0 } else { 0.0 }));
    }
    let scores = write(dir.path(), "perfect.csv", &text);
    let eval = dir.path().join("eval");
    let arg = format!("perfect={}", s(&scores));
    ok(&["evaluate", "--truth", s(&sim.join("truth.json")), "--scores", &arg, "--out", s(&eval)]);
    assert_eq!(fs::read_to_string(eval.join("auc.csv")).unwrap(), "method,auc\nperfect,1\n");
}

#[test]
fn independent_mode_has_zero_factor_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate_small(dir.path(), 12);
    let cfg = fit_config(dir.path(), "");
    let fit = dir.path().join("fit");
    ok(&[
        "fit", "--data", s(&sim.join("dataset.csv")), "--config", s(&cfg), "--mode", "independent", "--out", s(&fit),
    ]);
    let archive = PosteriorArchive::read_dir(&fit).unwrap();
    assert!(archive.snapshots.iter().all(|snap| snap.lambda.iter().all(|v| *v == 0.0)));
    assert!(archive.moments.mean_lambda_outer().iter().all(|v| *v == 0.0));
    let echo = fs::read_to_string(fit.join("config.json")).unwrap();
    assert!(echo.contains("\"mode\": \"independent\""));
}

#[test]
fn same_seed_fits_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate_small(dir.path(), 15);
    let data = sim.join("dataset.csv");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let cfg = fit_config(dir.path(), "");
    ok(&["fit", "--data", s(&data), "--config", s(&cfg), "--out", s(&a)]);
    let serial = write(
        dir.path(),
        "serial.json",
        r#"{"seed": 3, "n_iter": 200, "burn_in": 100, "thin": 4, "checkpoint_every": 25, "parallel": false}"#,
    );
    ok(&["fit", "--data", s(&data), "--config", s(&serial), "--out", s(&b)]);
    assert_eq!(read(&a.join("draws.bin")), read(&b.join("draws.bin")));
    assert_eq!(read(&a.join("manifest.json")), read(&b.join("manifest.json")));
    for dir_ in [&a, &b] {
        ok(&["summarize", "--archive", s(dir_), "--out", s(&dir_.join("summary"))]);
    }
    for f in ["summary.csv", "discoveries.csv", "edges.csv", "scores_circadian.csv"] {
        assert_eq!(read(&a.join("summary").join(f)), read(&b.join("summary").join(f)), "{f}");
    }
}

#[test]
fn stopped_and_resumed_fit_matches_uninterrupted_fit() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate_small(dir.path(), 15);
    let data = sim.join("dataset.csv");
    let cfg = fit_config(dir.path(), "");
    let full = dir.path().join("full");
    ok(&["fit", "--data", s(&data), "--config", s(&cfg), "--out", s(&full)]);

    let part = dir.path().join("part");
    ok(&["fit", "--data", s(&data), "--config", s(&cfg), "--out", s(&part), "--stop-after", "130"]);
    assert!(!part.join("draws.bin").exists());
    ok(&["fit", "--data", s(&data), "--config", s(&cfg), "--out", s(&part), "--resume"]);
    assert_eq!(read(&full.join("draws.bin")), read(&part.join("draws.bin")));
    assert_eq!(read(&full.join("manifest.json")), read(&part.join("manifest.json")));
}

#[test]
fn killed_and_resumed_fit_matches_uninterrupted_fit() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate_small(dir.path(), 40);
    let data = sim.join("dataset.csv");
    let cfg = write(
        dir.path(),
        "long.json",
        r#"{"seed": 8, "n_iter": 3000, "burn_in": 1000, "thin": 5, "checkpoint_every": 50}"#,
    );
    let full = dir.path().join("full");
    ok(&["fit", "--data", s(&data), "--config", s(&cfg), "--out", s(&full)]);

    let part = dir.path().join("part");
    let mut child = Command::new(env!("CARGO_BIN_EXE_circafactor"))
        .args(["fit", "--data", s(&data), "--config", s(&cfg), "--out", s(&part)])
        .env("RUST_LOG", "warn")
        .spawn()
        .unwrap();
    let state = part.join("checkpoint").join("state.json");
    let start = Instant::now();
    while !state.exists() && start.elapsed() < Duration::from_secs(60) {
        std::thread::sleep(Duration::from_millis(5));
    }
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(state.exists(), "no checkpoint appeared");

    ok(&["fit", "--data", s(&data), "--config", s(&cfg), "--out", s(&part), "--resume"]);
    assert_eq!(read(&full.join("draws.bin")), read(&part.join("draws.bin")));
}

#[test]
fn resume_with_a_different_config_exits_with_code_4() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate_small(dir.path(), 10);
    let data = sim.join("dataset.csv");
    let cfg = fit_config(dir.path(), "");
    let part = dir.path().join("part");
    ok(&["fit", "--data", s(&data), "--config", s(&cfg), "--out", s(&part), "--stop-after", "60"]);
    let other = write(
        dir.path(),
        "other.json",
        r#"{"seed": 4, "n_iter": 200, "burn_in": 100, "thin": 4, "checkpoint_every": 25}"#,
    );
    let out = run(&["fit", "--data", s(&data), "--config", s(&other), "--out", s(&part), "--resume"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn invalid_data_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "bad.csv", "probe_id,t=0,t=2,t=4,t=6\np1,1,NaN,3,4\n");
    let cfg = fit_config(dir.path(), "");
    let out = run(&["fit", "--data", s(&data), "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));

    let missing = run(&["fit", "--data", "/nonexistent.csv", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn periods_beyond_nyquist_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate_small(dir.path(), 10);
    let cfg = fit_config(dir.path(), r#", "periods": [3, 24]"#);
    let out = run(&[
        "fit", "--data", s(&sim.join("dataset.csv")), "--config", s(&cfg), "--out", s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Nyquist"));
}

#[test]
fn sparsity_and_geweke_commands_write_csv() {
    let dir = tempfile::tempdir().unwrap();
    let hist = dir.path().join("hist.csv");
    ok(&["sparsity", "--draws", "2000", "--bins", "10", "--seed", "1", "--out", s(&hist)]);
    let text = fs::read_to_string(&hist).unwrap();
    let total: usize = text.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(total, 2000);

    let z = dir.path().join("z.csv");
    ok(&["geweke", "--outer", "2000", "--seed", "2", "--out", s(&z)]);
    assert!(fs::read_to_string(&z).unwrap().lines().count() > 15);
}
