use std::path::Path;
use std::process::{Command, Output};

fn snspd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_snspd"))
        .current_dir(dir)
        .env_remove("SNSPD_CONFIG")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

/// Data rows of a CSV document, skipping metadata and the header.
fn rows(text: &str) -> Vec<Vec<f64>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

fn step_dead_time_timestamps(dir: &Path) {
    let o = snspd(
        dir,
        &[
            "simulate", "--rates", "400k", "--recovery", "step:30ns", "--boost", "off", "--efficiency", "1",
            "--photons", "200000", "--seed", "5", "-o", "res.csv", "--timestamps", "ts.csv",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn simulate_writes_curve_with_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let o = snspd(dir.path(), &["simulate", "--rates", "50k:500k:10", "--photons", "1000000", "-o", "c.csv"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = read(dir.path(), "c.csv");
    assert!(text.starts_with("# "));
    assert!(text.contains("\"config_hash\""));
    assert!(text.contains("nu12_hz,delta,delta_sem,cycles"));
    assert_eq!(rows(&text).len(), 10);
    let meta: serde_json::Value = serde_json::from_str(&read(dir.path(), "c.json")).unwrap();
    assert_eq!(meta["provenance"]["seed"], 1);
    assert_eq!(meta["estimates"].as_array().unwrap().len(), 10);
}

#[test]
fn step_detector_matches_dead_time_residuum() {
    let dir = tempfile::tempdir().unwrap();
    let o = snspd(
        dir.path(),
        &[
            "simulate", "--rates", "200k,600k", "--recovery", "step:30ns", "--boost", "off", "--efficiency", "1",
            "--photons", "4000000", "-o", "c.csv",
        ],
    );
    assert_eq!(code(&o), 0);
    for r in rows(&read(dir.path(), "c.csv")) {
        let x = 30e-9 * r[0];
        let expected = x / (2.0 - x);
        assert!((r[1] - expected).abs() <= 3.0 * r[2] + 1e-12, "{r:?} vs {expected}");
    }
}

#[test]
fn output_is_independent_of_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str, threads: &'static str| {
        vec!["--threads", threads, "simulate", "--rates", "100k,700k", "--photons", "3000000", "--seed", "9", "-o", out]
    };
    assert_eq!(code(&snspd(dir.path(), &args("a.csv", "1"))), 0);
    assert_eq!(code(&snspd(dir.path(), &args("b.csv", "4"))), 0);
    assert_eq!(read(dir.path(), "a.csv"), read(dir.path(), "b.csv"));
    assert_eq!(read(dir.path(), "a.json"), read(dir.path(), "b.json"));
}

#[test]
fn seed_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    for (seed, out) in [("1", "a.csv"), ("2", "b.csv")] {
        let o = snspd(dir.path(), &["simulate", "--rates", "500k", "--photons", "1000000", "--seed", seed, "-o", out]);
        assert_eq!(code(&o), 0);
    }
    assert_ne!(rows(&read(dir.path(), "a.csv")), rows(&read(dir.path(), "b.csv")));
}

#[test]
fn missing_config_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_snspd"))
        .current_dir(dir.path())
        .env("SNSPD_CONFIG", dir.path().join("absent.toml"))
        .args(["simulate", "--rates", "100k", "--photons", "10000"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn unknown_config_key_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "seed = 4\n\n[histogram]\nbin_ns = 2.0\nbinz = 1\n").unwrap();
    let o = snspd(dir.path(), &["--config", "c.toml", "simulate"]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 5"), "{err}");
    assert!(err.contains("binz"), "{err}");
}

#[test]
fn config_values_are_used_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.toml"),
        "seed = 4\n[simulate]\nrates = \"100k,200k,300k\"\n[detector]\nphotons = 100000\n",
    )
    .unwrap();
    let o = snspd(dir.path(), &["--config", "c.toml", "simulate", "-o", "a.csv"]);
    assert_eq!(code(&o), 0);
    let text = read(dir.path(), "a.csv");
    assert_eq!(rows(&text).len(), 3);
    assert!(text.contains("\"seed\":4"));
    let o = snspd(dir.path(), &["--config", "c.toml", "simulate", "--rates", "100k", "--seed", "8", "-o", "b.csv"]);
    assert_eq!(code(&o), 0);
    let text = read(dir.path(), "b.csv");
    assert_eq!(rows(&text).len(), 1);
    assert!(text.contains("\"seed\":8"));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&snspd(dir.path(), &["bogus"])), 1);
    assert_eq!(code(&snspd(dir.path(), &["simulate", "--rates", "fast"])), 1);
    assert_eq!(code(&snspd(dir.path(), &["simulate", "--recovery", "step"])), 1);
    assert_eq!(code(&snspd(dir.path(), &["fit", "quadratic", "x.csv"])), 1);
    assert_eq!(code(&snspd(dir.path(), &["--help"])), 0);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn fit_on_empty_curve_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("e.csv"), "nu12_hz,delta,delta_sem,cycles\n").unwrap();
    let o = snspd(dir.path(), &["fit", "deadtime", "e.csv", "-o", "f.json"]);
    assert_eq!(code(&o), 2);
    assert!(!dir.path().join("f.json").exists());
}

#[test]
fn fit_recovers_dead_time_from_exact_curve() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("nu12_hz,delta,delta_sem,cycles\n");
    for k in 1..=10 {
        let nu = 50e3 * k as f64;
        let x = 30e-9 * nu;
        text.push_str(&format!("{nu:e},{:e},1e-5,60\n", x / (2.0 - x)));
    }
    std::fs::write(dir.path().join("d.csv"), text).unwrap();
    let o = snspd(dir.path(), &["fit", "deadtime", "d.csv", "-o", "f.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let f: serde_json::Value = serde_json::from_str(&read(dir.path(), "f.json")).unwrap();
    let tau = f["fit"]["parameters"][0]["value"].as_f64().unwrap();
    assert!((tau - 30.0).abs() < 1e-6, "{tau}");
    assert!(f["input"]["sha256"].as_str().unwrap().len() == 64);
    assert!(String::from_utf8_lossy(&o.stdout).contains("tau"));
}

#[test]
fn combined_fit_with_fixed_epsilon() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("nu12_hz,delta,delta_sem,cycles\n");
    for k in 1..=8 {
        let nu = 80e3 * k as f64;
        let x = 40e-9 * nu;
        text.push_str(&format!("{nu:e},{:e},1e-5,60\n", x / (2.0 - x)));
    }
    std::fs::write(dir.path().join("d.csv"), text).unwrap();
    let o = snspd(dir.path(), &["fit", "combined", "d.csv", "--fix-epsilon", "-o", "f.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let f: serde_json::Value = serde_json::from_str(&read(dir.path(), "f.json")).unwrap();
    assert!((f["fit"]["parameters"][0]["value"].as_f64().unwrap() - 40.0).abs() < 1e-6);
    assert_eq!(f["fit"]["parameters"][1]["value"].as_f64().unwrap(), 0.0);
    assert_eq!(f["fit"]["parameters"][1]["fixed"], true);
}

#[test]
fn histogram_defaults_and_bin_width() {
    let dir = tempfile::tempdir().unwrap();
    step_dead_time_timestamps(dir.path());
    let o = snspd(dir.path(), &["histogram", "ts.csv", "-o", "one"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = snspd(dir.path(), &["histogram", "ts.csv", "--bin", "2ns", "-o", "two"]);
    assert_eq!(code(&o), 0);

    let one = read(dir.path(), "one_histogram.csv");
    assert!(one.contains("\"bin_width_ns\":1.0"));
    let h1 = rows(&one);
    let h2 = rows(&read(dir.path(), "two_histogram.csv"));
    assert_eq!(h1.len(), 800);
    assert_eq!(h2.len(), 400);
    let total = |h: &[Vec<f64>]| h.iter().map(|r| r[1]).sum::<f64>();
    assert_eq!(total(&h1), total(&h2));

    // Nothing is recorded inside the 30 ns dead time.
    assert!(h1.iter().filter(|r| r[0] < 30.0).all(|r| r[1] == 0.0));
    assert!(h1.iter().filter(|r| (30.0..60.0).contains(&r[0])).any(|r| r[1] > 0.0));

    let norm = read(dir.path(), "one_normalized.csv");
    let n = rows(&norm);
    assert_eq!(n[0][0], 20.5);
    let tail: Vec<f64> = n.iter().filter(|r| r[0] > 780.0).map(|r| r[1]).collect();
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    assert!((mean - 1.0).abs() < 1e-9, "{mean}");
}

#[test]
fn emit_figure_from_simulated_curve() {
    let dir = tempfile::tempdir().unwrap();
    let o = snspd(dir.path(), &["simulate", "--rates", "100k:700k:7", "--photons", "1000000", "-o", "c.csv"]);
    assert_eq!(code(&o), 0);
    let o = snspd(dir.path(), &["emit", "fig2", "sim=c.csv", "-o", "f.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let f: serde_json::Value = serde_json::from_str(&read(dir.path(), "f.json")).unwrap();
    assert_eq!(f["figure"], "fig2");
    assert!(f["series"].as_array().unwrap().iter().any(|s| s["name"] == "sim"));
    let o = snspd(dir.path(), &["emit", "fig6", "c.csv", "--format", "csv", "-o", "f.csv"]);
    assert_eq!(code(&o), 0);
    assert!(read(dir.path(), "f.csv").contains("panel,series,x,y,y_err"));

    assert_eq!(code(&snspd(dir.path(), &["emit", "fig2"])), 2);
    assert_eq!(code(&snspd(dir.path(), &["emit", "fig99", "c.csv"])), 2);
}

#[test]
fn numerical_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("nu12_hz,delta,delta_sem,cycles\n");
    for k in 1..=8 {
        let nu = 80e3 * k as f64;
        let x = 40e-9 * nu;
        text.push_str(&format!("{nu:e},{:e},1e-6,60\n", x / (2.0 - x)));
    }
    std::fs::write(dir.path().join("d.csv"), text).unwrap();
    std::fs::write(dir.path().join("c.toml"), "[fit]\nmax_iterations = 1\n").unwrap();
    let o = snspd(dir.path(), &["--config", "c.toml", "fit", "combined", "d.csv", "-o", "f.json"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("converge"));
    assert!(!dir.path().join("f.json").exists());
}
