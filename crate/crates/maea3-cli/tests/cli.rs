use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maea3")).args(args).output().unwrap()
}

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/fixture.toml")
}

fn variant(dir: &Path, name: &str, edit: impl Fn(String) -> String) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, edit(std::fs::read_to_string(fixture()).unwrap())).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_trace_models_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r");
    let o = bin(&["run", "--config", s(&fixture()), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.lines().count() > 5 + 1);
    for f in ["agent1.toml", "agent2.toml", "fused.toml"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let summary = std::fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("stop_reason: criterion"), "{summary}");
    assert!(summary.contains("final_stop_metric:"));
}

#[test]
fn zero_epsilon_stops_on_budget() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = variant(tmp.path(), "e0.toml", |t| t.replace("epsilon = 1e-4", "epsilon = 0.0").replace("max_iterations = 500", "max_iterations = 12"));
    let o = bin(&["run", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("stop_reason: budget") && text.contains("iterations: 12"), "{text}");
}

#[test]
fn snapshots_written_at_stride() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = variant(tmp.path(), "snap.toml", |t| {
        t.replace("max_iterations = 500", "max_iterations = 10\nsnapshot_stride = 5").replace("bound_check = true", "bound_check = false")
    });
    let out = tmp.path().join("o");
    assert_eq!(bin(&["run", "--config", s(&cfg), "--out", s(&out)]).status.code(), Some(0));
    let mut names: Vec<String> = std::fs::read_dir(out.join("snapshots")).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["n000005_agent1.toml", "n000005_agent2.toml", "n000010_agent1.toml", "n000010_agent2.toml"]);
}

#[test]
fn unknown_key_is_a_usage_error_naming_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = variant(tmp.path(), "bad.toml", |t| t.replace("k_max = 5", "k_maxx = 5"));
    let o = bin(&["run", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("k_maxx") && err.contains("line"), "{err}");
}

#[test]
fn missing_config_is_a_usage_error() {
    assert_eq!(bin(&["diagnose", "--config", "/nonexistent/cfg.toml"]).status.code(), Some(2));
}

#[test]
fn short_horizon_rejected() {
    let o = bin(&["validate", "--config", s(&fixture()), "--horizon", "5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("horizon too short"));
}

#[test]
fn sweep_rows_and_unknown_operator() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("s");
    let o = bin(&["norm-sweep", "--config", s(&fixture()), "--operator", "agent2", "--decades", "4", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(out.join("sweep_agent2.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 5);
    assert!(csv.starts_with("rho,estimate,samples,limit_gap\n"));
    assert_eq!(bin(&["norm-sweep", "--config", s(&fixture()), "--operator", "agent3"]).status.code(), Some(2));
}

#[test]
fn diagnose_reports_each_section() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bin(&["diagnose", "--config", s(&fixture()), "--out", s(&tmp.path().join("d"))]);
    let text = String::from_utf8_lossy(&o.stdout).to_string();
    for sec in ["[perturbation] pass", "[uniform] pass", "[bound] pass"] {
        assert!(text.contains(sec), "{text}");
    }
    // the exit code follows the spectral section, the only one that can fail here
    let spectral_ok = text.contains("[spectral] pass");
    assert_eq!(o.status.code(), Some(if spectral_ok { 0 } else { 1 }));
    assert!(tmp.path().join("d/diagnose.txt").exists());
}

#[test]
fn unnormalized_kernel_reports_required_scale() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = variant(tmp.path(), "raw.toml", |t| t.replace("[algorithm]", "[selection]\nnormalize = false\n\n[algorithm]"));
    let o = bin(&["diagnose", "--config", s(&cfg), "--out", s(&tmp.path().join("d"))]);
    let text = String::from_utf8_lossy(&o.stdout);
    let line = text.lines().find(|l| l.starts_with("required kernel_scale:")).unwrap_or_else(|| panic!("{text}"));
    let v: f64 = line.split(':').nth(1).unwrap().trim().parse().unwrap();
    // same selection as the normalized fixture, so the scales agree
    let fx = String::from_utf8_lossy(&bin(&["diagnose", "--config", s(&fixture()), "--out", s(&tmp.path().join("f"))]).stdout).to_string();
    let scale: f64 = fx.lines().find(|l| l.starts_with("kernel_scale =")).unwrap().split('=').nth(1).unwrap().trim().parse().unwrap();
    assert!((v - scale).abs() <= 1e-12 * scale, "{v} vs {scale}");
}

#[test]
fn seed_override_changes_data() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |seed: &str, d: &str| {
        let out = tmp.path().join(d);
        let cfg = variant(tmp.path(), "short.toml", |t| t.replace("max_iterations = 500", "max_iterations = 8"));
        assert_eq!(bin(&["run", "--config", s(&cfg), "--seed", seed, "--out", s(&out)]).status.code(), Some(0));
        std::fs::read(out.join("trace.csv")).unwrap()
    };
    assert_eq!(run("3", "a"), run("3", "b"));
    assert_ne!(run("3", "c"), run("4", "d"));
}
