use std::path::Path;
use std::process::{Command, Output};

use privlab::config::DEFAULT_CONFIG;

fn privlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_privlab"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn attack_writes_outputs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = privlab(dir.path(), &["attack", "--trace-stride", "10"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = dir.path().join("out");
    for f in ["traces.jsonl", "rounds.jsonl", "complexity.csv", "complexity.json", "manifest.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let traces = read(out.join("traces.jsonl"));
    assert_eq!(traces.lines().count(), 20);
    let first: serde_json::Value = serde_json::from_str(traces.lines().next().unwrap()).unwrap();
    assert_eq!(first["stride"], 10);
    assert_eq!(first["trace"]["per_iter_errors"].as_array().unwrap().len(), 51);

    let manifest: serde_json::Value = serde_json::from_str(&read(out.join("manifest.json"))).unwrap();
    assert_eq!(manifest["command"], "attack");
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["seed_plan"]["replicate_streams"].as_array().unwrap().len(), 20);
    assert_eq!(read(out.join("complexity.csv")).lines().next().unwrap().split(',').count(), 15);
}

#[test]
fn attack_is_deterministic_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let a = privlab(dir.path(), &["attack", "--seed", "11", "--workers", "1", "--out", "a"]);
    let b = privlab(dir.path(), &["attack", "--seed", "11", "--workers", "3", "--out", "b"]);
    let c = privlab(dir.path(), &["attack", "--seed", "12", "--out", "c"]);
    assert!(a.status.success() && b.status.success() && c.status.success());
    for f in ["traces.jsonl", "rounds.jsonl", "complexity.csv", "complexity.json"] {
        let x = std::fs::read(dir.path().join("a").join(f)).unwrap();
        assert_eq!(x, std::fs::read(dir.path().join("b").join(f)).unwrap(), "{f} differs");
    }
    let x = std::fs::read(dir.path().join("a/traces.jsonl")).unwrap();
    assert_ne!(x, std::fs::read(dir.path().join("c/traces.jsonl")).unwrap());
}

#[test]
fn bounds_without_estimates_is_an_actionable_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = privlab(dir.path(), &["bounds"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("privlab attack"), "{}", stderr(&o));
    assert!(!dir.path().join("out/bounds.csv").exists());
}

#[test]
fn bounds_and_sweep_read_attack_estimates() {
    let dir = tempfile::tempdir().unwrap();
    assert!(privlab(dir.path(), &["attack"]).status.success());
    let o = privlab(dir.path(), &["bounds"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = read(dir.path().join("out/bounds.csv"));
    assert_eq!(csv.lines().next().unwrap().split(',').count(), 21);
    assert!(csv.lines().any(|l| l.starts_with("protection_lower,6,1,")));
    // estimates survive the JSON round trip bit for bit
    let complexity = read(dir.path().join("out/complexity.csv"));
    let measured: Vec<&str> = complexity.lines().nth(1).unwrap().split(',').collect();
    let bound: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(bound[6], measured[2], "epsilon_p");
    assert_eq!(bound[9], measured[9], "c_a");

    let text = format!("{DEFAULT_CONFIG}\n").replace("epsilon = 1.0\n", "epsilon = 1.0\np = 0.5\n");
    let cfg = write_config(dir.path(), "sweep.toml", &text);
    let o = privlab(dir.path(), &["sweep", "--config", &cfg]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let sweep = read(dir.path().join("out/sweep.csv"));
    assert_eq!(sweep.lines().count(), 1 + 5 * 3 * 2);
    assert_eq!(sweep.lines().next().unwrap(), "rank,mechanism,m,epsilon,protection_rate,attack_t_lower,pruned");
}

#[test]
fn bounds_fixture_renders_values_and_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let text = DEFAULT_CONFIG.replace(
        "estimates = \"out/complexity.json\"\nepsilon = 1.0",
        "m = 4\nepsilon = 1.0\ntau = 1.0\nepsilon_p = 1.0\ndataset_size = 1000000\ngamma = 0.5\n\
         c_a = 1.0\nc_b = 1.0\nc2 = 1.0\np = 0.5\ndelta_k = 2.0",
    );
    let cfg = write_config(dir.path(), "b.toml", &text);
    let o = privlab(dir.path(), &["bounds", "--config", &cfg]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = read(dir.path().join("out/bounds.csv"));
    let row = |id: &str| -> Vec<String> {
        csv.lines()
            .find(|l| l.starts_with(&format!("{id},")))
            .unwrap_or_else(|| panic!("{id} missing:\n{csv}"))
            .split(',')
            .map(String::from)
            .collect()
    };
    let h = (4f64.ln() / 2e6).sqrt();
    let upper: f64 = row("attack_upper")[16].parse().unwrap();
    assert!((upper - (1.0 / (2.0 - h)).powi(2)).abs() < 1e-12);
    assert_eq!(row("attack_lower")[16], "infeasible");
    assert_eq!(row("attack_lower")[17], "false");
    assert_eq!(row("protection_order")[16], "4");
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.toml", &DEFAULT_CONFIG.replace("[attack]", "[attack]\nstep = 1.0"));
    let o = privlab(dir.path(), &["attack", "--config", &bad]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("step"), "{}", stderr(&o));
    assert!(!dir.path().join("out").exists());

    assert_eq!(code(&privlab(dir.path(), &["validate", "--only", "nonsense"])), 2);
    assert_eq!(code(&privlab(dir.path(), &["attack", "--workers", "0"])), 2);
    let missing = privlab(dir.path(), &["attack", "--config", "nope.toml"]);
    assert_eq!(code(&missing), 2);
}

#[test]
fn validate_subset_and_failing_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let o = privlab(dir.path(), &["validate", "--only", "conversions,bound_calculators"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("[PASS]")).count(), 2);
    let csv = read(dir.path().join("out/validation.csv"));
    assert_eq!(csv.lines().count(), 3);

    let strict = write_config(
        dir.path(),
        "strict.toml",
        &format!("{DEFAULT_CONFIG}\n[validate]\nmc_rel_tol = 0.0\n"),
    );
    let o = privlab(dir.path(), &["validate", "--config", &strict, "--only", "protection_mc", "--out", "strict"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("[FAIL]"));
    assert!(read(dir.path().join("strict/validation.csv")).contains("protection_mc,false"));
}

#[test]
fn estimate_mbp_writes_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let o = privlab(dir.path(), &["estimate-mbp", "--workers", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let est: serde_json::Value = serde_json::from_str(&read(dir.path().join("out/mbp.json"))).unwrap();
    assert!(est["epsilon_hat"].as_f64().unwrap() >= 0.0);
    assert_eq!(est["t_sim"], 200);
}
