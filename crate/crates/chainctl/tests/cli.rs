use serde_json::{json, Value};
use std::path::Path;
use std::process::{Command, Output};

fn chainctl(args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_chainctl"));
    cmd.args(args).env_remove("CHAINCTL_SEED");
    if let Some(s) = seed {
        cmd.env("CHAINCTL_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn short_chain() -> Value {
    json!({ "n_channel": 5, "couplings": [1.0, 1.0, 1.0, 1.0], "boundary_couplings": [1.0, 1.0] })
}

fn noise_config(out: &Path) -> Value {
    json!({
        "experiment": "fig4_noise_robustness",
        "chain": short_chain(),
        "pulses": [{ "kind": "power_sine", "p": 0, "alpha_M": 0.5 }],
        "sweep": { "variable": "eps_J", "start": 0.05, "stop": 0.2, "points": 3, "scale": "log" },
        "noise": { "kind": "piecewise", "tau_c": 1.0, "strength": 0.0 },
        "n_realizations": 16,
        "master_seed": 5,
        "output_dir": out,
    })
}

fn write_config(dir: &Path, name: &str, v: &Value) -> String {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(v).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn noisy_run_writes_table_and_manifest_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("a");
    let cfg = write_config(tmp.path(), "noise.json", &noise_config(&out));

    let first = chainctl(&["run", &cfg], None);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let table = std::fs::read(out.join("fig4.csv")).unwrap();
    let m = manifest(&out);
    assert_eq!(m["experiment"], "fig4_noise_robustness");
    assert_eq!(m["seeds"]["master_seed"], 5);
    assert_eq!(m["outputs"], json!(["fig4.csv"]));
    assert!(m["config"]["n_realizations"] == 16);

    let text = String::from_utf8(table.clone()).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "pulse,noise_kind,tau_c,eps_J,mean_infidelity,std_error");
    assert_eq!(lines.count(), 3);

    // the manifest's resolved config reproduces the table byte for byte
    let again = tmp.path().join("b");
    let mut resolved = m["config"].clone();
    resolved["output_dir"] = json!(again);
    let cfg2 = write_config(tmp.path(), "resolved.json", &resolved);
    let second = chainctl(&["run", &cfg2], None);
    assert!(second.status.success());
    assert_eq!(std::fs::read(again.join("fig4.csv")).unwrap(), table);
}

#[test]
fn seed_variable_overrides_config_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("s");
    let cfg = write_config(tmp.path(), "noise.json", &noise_config(&out));
    let base = tmp.path().join("base");
    assert!(chainctl(&["run", &cfg, "--out", base.to_str().unwrap()], None).status.success());
    assert!(chainctl(&["run", &cfg], Some("99")).status.success());
    assert_eq!(manifest(&out)["seeds"]["master_seed"], 99);
    assert_ne!(
        std::fs::read(out.join("fig4.csv")).unwrap(),
        std::fs::read(base.join("fig4.csv")).unwrap()
    );

    let bad = chainctl(&["run", &cfg], Some("not-a-number"));
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn validate_and_dry_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "ok.json", &noise_config(&tmp.path().join("x")));
    let ok = chainctl(&["validate", &cfg], None);
    assert!(ok.status.success());
    assert!(String::from_utf8_lossy(&ok.stdout).contains("fig4_noise_robustness"));
    assert!(!tmp.path().join("x").exists());

    let dry = chainctl(&["preset", "fig3b", "--n", "9", "--seed", "3", "--dry-run"], None);
    assert!(dry.status.success());
    let v: Value = serde_json::from_slice(&dry.stdout).unwrap();
    assert_eq!(v["experiment"], "fig3b_alpha_sweep");
    assert_eq!(v["chain"]["n_channel"], 9);
    assert_eq!(v["master_seed"], 3);
}

#[test]
fn config_problems_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = noise_config(&tmp.path().join("x"));
    v["dt"] = json!(0.5);
    let cfg = write_config(tmp.path(), "dt.json", &v);
    assert_eq!(chainctl(&["run", &cfg], None).status.code(), Some(2));

    let mut v = noise_config(&tmp.path().join("x"));
    v["unknown_field"] = json!(1);
    let cfg = write_config(tmp.path(), "unknown.json", &v);
    assert_eq!(chainctl(&["validate", &cfg], None).status.code(), Some(2));

    assert_eq!(chainctl(&["preset", "fig9"], None).status.code(), Some(2));
    let missing = tmp.path().join("missing.json");
    assert_eq!(chainctl(&["run", missing.to_str().unwrap()], None).status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let v = json!({
        "experiment": "fig5_markov_optimal",
        "chain": short_chain(),
        "pulses": [{ "kind": "markov_optimal", "lambda": 1.0e6 }],
        "sweep": { "variable": "T", "start": 50.0, "stop": 60.0, "points": 2, "scale": "linear" },
        "output_dir": tmp.path().join("x"),
    });
    let cfg = write_config(tmp.path(), "lambda.json", &v);
    let out = chainctl(&["run", &cfg], None);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda is infeasible"));
}

#[test]
fn semicircle_preset_runs_on_a_short_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("fig2");
    let run = chainctl(&["preset", "fig2", "--n", "9", "--out", out.to_str().unwrap()], None);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let text = std::fs::read_to_string(out.join("fig2.csv")).unwrap();
    assert!(text.starts_with("T,infidelity_p0,infidelity_p1,infidelity_p2"));
    assert_eq!(text.lines().count(), 31);
}
