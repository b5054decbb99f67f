use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn chainfeed(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chainfeed"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

const SHORT_DECAY: &str =
    "n_sites = 3\ncoupling_j = 0.1\ndecay_gamma = 0.24\ndt = 0.04\nn_steps = 200\n";

#[test]
fn evolve_writes_manifest_and_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "a.toml", SHORT_DECAY);
    let out = tmp.path().join("run");
    let o = chainfeed(&["evolve", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["mode"], "evolve");
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["deterministic"], true);
    for name in manifest["outputs"].as_array().unwrap() {
        assert!(out.join(name.as_str().unwrap()).exists(), "{name}");
    }
    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(
        csv.starts_with("t,n1,n2,n3,detector_inc,detector_cum,chain_total,norm_deficit,max_bond\n")
    );
    assert_eq!(csv.lines().count(), 201);
}

#[test]
fn rerun_reproduces_data_files_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "a.toml", SHORT_DECAY);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        assert_eq!(
            code(&chainfeed(&[
                "evolve",
                "--config",
                &cfg,
                "--out",
                dir.to_str().unwrap(),
                "--pattern",
                "1,3"
            ])),
            0
        );
    }
    for name in ["trajectory.csv", "verdict.json", "summary.json"] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn zero_decay_is_constant_trapped() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "a.toml",
        "n_sites = 2\ncoupling_j = 0.0\ndecay_gamma = 0.0\ndt = 0.1\nn_steps = 100\n",
    );
    let out = tmp.path().join("run");
    let o = chainfeed(&["evolve", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let verdict: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("verdict.json")).unwrap()).unwrap();
    assert_eq!(verdict["class"], "constant_trapped");
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["detector_signal_final"].as_f64().unwrap(), 0.0);
}

#[test]
fn bad_config_exits_2_with_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "a.toml",
        "n_sites = 2\ncoupling_j = 0.1\ndecay_gamma = 0.24\ndt = 0.04\nn_steps = 10\nbin_dim = 1\n",
    );
    let o = chainfeed(&[
        "evolve",
        "--config",
        &cfg,
        "--out",
        tmp.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
    assert!(
        String::from_utf8_lossy(&o.stderr).contains("line 6"),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );

    let cfg = write_config(tmp.path(), "b.toml", "n_sites = 2\nmystery = 3\n");
    let o = chainfeed(&[
        "evolve",
        "--config",
        &cfg,
        "--out",
        tmp.path().join("y").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn capacity_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "a.toml",
        "n_sites = 9\ncoupling_j = 0.1\ndecay_gamma = 0.24\ndt = 0.04\nn_steps = 5\n",
    );
    let o = chainfeed(&[
        "benchmark",
        "--config",
        &cfg,
        "--out",
        tmp.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3);

    // exact mode with a bond cap below the Schmidt rank
    let cfg = write_config(
        tmp.path(),
        "b.toml",
        "n_sites = 4\ncoupling_j = 0.3\ndecay_gamma = 0.24\ndt = 0.1\nn_steps = 40\nsvd_cutoff = 0.0\nmax_bond = 1\n",
    );
    let o = chainfeed(&[
        "evolve",
        "--config",
        &cfg,
        "--out",
        tmp.path().join("y").to_str().unwrap(),
        "--pattern",
        "1,2",
    ]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn benchmark_gate_controls_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "a.toml", SHORT_DECAY);
    let out = tmp.path().join("ok");
    let o = chainfeed(&[
        "benchmark",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("benchmark.json")).unwrap()).unwrap();
    assert_eq!(report["arm"], "lindblad");
    assert!(report["max_deviation"].as_f64().unwrap() <= 1e-3);
    assert!(out.join("oracle.csv").exists() && out.join("mps.csv").exists());

    let out = tmp.path().join("strict");
    let o = chainfeed(&[
        "benchmark",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--gate",
        "1e-12",
    ]);
    assert_eq!(code(&o), 4);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "gate_failed");
}

#[test]
fn delay_benchmark_over_phases() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "a.toml",
        "n_sites = 1\ncoupling_j = 0.0\ndecay_gamma = 0.24\nfeedback_enabled = true\ndelay_tau = 1.0\ndt = 0.04\nn_steps = 300\n",
    );
    let out = tmp.path().join("run");
    let o = chainfeed(&[
        "benchmark",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--pattern",
        "1",
        "--phi-count",
        "4",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("benchmark.json")).unwrap()).unwrap();
    assert_eq!(report["arm"], "delay");
    assert_eq!(report["per_phase"].as_array().unwrap().len(), 4);

    // feedback with more than one site has no oracle
    let cfg = write_config(
        tmp.path(),
        "b.toml",
        "n_sites = 2\ncoupling_j = 0.1\ndecay_gamma = 0.24\nfeedback_enabled = true\ndelay_tau = 1.0\ndt = 0.04\nn_steps = 30\n",
    );
    let o = chainfeed(&[
        "oracle",
        "--config",
        &cfg,
        "--out",
        tmp.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn oracle_mode_writes_densities() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "a.toml", SHORT_DECAY);
    let out = tmp.path().join("run");
    assert_eq!(
        code(&chainfeed(&[
            "oracle",
            "--config",
            &cfg,
            "--out",
            out.to_str().unwrap()
        ])),
        0
    );
    let csv = fs::read_to_string(out.join("oracle.csv")).unwrap();
    assert!(csv.starts_with("t,n1,n2,n3\n"));
    assert_eq!(csv.lines().count(), 201);
}

#[test]
fn scan_writes_map_and_sidecar() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "a.toml",
        "n_sites = 1\ncoupling_j = 0.0\ndecay_gamma = 0.24\nfeedback_enabled = true\ndelay_tau = 2.0\ndt = 0.25\nn_steps = 1\n",
    );
    let out = tmp.path().join("run");
    let o = chainfeed(&[
        "scan",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--taus",
        "1.0,2.0",
        "--phi-count",
        "8",
        "--workers",
        "2",
        "--horizon",
        "40",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("map.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 16);
    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("map.json")).unwrap()).unwrap();
    let counts = sidecar["trapping_counts"].as_array().unwrap();
    assert_eq!(counts.len(), 2);
    for c in counts {
        assert_eq!(c[1], 1, "single emitter traps at one phase");
    }
    assert!(String::from_utf8_lossy(&o.stdout).contains("trapping phases 1"));

    // delay off the time grid is a config error
    let o = chainfeed(&[
        "scan",
        "--config",
        &cfg,
        "--out",
        tmp.path().join("x").to_str().unwrap(),
        "--taus",
        "1.1",
    ]);
    assert_eq!(code(&o), 2);
}
