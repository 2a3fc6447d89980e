use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ris-uplink"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.cfg");
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

const SMALL: &str = "n_x = 2\nn_y = 2\nouter_max_iters = 3\nrcg_max_iters = 30\n";

#[test]
fn sweep_writes_three_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("{SMALL}variable = \"rate_min\"\nvalues = [0.3]\nmethods = [\"random_phase_mrt\"]\n"),
    );
    let out = dir.path().join("out");
    let o = run(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--realizations", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let data = fs::read_to_string(out.join("data.csv")).unwrap();
    assert_eq!(data.lines().count(), 2);
    assert!(data.starts_with("method,variable,value,realization,seed,channel_hash,total_power_w"));
    assert!(out.join("summary.csv").exists());
    let meta = fs::read_to_string(out.join("meta.txt")).unwrap();
    assert!(meta.contains("seed = 1") && meta.contains("wall_time_s"));
}

#[test]
fn sweep_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("{SMALL}variable = \"n_elements\"\nvalues = [4, 9]\nmethods = [\"rcg_jo\", \"no_ris\"]\n"),
    );
    let mut outputs = Vec::new();
    for (name, jobs) in [("a", "1"), ("b", "2")] {
        let out = dir.path().join(name);
        let o = run(&[
            "sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--realizations", "2", "--seed", "7", "--jobs", jobs,
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(fs::read(out.join("data.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    let typo = write_config(dir.path(), "n_elemnts = 16\n");
    assert_eq!(run(&["sweep", "--config", &typo, "--out", out]).status.code(), Some(1));
    assert_eq!(run(&["sweep", "--config", "/nonexistent/x.cfg", "--out", out]).status.code(), Some(1));
    assert_eq!(run(&["sweep", "--realizations", "0", "--out", out]).status.code(), Some(1));
    assert_eq!(run(&["sweep", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    // A regular file where the output directory should go.
    let blocker = dir.path().join("blocker");
    fs::write(&blocker, "").unwrap();
    let out = blocker.join("out");
    let o = run(&["complexity", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn complexity_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "k_devices = 1\n");
    let out = dir.path().join("out");
    let o = run(&["complexity", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let data = fs::read_to_string(out.join("data.csv")).unwrap();
    assert!(data.contains("rcg_jo,1,4,4,145\n"));
    assert!(data.contains("sdr,1,4,4,8256\n"));
}

#[test]
fn solve_one_estimate_and_convergence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}sample_fraction = 1.0\n"));
    for cmd in ["solve-one", "estimate-csi", "convergence"] {
        let out = dir.path().join(cmd);
        let o = run(&[cmd, "--config", &cfg, "--out", out.to_str().unwrap(), "--realizations", "2"]);
        assert_eq!(o.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        for f in ["data.csv", "summary.csv", "meta.txt"] {
            assert!(out.join(f).exists(), "{cmd} {f}");
        }
    }
    let est = fs::read_to_string(dir.path().join("estimate-csi/data.csv")).unwrap();
    let row: Vec<&str> = est.lines().nth(1).unwrap().split(',').collect();
    assert!(row[3].parse::<f64>().unwrap() < 1e-5);
    let conv = fs::read_to_string(dir.path().join("convergence/summary.csv")).unwrap();
    assert!(conv.starts_with("loop,iterations,fraction_le"));
}
