use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

use osl_cli::config::ExperimentConfig;
use osl_core::grid::{Field, Grid, Obstacle};
use osl_core::C64;
use proptest::prelude::*;

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("osl_cli_test_{}_{name}", std::process::id()));
    let _ = fs::remove_dir_all(&d);
    fs::create_dir_all(&d).unwrap();
    d
}

fn osl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_osl")).args(args).env("OSL_THREADS", "1").output().unwrap()
}

fn summary(dir: &PathBuf) -> serde_json::Value {
    serde_json::from_slice(&fs::read(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn ground_state_defaults_succeed() {
    let d = scratch("gs");
    let o = osl(&["ground-state", "--out", d.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(&d);
    assert!(s["q0"].as_f64().unwrap() > 0.0);
    let csv = fs::read_to_string(d.join("ground_state.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), format!("# config_hash = {}", s["config_hash"].as_str().unwrap()));
    assert_eq!(lines.next().unwrap(), "r,Q,dQ");
}

#[test]
fn unknown_key_exits_2_with_its_name() {
    let d = scratch("bad");
    let o = osl(&["ground-state", "--out", d.to_str().unwrap(), "omgea=2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("omgea"));
    let cfg = d.join("run.cfg");
    fs::write(&cfg, "p = 3\nwidth = 4\n").unwrap();
    let o = osl(&["ground-state", "--out", d.to_str().unwrap(), "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("width"));
}

#[test]
fn precondition_and_numerical_failures_map_to_exit_codes() {
    let d = scratch("codes");
    let out = d.to_str().unwrap();
    assert_eq!(osl(&["ground-state", "--out", out, "p=1"]).status.code(), Some(2));
    assert_eq!(osl(&["functionals", "--out", out, "--in", "/nonexistent/field.bin"]).status.code(), Some(2));
    let g = Grid::new(1, 10.0, 511, Obstacle::None).unwrap();
    let big = Field::from_fn(&g, |x| C64::new(3.0 * (-x[0] * x[0]).exp(), 0.0));
    let path = d.join("big.bin");
    big.write_to(&mut fs::File::create(&path).unwrap(), None).unwrap();
    let o = osl(&["evolve", "--out", out, "--in", path.to_str().unwrap(), "p=7", "dt=1e-4", "t0=0", "t1=1", "blowup_factor=20"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn reruns_are_byte_identical() {
    let a = scratch("rerun_a");
    let b = scratch("rerun_b");
    for d in [&a, &b] {
        let o = osl(&["spectrum", "--out", d.to_str().unwrap(), "mode_n=1023"]);
        assert_eq!(o.status.code(), Some(0));
    }
    assert_eq!(fs::read(a.join("summary.json")).unwrap(), fs::read(b.join("summary.json")).unwrap());
    assert_eq!(fs::read(a.join("y_plus.bin")).unwrap(), fs::read(b.join("y_plus.bin")).unwrap());
}

#[test]
fn functionals_of_a_written_field() {
    let d = scratch("fn");
    let out = d.to_str().unwrap();
    let o = osl(&["evolve", "--out", out, "t0=8", "t1=8.1", "dt=0.005", "h=0.04", "snapshot_every=10"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let log = fs::read_to_string(d.join("trajectory/conservation.csv")).unwrap();
    let row0: Vec<f64> = log.lines().nth(2).unwrap().split(',').map(|s| s.parse().unwrap()).collect();
    let snap = d.join("trajectory/snap_00000.bin");
    let fd = scratch("fn_out");
    let o = osl(&["functionals", "--out", fd.to_str().unwrap(), "--in", snap.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let s = summary(&fd);
    // complex64 storage
    assert!((s["M"].as_f64().unwrap() / row0[1] - 1.0).abs() < 1e-6);
    assert!((s["lyapunov"].as_f64().unwrap() / row0[3] - 1.0).abs() < 1e-6);
    assert!((s["s"].as_f64().unwrap() - 7.0 / 6.0).abs() < 1e-15);
}

#[test]
fn sweep_keeps_failed_runs() {
    let d = scratch("sweep");
    let o = osl(&["sweep", "--out", d.to_str().unwrap(), "sweep_command=ground-state", "sweep_key=p", "sweep_values=3,1,7"]);
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(d.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("# config_hash = "));
    let header: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(&header[..3], &["run", "value", "status"]);
    assert_eq!(lines.len(), 5);
    assert!(lines[2].contains(",ok,"));
    assert!(lines[3].contains(",precondition,"));
    let q0 = header.iter().position(|h| *h == "q0").unwrap();
    assert!(lines[3].split(',').nth(q0).unwrap().is_empty());
}

#[test]
fn single_point_sweep_matches_a_run() {
    let d = scratch("sweep1");
    let g = scratch("sweep1_gs");
    osl(&["sweep", "--out", d.to_str().unwrap(), "sweep_command=ground-state", "sweep_key=p", "sweep_values=3"]);
    osl(&["ground-state", "--out", g.to_str().unwrap(), "p=3"]);
    let run = serde_json::from_slice::<serde_json::Value>(&fs::read(d.join("run_000/summary.json")).unwrap()).unwrap();
    assert_eq!(run["q0"], summary(&g)["q0"]);
}

#[test]
fn config_text_round_trips() {
    let mut c = ExperimentConfig::default();
    c.apply_args(&["p=3.5".into(), "--v".into(), "2,0.5".into(), "Tmax=4.25".into(), "cutoff=septic".into()]).unwrap();
    assert_eq!(c.v, vec![2.0, 0.5]);
    assert_eq!(ExperimentConfig::parse(&c.to_text()).unwrap(), c);
    assert_eq!(ExperimentConfig::parse(&c.to_text()).unwrap().hash(), c.hash());
    assert_ne!(ExperimentConfig::default().hash(), c.hash());
}

proptest! {
    #[test]
    fn arbitrary_numeric_configs_round_trip(p in 1.01f64..9.0, omega in 0.01f64..10.0, h in 1e-4f64..1.0, seed in any::<u64>(), m in proptest::option::of(1e-3f64..1e6)) {
        let c = ExperimentConfig { p, omega, h, seed, m, ..ExperimentConfig::default() };
        prop_assert_eq!(ExperimentConfig::parse(&c.to_text()).unwrap(), c);
    }
}
