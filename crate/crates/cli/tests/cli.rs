use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bbpim_cli::Report;

const SMALL: &str = "layouts = [\"one-xb\"]\n\
                     queries = [\"Q1.1\", \"Q2.3\"]\n\
                     [workload]\nscale_factor = 0.001\n\
                     [calibration]\npages = [1, 2, 4]\nratios = [0.001, 0.01, 0.1, 0.5]\n";

fn bbpim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bbpim"))
        .args(args)
        .current_dir(dir)
        .env_remove("BBPIM_OUT_DIR")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = bbpim(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn full_pipeline_with_events() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("run.toml"), SMALL).unwrap();
    let gen = ok(d, &["generate", "--config", "run.toml"]);
    assert!(gen.contains("Q4.3"));
    assert!(d.join("bbpim-out/dataset/queries/Q1.1.qry").exists());
    ok(d, &["calibrate", "--config", "run.toml"]);
    ok(d, &["run", "--config", "run.toml", "--events"]);
    ok(d, &["report", "--config", "run.toml"]);

    let rep = Report::read(&d.join("bbpim-out/report.json")).unwrap();
    assert_eq!(rep.rows.len(), 2 * 4);
    assert_eq!(rep.geomean.len(), 4);
    for name in ["latency_s", "energy_j", "peak_power_w", "endurance_10y"] {
        let csv = fs::read_to_string(d.join(format!("bbpim-out/tables/{name}.csv"))).unwrap();
        assert_eq!(csv.lines().count(), 1 + 2 + 1, "{name}");
    }

    // The event log re-sums to the reported energy.
    for row in &rep.rows {
        let path = d.join(format!("bbpim-out/events/{}_{}_{}.csv", row.layout, row.mode, row.query));
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("kind,start_ns,duration_ns,scope,count,energy_j"));
        let total: f64 = lines.map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap()).sum();
        assert!((total - row.energy_j).abs() <= 1e-9 * row.energy_j, "{}: {total} vs {}", path.display(), row.energy_j);
    }
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("run.toml"), SMALL).unwrap();
    ok(d, &["generate", "--config", "run.toml", "--out-dir", "alt", "--seed", "9"]);
    ok(d, &["run", "--config", "run.toml", "--out-dir", "alt", "--seed", "9", "--mode", "host-only", "--query", "Q2.3"]);
    let rep = Report::read(&d.join("alt/report.json")).unwrap();
    assert_eq!(rep.rows.len(), 1);
    assert_eq!(rep.rows[0].mode, "host-only");
    assert_eq!(rep.config.seed, 9);
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for args in [
        vec!["frobnicate"],
        vec!["run", "--set", "no_such_key=1"],
        vec!["run", "--mode", "fastest"],
        vec!["run"],
        vec!["report"],
        vec!["generate", "--scale-factor", "-2"],
        vec!["run", "--config", "missing.toml"],
    ] {
        let out = bbpim(d, &args);
        assert_eq!(out.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn hybrid_without_models_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("run.toml"), SMALL).unwrap();
    ok(d, &["generate", "--config", "run.toml"]);
    let out = bbpim(d, &["run", "--config", "run.toml", "--mode", "hybrid"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("calibrate"));
    ok(d, &["run", "--config", "run.toml", "--mode", "pim-only"]);
}

#[test]
fn help_and_version_exit_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let help = ok(dir.path(), &["--help"]);
    assert!(help.contains("BBPIM_OUT_DIR"));
    assert!(ok(dir.path(), &["run", "--help"]).contains("--events"));
    assert!(ok(dir.path(), &["--version"]).starts_with("bbpim "));
}

#[test]
fn out_dir_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("run.toml"), SMALL).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_bbpim"))
        .args(["generate", "--config", "run.toml"])
        .current_dir(d)
        .env("BBPIM_OUT_DIR", "from-env")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(d.join("from-env/dataset/queries/Q2.3.qry").exists());
}
