use std::fs;
use std::path::Path;
use std::process::Command;

use fpt_core::cli::{run, EXIT_CONFIG, EXIT_OK};
use fpt_core::clock::VolatilityClock;
use fpt_core::level_hitting::LevelHittingLaw;
use tempfile::TempDir;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn fpt(args: &[&str]) -> i32 {
    run(std::iter::once("fpt").chain(args.iter().copied()))
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn malformed_config_exits_2_without_output() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out.csv");
    for (i, text) in ["[grid]\nn = 'ten'\n", "unknown = 1\n", "[boundary]\nkind = \"linear\"\ncoefficients = [1.0]\n"]
        .iter()
        .enumerate()
    {
        let cfg = write(dir.path(), &format!("bad{i}.toml"), text);
        assert_eq!(fpt(&["density", "--config", &cfg, "--output", out.to_str().unwrap()]), EXIT_CONFIG);
        assert!(!out.exists());
    }
    assert_eq!(fpt(&["density", "--config", "/nonexistent/cfg.toml"]), EXIT_CONFIG);
}

#[test]
fn constant_boundary_density_is_the_level_density() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "[clock]\nkind = \"exponential\"\nlambda = 0.5\n[grid]\ns_min = 0.1\ns_max = 2.0\nn = 8\nspacing = \"log\"\n",
    );
    let out = dir.path().join("d.csv");
    assert_eq!(fpt(&["density", "--config", &cfg, "--output", out.to_str().unwrap()]), EXIT_OK);
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("s,density,cdf,warnings\n"));
    let law = LevelHittingLaw::new(VolatilityClock::exponential(0.5).unwrap(), 1.0).unwrap();
    for r in rows(&out) {
        let s: f64 = r[0].parse().unwrap();
        let d: f64 = r[1].parse().unwrap();
        assert!((d - law.level_density(s).unwrap()).abs() < 1e-12);
    }
    let meta = fs::read_to_string(dir.path().join("d.csv.meta.json")).unwrap();
    assert!(meta.contains("\"exponential\""));
}

#[test]
fn linear_boundary_density_is_bachelier_levy() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "l.toml",
        "[boundary]\nkind = \"linear\"\ncoefficients = [1.0, 1.0]\n[grid]\ns_min = 0.25\ns_max = 2.0\nn = 8\n",
    );
    let out = dir.path().join("d.csv");
    assert_eq!(fpt(&["density", "--config", &cfg, "--output", out.to_str().unwrap()]), EXIT_OK);
    for r in rows(&out) {
        let s: f64 = r[0].parse().unwrap();
        let d: f64 = r[1].parse().unwrap();
        let want = (2.0 * std::f64::consts::PI * s.powi(3)).sqrt().recip() * (-(1.0 + s).powi(2) / (2.0 * s)).exp();
        assert!((d - want).abs() < 1e-6 * want);
        // 17 significant digits round-trip.
        assert_eq!(format!("{d:.16e}"), r[1]);
    }
}

#[test]
fn image_kernel_dump_is_symmetric() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "k.toml", "[kernel]\nname = \"image\"\nnx = 5\nny = 5\nx_min = 0.2\nx_max = 1.8\ny_min = 0.2\ny_max = 1.8\n");
    let out = dir.path().join("k.csv");
    assert_eq!(fpt(&["kernel", "--config", &cfg, "--output", out.to_str().unwrap()]), EXIT_OK);
    let vals: Vec<f64> = rows(&out).iter().map(|r| r[2].parse().unwrap()).collect();
    for i in 0..5 {
        for j in 0..5 {
            assert!((vals[5 * i + j] - vals[5 * j + i]).abs() <= 1e-15 * vals[5 * i + j]);
        }
    }
}

#[test]
fn gauge_dump_without_potential_is_zero() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "g.toml", "[boundary]\nkind = \"linear\"\ncoefficients = [1.0, 0.5]\n[gauge]\nn = 11\n");
    let out = dir.path().join("g.csv");
    assert_eq!(fpt(&["gauge-dump", "--config", &cfg, "--output", out.to_str().unwrap()]), EXIT_OK);
    let r = rows(&out);
    assert_eq!(r.len(), 11);
    for row in r {
        assert!(row[1..].iter().all(|v| v.parse::<f64>().unwrap() == 0.0));
    }
}

#[test]
fn constant_boundary_validates_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "v.toml",
        "[grid]\ns_min = 0.01\ns_max = 1.0\nn = 100\n[mc]\npaths = 100000\nsteps = 1000\nseed = 5\n",
    );
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    assert_eq!(fpt(&["mc-validate", "--config", &cfg, "--threads", "1", "--output", a.to_str().unwrap()]), EXIT_OK);
    assert_eq!(fpt(&["mc-validate", "--config", &cfg, "--threads", "2", "--output", b.to_str().unwrap()]), EXIT_OK);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&fs::read(&a).unwrap()).unwrap();
    assert_eq!(report["pass"], true);
    assert_eq!(report["bridge_expectation_mc"], 1.0);
    assert_eq!(report["config"]["mc"]["seed"], 5);
}

#[test]
fn binary_reports_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_fpt");
    let dir = TempDir::new().unwrap();
    let ok = Command::new(exe).args(["selftest"]).output().unwrap();
    assert_eq!(ok.status.code(), Some(EXIT_OK));
    let table = String::from_utf8(ok.stdout).unwrap();
    assert!(table.contains("0 failed"), "{table}");
    let bad = write(dir.path(), "bad.toml", "[propagator]\ndelta_frac = 0.5\n");
    let out = Command::new(exe).args(["density", "--config", &bad]).output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
    // A β' ≡ 50 potential does not converge in δ: numerical failure.
    let hard = write(dir.path(), "hard.toml", "[boundary]\nkind = \"quadratic\"\ncoefficients = [1.0, 0.0, 25.0]\n[grid]\ns_min = 1.0\ns_max = 1.0\nn = 1\n");
    let out = Command::new(exe).args(["density", "--config", &hard]).output().unwrap();
    assert_eq!(out.status.code(), Some(fpt_core::cli::EXIT_NUMERICS), "{}", String::from_utf8_lossy(&out.stderr));
}
