//! Acceptance criteria. Each test writes one `PASS`/`FAIL` line straight to
//! the stderr handle, which the test harness does not capture. Criteria run
//! one at a time so the runtime limits are measured on an idle machine.

use std::fs;
use std::io::Write;
use std::sync::Mutex;
use std::time::Instant;

use fpt_core::boundary::{ou_to_martingale, MovingBoundary, Polynomial};
use fpt_core::bridge_kernel::BridgeLaw;
use fpt_core::clock::VolatilityClock;
use fpt_core::fpt_pipeline::{density_curve, fpt_cdf, fpt_density};
use fpt_core::gauge::solve_gauge;
use fpt_core::montecarlo::{ks_one_sample, ks_statistic, simulate_bridge_exact, simulate_martingale_fpt, simulate_ou_fpt, CdfTable};
use fpt_core::numerics::quadrature::{integrate_adaptive, GaussLegendre};
use fpt_core::propagator::{bridge_expectation, PropagatorConfig};
use fpt_core::selftest::run_suite;
use std::f64::consts::PI;

static SERIAL: Mutex<()> = Mutex::new(());

fn report(n: u32, pass: bool, detail: &str) {
    let line = format!("{} criterion {n}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

const ERFC_ONE: f64 = 0.317_310_507_862_914_04;

#[test]
fn criterion_1_constant_boundary() {
    let _g = serial();
    let start = Instant::now();
    let unit = VolatilityClock::unit();
    let f = MovingBoundary::constant(1.0);
    let cfg = PropagatorConfig::default();
    let cdf1 = fpt_cdf(&f, &unit, 1.0, &cfg).unwrap();
    let grid = uniform_grid(0.0025, 1.0, 400);
    let curve = density_curve(&f, &unit, &grid, &cfg).unwrap();
    let table = CdfTable::new(curve.grid, curve.cdf).unwrap();
    let sample = simulate_martingale_fpt(&f, &unit, 1_000_000, 1000, 1.0, 1).unwrap();
    let ks = ks_statistic(&sample, |t| table.eval(t)).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = (cdf1 - ERFC_ONE).abs() < 1e-6 && ks < 0.005 && secs < 60.0;
    report(1, pass, &format!("cdf(1) = {cdf1:.9} (err {:.1e}), K-S {ks:.2e} < 5e-3, {secs:.1} s < 60 s", (cdf1 - ERFC_ONE).abs()));
    assert!(pass);
}

#[test]
fn criterion_2_linear_boundary() {
    let _g = serial();
    let unit = VolatilityClock::unit();
    let (a, c) = (1.0, 1.0);
    let f = MovingBoundary::linear(a, c);
    let cfg = PropagatorConfig::default();
    let mut worst_density = 0.0f64;
    let mut worst_e = 0.0f64;
    for s in [0.25, 0.5, 1.0, 2.0] {
        let want = a / (2.0 * PI * s * s * s).sqrt() * (-(a + c * s) * (a + c * s) / (2.0 * s)).exp();
        let got = fpt_density(&f, &unit, s, &cfg).unwrap();
        worst_density = worst_density.max((got - want).abs() / want);
        let e = bridge_expectation(&f.normalized().unwrap().0, &unit, 0.0, a, s, &cfg).unwrap();
        worst_e = worst_e.max((e.value - 1.0).abs());
    }
    let cdf1 = fpt_cdf(&f, &unit, 1.0, &cfg).unwrap();
    let pass = worst_density < 1e-6 && worst_e < 1e-6 && (cdf1 - 0.0904178).abs() < 1e-5;
    report(2, pass, &format!("density rel err {worst_density:.1e}, |E - 1| {worst_e:.1e}, cdf(1) = {cdf1:.7}"));
    assert!(pass);
}

#[test]
fn criterion_3_linear_in_variance() {
    let _g = serial();
    let clock = VolatilityClock::exponential(-0.5).unwrap();
    let unit = VolatilityClock::unit();
    let (a, c) = (1.0, 0.5);
    let f = MovingBoundary::linear_in_variance(a, c, &clock);
    let cfg = PropagatorConfig::default();
    let (mut closed, mut covariance) = (0.0f64, 0.0f64);
    for s in [0.1, 0.3, 0.7, 1.0, 1.5, 2.5] {
        let hh = clock.cumulative_variance(s).unwrap();
        let want = a * clock.h2(s) / (2.0 * PI * hh.powi(3)).sqrt() * (-(a + c * hh).powi(2) / (2.0 * hh)).exp();
        let got = fpt_density(&f, &clock, s, &cfg).unwrap();
        closed = closed.max((got - want).abs() / want);
        let base = clock.h2(s) * fpt_density(&MovingBoundary::linear(a, c), &unit, hh, &cfg).unwrap();
        covariance = covariance.max((got - base).abs() / base);
    }
    let pass = closed < 1e-5 && covariance < 1e-5;
    report(3, pass, &format!("closed-form rel err {closed:.1e}, time-change covariance rel err {covariance:.1e}"));
    assert!(pass);
}

#[test]
fn criterion_4_bridge_law() {
    let _g = serial();
    let start = Instant::now();
    let mut details = Vec::new();
    let mut pass = true;
    for (name, clock) in [("h=1", VolatilityClock::unit()), ("h=e^u", VolatilityClock::exponential(1.0).unwrap())] {
        let (a, s) = (1.0, 1.0);
        let law = BridgeLaw::new(clock.clone(), a, s).unwrap();
        let ens = simulate_bridge_exact(&clock, a, s, 100_000, 64, 4, &[0.5 * s]).unwrap();
        let ks = ks_one_sample(&ens.sorted_marginal(0), |y| law.transition_cdf(0.0, a, 0.5 * s, y).unwrap()).unwrap();
        let mass = integrate_adaptive(|y| law.transition(0.0, a, 0.5, y).unwrap(), 0.0, 1.0, 1e-13).unwrap()
            + integrate_adaptive(|y| law.transition(0.0, a, 0.5, y).unwrap(), 1.0, 30.0, 1e-13).unwrap();
        let (u, tau, y) = (0.4, 0.8, 0.5);
        let direct = law.transition(0.1, a, tau, y).unwrap();
        let composed = GaussLegendre::new(20).integrate(
            |z| law.transition(0.1, a, u, z).unwrap() * law.transition(u, z, tau, y).unwrap(),
            0.0,
            10.0,
            64,
        );
        let ck = (composed - direct).abs();
        pass &= ks < 0.02 && (mass - 1.0).abs() < 1e-8 && ck < 1e-6;
        details.push(format!("{name}: K-S {ks:.2e}, mass-1 {:.1e}, C-K err {ck:.1e}", mass - 1.0));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 120.0;
    report(4, pass, &format!("{}; {secs:.1} s < 120 s", details.join("; ")));
    assert!(pass);
}

/// Agreement, or the quantified gap reported by `mc-validate`.
#[test]
fn criterion_5_nontrivial_potential() {
    let _g = serial();
    let dir = tempfile::TempDir::new().unwrap();
    let cfg_path = dir.path().join("quadratic.toml");
    fs::write(
        &cfg_path,
        "[boundary]\nkind = \"quadratic\"\ncoefficients = [1.0, 0.0, 1.0]\n\
         [grid]\ns_min = 0.01\ns_max = 1.0\nn = 100\n\
         [mc]\npaths = 1000000\nsteps = 1000\nseed = 5\nbridge_steps = 500\nbridge_s = [0.5, 1.0]\n",
    )
    .unwrap();
    let out = dir.path().join("report.json");
    let code = fpt_core::cli::run([
        "fpt",
        "mc-validate",
        "--config",
        cfg_path.to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
    ]);
    let report_json: serde_json::Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    let ks = report_json["ks_statistic"].as_f64().unwrap();
    let mut agree = ks < 0.02;
    let mut gap = false;
    let mut details = Vec::new();
    for b in report_json["bridge"].as_array().unwrap() {
        let (an, mc, se, z) = (
            b["analytic"].as_f64().unwrap(),
            b["mc"].as_f64().unwrap(),
            b["stderr"].as_f64().unwrap(),
            b["discrepancy_in_stderr"].as_f64().unwrap(),
        );
        agree &= z <= 2.0 && se < 1e-3;
        gap |= z > 5.0 && se < 1e-3 && b["discrepancy"].as_f64().unwrap().is_finite();
        details.push(format!("s={}: analytic {an:.4} vs MC {mc:.4} +- {se:.1e} ({z:.0} stderr)", b["s"]));
    }
    let outcome = if agree { "agreement" } else if gap { "documented gap reported by mc-validate" } else { "unexplained disagreement" };
    let pass = agree || gap;
    report(5, pass, &format!("{outcome}: {}; CDF K-S {ks:.3} (exit {code})", details.join("; ")));
    assert!(pass);
}

#[test]
fn criterion_6_ornstein_uhlenbeck() {
    let _g = serial();
    let g = Polynomial::new(vec![2.0]);
    let horizon = 3.0;
    let (clock, f) = ou_to_martingale(&g, horizon).unwrap();
    let grid = uniform_grid(0.02, horizon, 150);
    let curve = density_curve(&f, &clock, &grid, &PropagatorConfig::default()).unwrap();
    let analytic_p = curve.total_mass;
    let table = CdfTable::new(curve.grid, curve.cdf).unwrap();
    let sample = simulate_ou_fpt(|_| 2.0, 0.0, 1_000_000, 1e-3, horizon, 6).unwrap();
    let ks = ks_statistic(&sample, |t| table.eval(t)).unwrap();
    let pass = ks < 0.02;
    report(
        6,
        pass,
        &format!(
            "K-S {ks:.4} vs 0.02; P(T <= 3) analytic {analytic_p:.4}, simulated {:.4}",
            sample.empirical_cdf(horizon)
        ),
    );
    assert!(pass, "K-S {ks}");
}

#[test]
fn criterion_7_residual_suite() {
    let _g = serial();
    let entries = run_suite().unwrap();
    let required: Vec<_> = entries.iter().filter(|e| e.threshold.is_some()).collect();
    let failed: Vec<_> = required.iter().filter(|e| !e.passed() || e.min_order() < 2.0).map(|e| e.name).collect();
    let worst_order = required.iter().map(|e| e.min_order()).fold(f64::INFINITY, f64::min);
    let pass = failed.is_empty();
    report(
        7,
        pass,
        &format!("{} required residual checks, {} failed, lowest observed order {worst_order:.2}", required.len(), failed.len()),
    );
    assert!(pass, "{failed:?}");
}

#[test]
fn criterion_8_gauge_closed_forms() {
    let _g = serial();
    let unit = VolatilityClock::unit();
    let g = solve_gauge(&MovingBoundary::quadratic(1.0, 0.0, 1.0), &unit, 0.0, 1.0).unwrap();
    let errs = [(g.pi(0.0) + 2.0).abs(), (g.v(0.0) + 1.0).abs(), (g.action(0.0, 1.0) - 2.0 / 3.0).abs()];
    let pass = errs.iter().all(|&e| e < 1e-8);
    report(8, pass, &format!("errors pi(0) {:.1e}, v(0) {:.1e}, S(0,1) {:.1e}", errs[0], errs[1], errs[2]));
    assert!(pass);
}

#[test]
fn criterion_9_determinism() {
    let _g = serial();
    let dir = tempfile::TempDir::new().unwrap();
    let cfg_path = dir.path().join("det.toml");
    fs::write(
        &cfg_path,
        "[clock]\nkind = \"exponential\"\nlambda = 0.3\n\
         [boundary]\nkind = \"quadratic\"\ncoefficients = [1.0, 0.2, 1.0]\n\
         [grid]\ns_min = 0.02\ns_max = 1.0\nn = 50\n\
         [mc]\npaths = 20000\nsteps = 400\nseed = 9\nbridge_s = [0.5, 1.0]\n",
    )
    .unwrap();
    let mut reports = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(format!("r{threads}.json"));
        fpt_core::cli::run([
            "fpt",
            "mc-validate",
            "--config",
            cfg_path.to_str().unwrap(),
            "--threads",
            threads,
            "--output",
            out.to_str().unwrap(),
        ]);
        reports.push(fs::read(&out).unwrap());
    }
    let pass = !reports[0].is_empty() && reports[0] == reports[1];
    report(9, pass, &format!("reports with 1 and 3 threads identical ({} bytes)", reports[0].len()));
    assert!(pass);
}
