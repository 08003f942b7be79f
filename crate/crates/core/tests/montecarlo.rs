use fpt_core::boundary::MovingBoundary;
use fpt_core::bridge_kernel::BridgeLaw;
use fpt_core::clock::VolatilityClock;
use fpt_core::fpt_pipeline::girsanov_prefactor;
use fpt_core::level_hitting::LevelHittingLaw;
use fpt_core::montecarlo::{
    ks_one_sample, ks_statistic, ks_two_sample, mc_bridge_expectation, simulate_bridge_euler, simulate_bridge_exact,
    simulate_martingale_fpt, simulate_martingale_fpt_with, FptSample,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ERFC_ONE: f64 = 0.317_310_507_862_914_04;

#[test]
fn crossing_correction_removes_the_discretization_bias() {
    let unit = VolatilityClock::unit();
    let f = MovingBoundary::constant(1.0);
    let n = 100_000;
    let naive = simulate_martingale_fpt_with(&f, &unit, n, 1000, 1.0, 11, false).unwrap();
    let corrected = simulate_martingale_fpt_with(&f, &unit, n, 1000, 1.0, 11, true).unwrap();
    let (pn, pc) = (naive.empirical_cdf(1.0), corrected.empirical_cdf(1.0));
    let se = (ERFC_ONE * (1.0 - ERFC_ONE) / n as f64).sqrt();
    assert!(ERFC_ONE - pn > 5.0 * se, "naive {pn} shows no bias");
    assert!((pc - ERFC_ONE).abs() < 3.0 * se, "corrected {pc}");
}

#[test]
fn bridge_stderr_scales_as_inverse_root_n() {
    let unit = VolatilityClock::unit();
    let f = MovingBoundary::quadratic(1.0, 0.0, 1.0);
    let small = mc_bridge_expectation(&f, &unit, 1.0, 1.0, 10_000, 200, 3).unwrap();
    let large = mc_bridge_expectation(&f, &unit, 1.0, 1.0, 40_000, 200, 4).unwrap();
    let ratio = small.stderr / large.stderr;
    assert!((ratio / 2.0 - 1.0).abs() < 0.2, "ratio {ratio}");
}

#[test]
fn exact_bridge_marginal_matches_the_transition_law() {
    for clock in [VolatilityClock::unit(), VolatilityClock::exponential(1.0).unwrap()] {
        let law = BridgeLaw::new(clock.clone(), 1.0, 1.0).unwrap();
        let ens = simulate_bridge_exact(&clock, 1.0, 1.0, 20_000, 64, 5, &[0.5]).unwrap();
        let ks = ks_one_sample(&ens.sorted_marginal(0), |y| law.transition_cdf(0.0, 1.0, 0.5, y).unwrap()).unwrap();
        assert!(ks < 1.63 / (20_000f64).sqrt(), "ks {ks}");
    }
}

#[test]
fn euler_and_exact_bridges_agree_in_law() {
    let clock = VolatilityClock::exponential(0.5).unwrap();
    let exact = simulate_bridge_exact(&clock, 1.0, 1.0, 20_000, 200, 8, &[0.5]).unwrap();
    let euler = simulate_bridge_euler(&clock, 1.0, 1.0, 20_000, 2000, 9, &[0.5]).unwrap();
    let ks = ks_two_sample(&exact.sorted_marginal(0), &euler.sorted_marginal(0)).unwrap();
    // Two-sample 99% critical value 1.63·√(2/n) plus a small step bias.
    assert!(ks < 1.63 * (2.0 / 20_000f64).sqrt() + 0.005, "ks {ks}");
}

#[test]
fn ks_of_an_inverse_cdf_sample_is_small() {
    let law = LevelHittingLaw::new(VolatilityClock::unit(), 1.0).unwrap();
    let n = 20_000;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    // T = a²/Z² for the unit clock.
    let mut times: Vec<f64> = (0..n)
        .map(|_| {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            1.0 / (z * z)
        })
        .filter(|&t| t <= 2.0)
        .collect();
    times.sort_by(f64::total_cmp);
    let sample = FptSample {
        n_censored: n - times.len(),
        times,
        n_paths: n,
        horizon: 2.0,
    };
    let ks = ks_statistic(&sample, |t| law.level_cdf(t).unwrap()).unwrap();
    assert!(ks < 1.63 / (n as f64).sqrt(), "ks {ks}");
    // A sample against its own step CDF is off only by the jump at each point.
    let pts = [0.5, 1.0, 1.5, 2.0];
    let own = ks_one_sample(&pts, |t| pts.partition_point(|&p| p <= t) as f64 / 4.0).unwrap();
    assert!(own <= 0.25 + 1e-12);
}

#[test]
fn simulations_do_not_depend_on_thread_count() {
    let clock = VolatilityClock::exponential(0.5).unwrap();
    let f = MovingBoundary::quadratic(1.0, 0.0, 1.0);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let s = simulate_martingale_fpt(&f, &clock, 5000, 300, 1.0, 21).unwrap();
            let e = mc_bridge_expectation(&f, &clock, 1.0, 1.0, 5000, 100, 22).unwrap();
            (s, e.mean.to_bits(), e.stderr.to_bits())
        })
    };
    assert_eq!(run(1), run(3));
}

/// The oracles are consistent with each other: simulated first-passage
/// times of `f = 1 + t²` match the identity density assembled from the MC
/// bridge expectation. Any discrepancy of the analytic kernel against the
/// MC bridge is therefore not an artefact of the bridge sampler.
#[test]
fn simulated_density_matches_the_mc_assembled_identity() {
    let unit = VolatilityClock::unit();
    let f = MovingBoundary::quadratic(1.0, 0.0, 1.0);
    let n = 200_000;
    let sample = simulate_martingale_fpt(&f, &unit, n, 1000, 1.05, 31).unwrap();
    let (lo, hi) = (0.95, 1.05);
    let hits = sample.empirical_cdf(hi) - sample.empirical_cdf(lo);
    let empirical = hits / (hi - lo);
    let empirical_se = (hits * (1.0 - hits) / n as f64).sqrt() / (hi - lo);

    let law = LevelHittingLaw::new(unit.clone(), 1.0).unwrap();
    let s = 1.0;
    let e = mc_bridge_expectation(&f, &unit, 1.0, s, 100_000, 400, 32).unwrap();
    let assembled = e.mean * girsanov_prefactor(&f, &unit, s).unwrap() * law.level_density(s).unwrap();
    let assembled_se = e.stderr * girsanov_prefactor(&f, &unit, s).unwrap() * law.level_density(s).unwrap();
    let tol = 4.0 * (empirical_se.powi(2) + assembled_se.powi(2)).sqrt() + 2e-4;
    assert!((empirical - assembled).abs() < tol, "empirical {empirical} vs assembled {assembled} (tol {tol})");
}
