use fpt_core::boundary::MovingBoundary;
use fpt_core::bridge_kernel::{free_kernel, image_kernel, BridgeLaw};
use fpt_core::clock::VolatilityClock;
use fpt_core::fpt_pipeline::fpt_density;
use fpt_core::level_hitting::LevelHittingLaw;
use fpt_core::numerics::quadrature::{integrate_adaptive, GaussLegendre};
use fpt_core::propagator::PropagatorConfig;
use proptest::prelude::*;

fn clocks() -> Vec<VolatilityClock> {
    vec![
        VolatilityClock::unit(),
        VolatilityClock::constant(0.7).unwrap(),
        VolatilityClock::exponential(1.0).unwrap(),
        VolatilityClock::exponential(-0.5).unwrap(),
        VolatilityClock::power(1.2, 0.5).unwrap(),
    ]
}

fn clock_strategy() -> impl Strategy<Value = VolatilityClock> {
    (0..clocks().len()).prop_map(|i| clocks()[i].clone())
}

/// ∫₀^∞ by splitting at the mean and integrating each side adaptively.
fn half_line(f: impl Fn(f64) -> f64 + Copy, centre: f64, width: f64) -> f64 {
    let hi = centre + 40.0 * width;
    integrate_adaptive(f, 0.0, centre, 1e-13).unwrap() + integrate_adaptive(f, centre, hi, 1e-13).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn clock_is_increasing_and_invertible(clock in clock_strategy(), t in 0.01f64..2.0, dt in 0.01f64..1.0) {
        let h1 = clock.cumulative_variance(t).unwrap();
        let h2 = clock.cumulative_variance(t + dt).unwrap();
        prop_assert!(h2 > h1);
        let back = clock.inverse_clock(h1).unwrap();
        prop_assert!((back - t).abs() < 1e-9 * (1.0 + t));
    }

    #[test]
    fn bridge_transition_integrates_to_one(
        clock in clock_strategy(),
        x in 0.2f64..2.5,
        frac_t in 0.0f64..0.6,
        frac_tau in 0.1f64..0.9,
    ) {
        let s = 1.0;
        let t = frac_t * s;
        let tau = t + frac_tau * (s - t);
        let law = BridgeLaw::new(clock.clone(), 1.0, s).unwrap();
        let sd = clock.variance_between(t, tau).unwrap().sqrt();
        let mass = half_line(|y| law.transition(t, x, tau, y).unwrap(), x.max(sd), sd + x);
        prop_assert!((mass - 1.0).abs() < 1e-8, "mass {mass}");
        prop_assert!((law.transition_mass(t, x, tau).unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn image_kernel_is_symmetric(x in 0.05f64..3.0, y in 0.05f64..3.0, tau in 0.05f64..2.0) {
        let unit = VolatilityClock::unit();
        let a = image_kernel(&unit, 0.0, x, tau, y).unwrap();
        let b = image_kernel(&unit, 0.0, y, tau, x).unwrap();
        prop_assert!((a - b).abs() <= 1e-15 * a.abs().max(1e-300));
    }

    #[test]
    fn free_kernel_chapman_kolmogorov(x in -1.0f64..1.0, y in -1.0f64..1.0, u in 0.2f64..0.8) {
        let clock = VolatilityClock::exponential(0.5).unwrap();
        let direct = free_kernel(&clock, 0.0, x, 1.0, y).unwrap();
        let gl = GaussLegendre::new(20);
        let composed = gl.integrate(
            |z| free_kernel(&clock, 0.0, x, u, z).unwrap() * free_kernel(&clock, u, z, 1.0, y).unwrap(),
            -12.0,
            12.0,
            64,
        );
        prop_assert!((composed - direct).abs() < 1e-10);
    }

    /// `f = a + c·H` under a clock has density `h²(s)` times the Bachelier–Lévy
    /// density of the unit-clock problem at `H(s)`.
    #[test]
    fn time_change_covariance(s in 0.1f64..2.0, c in -0.5f64..1.0) {
        let clock = VolatilityClock::exponential(-0.5).unwrap();
        let cfg = PropagatorConfig::default();
        let f = MovingBoundary::linear_in_variance(1.0, c, &clock);
        let got = fpt_density(&f, &clock, s, &cfg).unwrap();
        let theta = clock.cumulative_variance(s).unwrap();
        let unit = VolatilityClock::unit();
        let base = fpt_density(&MovingBoundary::linear(1.0, c), &unit, theta, &cfg).unwrap();
        let expected = clock.h2(s) * base;
        prop_assert!((got - expected).abs() <= 1e-5 * expected, "{got} vs {expected}");
    }
}

#[test]
fn bridge_chapman_kolmogorov() {
    for clock in clocks() {
        let law = BridgeLaw::new(clock.clone(), 1.0, 1.0).unwrap();
        let (t, x, u, tau, y) = (0.1, 1.0, 0.45, 0.8, 0.6);
        let direct = law.transition(t, x, tau, y).unwrap();
        let composed = GaussLegendre::new(20).integrate(
            |z| law.transition(t, x, u, z).unwrap() * law.transition(u, z, tau, y).unwrap(),
            0.0,
            8.0,
            64,
        );
        assert!((composed - direct).abs() < 1e-6, "{composed} vs {direct}");
    }
}

#[test]
fn level_hitting_time_change() {
    let clock = VolatilityClock::exponential(1.0).unwrap();
    let law = LevelHittingLaw::new(clock.clone(), 1.3).unwrap();
    for s in [0.1, 0.5, 1.5] {
        let theta = clock.cumulative_variance(s).unwrap();
        let levy = 1.3 / (2.0 * std::f64::consts::PI * theta.powi(3)).sqrt() * (-1.3f64.powi(2) / (2.0 * theta)).exp();
        let expected = clock.h2(s) * levy;
        let got = law.level_density(s).unwrap();
        assert!((got - expected).abs() <= 1e-13 * expected);
    }
}

#[test]
fn level_cdf_matches_integrated_density() {
    let clock = VolatilityClock::power(1.0, 1.0).unwrap();
    let law = LevelHittingLaw::new(clock, 0.8).unwrap();
    let integral = integrate_adaptive(|s| law.level_density(s).unwrap(), 0.0, 1.2, 1e-12).unwrap();
    assert!((integral - law.level_cdf(1.2).unwrap()).abs() < 1e-10);
}
