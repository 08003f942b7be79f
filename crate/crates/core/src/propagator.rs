//! Gauge-transformed image kernel for the linear potential `β'(t)·x`, and
//! the bridge expectation `E[exp{−∫ₜˢ β'(u) Ỹ_u du}]` it yields.
//!
//! The kernel is
//!
//! ```text
//! G(t,a; τ,b) = exp{b π̃(τ) + a π(t) + S(t,τ)} · p₀(t, a+v(t); τ, b+ṽ(τ))
//! ```
//!
//! with `p₀` the image kernel. The expectation integrates `G` against the
//! bridge ratio `f(τ,b; s,0) / f(t,a; s,0)` and lets `τ → s`.

use std::f64::consts::PI;

use log::{debug, warn};

use crate::boundary::MovingBoundary;
use crate::clock::VolatilityClock;
use crate::error::{domain, ConvergenceDiagnostics, FptError, Result};
use crate::gauge::{GaugeAnchors, GaugeFunctions, GAUGE_STEPS};
use crate::level_hitting::ln_hitting_density;
use crate::numerics::quadrature::GaussLegendre;

/// Relative change across terminal offsets above which the limit is
/// declared unconverged.
pub const CONVERGENCE_TOL: f64 = 1e-3;

/// Slack above one tolerated before clamping.
pub const CLAMP_TOL: f64 = 1e-8;

const GL_NODES: usize = 20;
const GL_PANELS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagatorConfig {
    /// Terminal offset: the kernel is evaluated at `τ = s − δ(s − t)`.
    pub delta_frac: f64,
    /// Integration cutoff in standard deviations of the integrand.
    pub b_max_sigmas: f64,
    /// Extrapolate `δ → 0` from `δ` and `δ/2`.
    pub richardson: bool,
    pub anchors: GaugeAnchors,
    pub gauge_steps: usize,
}

impl Default for PropagatorConfig {
    fn default() -> Self {
        Self {
            delta_frac: 1e-4,
            b_max_sigmas: 12.0,
            richardson: true,
            anchors: GaugeAnchors::Mirrored,
            gauge_steps: GAUGE_STEPS,
        }
    }
}

impl PropagatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_frac > 0.0 && self.delta_frac < 0.1) {
            return domain(format!("delta_frac must lie in (0, 0.1), got {}", self.delta_frac));
        }
        if !(self.b_max_sigmas >= 8.0) {
            return domain(format!("b_max_sigmas must be at least 8, got {}", self.b_max_sigmas));
        }
        if self.gauge_steps < 2 {
            return domain("gauge_steps must be at least 2");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelValue {
    pub value: f64,
    /// The shifted coordinates `a + v(t)` or `b + ṽ(τ)` left the half line.
    pub shifted_domain: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PropagatorWarning {
    /// `β'` is negative somewhere, outside the hypothesis of the identity.
    NegativePotential { min_beta_prime: f64 },
    /// Some integrand points had shifted coordinates `≤ 0`.
    ShiftedDomain,
    /// The estimate exceeded one and was clamped.
    Clamped { raw: f64 },
    /// The estimate was not positive.
    NonPositive { raw: f64 },
}

impl std::fmt::Display for PropagatorWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::NegativePotential { min_beta_prime } => write!(f, "negative-beta-prime({min_beta_prime:.3e})"),
            Self::ShiftedDomain => write!(f, "shifted-domain"),
            Self::Clamped { raw } => write!(f, "clamped({raw:.6e})"),
            Self::NonPositive { raw } => write!(f, "non-positive({raw:.6e})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BridgeExpectation {
    pub value: f64,
    /// Estimate before clamping.
    pub raw: f64,
    /// Terminal offsets used and the integral at each.
    pub delta_fracs: Vec<f64>,
    pub estimates: Vec<f64>,
    pub relative_change: f64,
    pub warnings: Vec<PropagatorWarning>,
}

fn ln_prefactor(gauge: &GaugeFunctions, t: f64, a: f64, tau: f64, b: f64) -> f64 {
    b * gauge.pi_tilde(tau) + a * gauge.pi(t) + gauge.action(t, tau)
}

/// `ln |G̃|` and the sign of `G̃` for the image kernel at arbitrary `y, z`.
fn signed_image(y: f64, z: f64, variance: f64) -> (f64, f64) {
    let d = z - y;
    let ln_gauss = -0.5 * (2.0 * PI * variance).ln() - d * d / (2.0 * variance);
    let factor = -(-2.0 * y * z / variance).exp_m1();
    if factor == 0.0 {
        (f64::NEG_INFINITY, 0.0)
    } else {
        (ln_gauss + factor.abs().ln(), factor.signum())
    }
}

/// The gauge-weighted image kernel `G(t,a; τ,b)`.
pub fn schrodinger_kernel(
    gauge: &GaugeFunctions,
    clock: &VolatilityClock,
    t: f64,
    a: f64,
    tau: f64,
    b: f64,
) -> Result<KernelValue> {
    check_arguments(gauge, t, a, tau, b)?;
    let y = a + gauge.v(t);
    let z = b + gauge.v_tilde(tau);
    let variance = clock.span(t, tau);
    let shifted_domain = y <= 0.0 || z <= 0.0;
    if shifted_domain {
        debug!("shifted coordinates left the half line: y = {y:.3e}, z = {z:.3e}");
    }
    let (ln_image, sign) = signed_image(y, z, variance);
    Ok(KernelValue {
        value: sign * (ln_prefactor(gauge, t, a, tau, b) + ln_image).exp(),
        shifted_domain,
    })
}

/// The same gauge weight applied to the free Gaussian kernel, the exact
/// whole-line propagator when `π̃ = −π` and `ṽ = v`.
pub fn schrodinger_free_kernel(
    gauge: &GaugeFunctions,
    clock: &VolatilityClock,
    t: f64,
    a: f64,
    tau: f64,
    b: f64,
) -> Result<f64> {
    if !(tau > t) || t < gauge.t_start() || tau > gauge.terminal() {
        return domain(format!(
            "kernel times ({t}, {tau}) outside gauge range [{}, {}]",
            gauge.t_start(),
            gauge.terminal()
        ));
    }
    let y = a + gauge.v(t);
    let z = b + gauge.v_tilde(tau);
    let variance = clock.span(t, tau);
    let d = z - y;
    Ok((ln_prefactor(gauge, t, a, tau, b) - 0.5 * (2.0 * PI * variance).ln() - d * d / (2.0 * variance)).exp())
}

fn check_arguments(gauge: &GaugeFunctions, t: f64, a: f64, tau: f64, b: f64) -> Result<()> {
    if !(tau > t) {
        return domain(format!("kernel needs t < tau, got ({t}, {tau})"));
    }
    if t < gauge.t_start() || tau > gauge.terminal() {
        return domain(format!(
            "kernel times ({t}, {tau}) outside gauge range [{}, {}]",
            gauge.t_start(),
            gauge.terminal()
        ));
    }
    if !(a > 0.0 && b > 0.0) {
        return domain(format!("kernel needs a, b > 0, got ({a}, {b})"));
    }
    Ok(())
}

/// `∫₀^∞ f(τ,b;s,0)/f(t,a;s,0) · G(t,a;τ,b) db` at a fixed `τ < s`.
/// Returns the integral and whether any node was in the shifted domain.
fn terminal_integral(
    gauge: &GaugeFunctions,
    clock: &VolatilityClock,
    t: f64,
    a: f64,
    tau: f64,
    cfg: &PropagatorConfig,
    rule: &GaussLegendre,
) -> Result<(f64, bool)> {
    let s = gauge.terminal();
    let eps = clock.span(tau, s);
    let elapsed = clock.span(t, tau);
    if !(eps > 0.0 && elapsed > 0.0) {
        return Err(FptError::SingularClock(tau));
    }
    let h2_s = clock.h2(s);
    let ln_norm = ln_hitting_density(a, h2_s, clock.span(t, s));
    let y = a + gauge.v(t);
    let pi_tilde = gauge.pi_tilde(tau);
    let v_tilde = gauge.v_tilde(tau);
    let ln_const = a * gauge.pi(t) + gauge.action(t, tau) - ln_norm;
    // b·exp(−b²/2ε) dominates; the Gaussian in b is much wider.
    let sigma = (eps * elapsed / (eps + elapsed)).sqrt();
    let b_max = eps.sqrt() + cfg.b_max_sigmas * sigma;
    let shifted = std::cell::Cell::new(y <= 0.0);
    let integrand = |b: f64| {
        if b <= 0.0 {
            return 0.0;
        }
        let z = b + v_tilde;
        if z <= 0.0 {
            shifted.set(true);
        }
        let (ln_image, sign) = signed_image(y, z, elapsed);
        let ln = ln_hitting_density(b, h2_s, eps) + b * pi_tilde + ln_const + ln_image;
        sign * ln.exp()
    };
    let value = rule.integrate(integrand, 0.0, b_max, GL_PANELS);
    if !value.is_finite() {
        return Err(FptError::Quadrature {
            lo: 0.0,
            hi: b_max,
            estimate: value,
            error: f64::INFINITY,
        });
    }
    Ok((value, shifted.get()))
}

/// `√δ`-Richardson from estimates at `δ` and `δ/2`.
fn richardson(coarse: f64, fine: f64) -> f64 {
    let r = std::f64::consts::SQRT_2;
    (r * fine - coarse) / (r - 1.0)
}

/// Bridge expectation with a gauge already solved on `[t, s]`.
pub fn bridge_expectation_with_gauge(
    gauge: &GaugeFunctions,
    clock: &VolatilityClock,
    t: f64,
    a: f64,
    cfg: &PropagatorConfig,
) -> Result<BridgeExpectation> {
    cfg.validate()?;
    if !(a > 0.0) {
        return domain(format!("bridge expectation needs a > 0, got {a}"));
    }
    let s = gauge.terminal();
    if !(t >= gauge.t_start() && t < s) {
        return domain(format!("bridge expectation needs t in [{}, {s}), got {t}", gauge.t_start()));
    }
    let mut warnings = Vec::new();
    let min_bp = gauge.min_beta_prime();
    if min_bp < 0.0 {
        warn!("beta' reaches {min_bp:.3e} < 0 on [{t}, {s}]");
        warnings.push(PropagatorWarning::NegativePotential { min_beta_prime: min_bp });
    }
    let rule = GaussLegendre::new(GL_NODES);
    let deltas: Vec<f64> = (0..3).map(|k| cfg.delta_frac / f64::from(1u32 << k)).collect();
    let mut estimates = Vec::with_capacity(3);
    let mut shifted = false;
    for &d in &deltas {
        let tau = s - d * (s - t);
        let (v, sh) = terminal_integral(gauge, clock, t, a, tau, cfg, &rule)?;
        estimates.push(v);
        shifted |= sh;
    }
    if shifted {
        warnings.push(PropagatorWarning::ShiftedDomain);
    }
    let (previous, current) = if cfg.richardson {
        (richardson(estimates[0], estimates[1]), richardson(estimates[1], estimates[2]))
    } else {
        (estimates[1], estimates[2])
    };
    let change = if current == 0.0 {
        (current - previous).abs()
    } else {
        ((current - previous) / current).abs()
    };
    if !(change <= CONVERGENCE_TOL) {
        return Err(FptError::Convergence(ConvergenceDiagnostics {
            delta_fracs: deltas,
            estimates,
            relative_change: change,
        }));
    }
    let raw = current;
    let mut value = raw;
    if raw > 1.0 + CLAMP_TOL && min_bp >= 0.0 {
        warn!("bridge expectation {raw:.6e} exceeds 1; clamped");
        warnings.push(PropagatorWarning::Clamped { raw });
        value = 1.0;
    } else if raw > 1.0 && min_bp >= 0.0 {
        value = 1.0;
    }
    if !(raw > 0.0) {
        warn!("bridge expectation {raw:.6e} is not positive");
        warnings.push(PropagatorWarning::NonPositive { raw });
    }
    Ok(BridgeExpectation {
        value,
        raw,
        delta_fracs: deltas,
        estimates,
        relative_change: change,
        warnings,
    })
}

/// `E^{t,a}[exp{−∫ₜˢ β'(u) Ỹ_u du}]` for the bridge from `a` at `t` to 0 at `s`.
pub fn bridge_expectation(
    boundary: &MovingBoundary,
    clock: &VolatilityClock,
    t: f64,
    a: f64,
    s: f64,
    cfg: &PropagatorConfig,
) -> Result<BridgeExpectation> {
    cfg.validate()?;
    if !(s > t) || t < 0.0 {
        return domain(format!("bridge expectation needs 0 <= t < s, got ({t}, {s})"));
    }
    let gauge = GaugeFunctions::solve(boundary, clock, t, s, cfg.anchors, cfg.gauge_steps)?;
    bridge_expectation_with_gauge(&gauge, clock, t, a, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge_kernel::image_kernel;
    use crate::gauge::solve_gauge;

    #[test]
    fn zero_potential_kernel_is_image_kernel() {
        let unit = VolatilityClock::unit();
        let g = solve_gauge(&MovingBoundary::linear(1.0, 1.0), &unit, 0.0, 2.0).unwrap();
        for &(t, a, tau, b) in &[(0.0, 1.0, 0.5, 1.0), (0.3, 0.2, 1.9, 2.5), (1.0, 3.0, 1.1, 0.01)] {
            let k = schrodinger_kernel(&g, &unit, t, a, tau, b).unwrap();
            assert_eq!(k.value, image_kernel(&unit, t, a, tau, b).unwrap());
            assert!(!k.shifted_domain);
        }
    }

    #[test]
    fn kernel_rejects_bad_arguments() {
        let unit = VolatilityClock::unit();
        let g = solve_gauge(&MovingBoundary::constant(1.0), &unit, 0.0, 1.0).unwrap();
        assert!(schrodinger_kernel(&g, &unit, 0.5, 1.0, 0.5, 1.0).is_err());
        assert!(schrodinger_kernel(&g, &unit, 0.0, 1.0, 1.5, 1.0).is_err());
        assert!(schrodinger_kernel(&g, &unit, 0.0, -1.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn shifted_domain_is_flagged() {
        // Default anchors with β' ≡ 2: ṽ(τ) = −τ², so z = b − τ² < 0 for small b.
        let unit = VolatilityClock::unit();
        let g = solve_gauge(&MovingBoundary::quadratic(1.0, 0.0, 1.0), &unit, 0.0, 1.0).unwrap();
        // y = 1 + v(0.2) = 0.36 > 0 and z = 0.1 − 0.25 < 0.
        let k = schrodinger_kernel(&g, &unit, 0.2, 1.0, 0.5, 0.1).unwrap();
        assert!(k.shifted_domain);
        assert!(k.value < 0.0);
        let k = schrodinger_kernel(&g, &unit, 0.2, 1.0, 0.5, 1.0).unwrap();
        assert!(!k.shifted_domain);
    }

    #[test]
    fn zero_potential_expectation_is_one() {
        let cfg = PropagatorConfig::default();
        for (clock, a, s) in [
            (VolatilityClock::unit(), 1.0, 1.0),
            (VolatilityClock::unit(), 0.3, 4.0),
            (VolatilityClock::exponential(0.7).unwrap(), 2.0, 0.8),
            (VolatilityClock::power(1.3, -0.4).unwrap(), 1.1, 2.5),
        ] {
            let f = MovingBoundary::linear_in_variance(a, 0.5, &clock);
            let e = bridge_expectation(&f, &clock, 0.0, a, s, &cfg).unwrap();
            assert!((e.raw - 1.0).abs() < 1e-6, "{e:?}");
            assert!(e.warnings.is_empty(), "{:?}", e.warnings);
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = PropagatorConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.delta_frac = 0.2;
        assert!(cfg.validate().is_err());
        cfg.delta_frac = 1e-4;
        cfg.b_max_sigmas = 4.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn without_richardson_the_limit_is_too_slow() {
        // The error decays like √δ, so unextrapolated offsets disagree.
        let cfg = PropagatorConfig {
            richardson: false,
            ..PropagatorConfig::default()
        };
        let f = MovingBoundary::quadratic(1.0, 0.0, 1.0);
        let err = bridge_expectation(&f, &VolatilityClock::unit(), 0.0, 1.0, 1.0, &cfg).unwrap_err();
        assert!(matches!(err, FptError::Convergence(_)), "{err:?}");
    }
}
