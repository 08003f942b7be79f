//! Free, absorbed and bridge transition kernels.
//!
//! All kernels are densities in the state variable and depend on time only
//! through the elapsed variance `H(τ) − H(t)`, so a clock `h` acts as a pure
//! time change.

use std::f64::consts::PI;

use log::warn;

use crate::clock::VolatilityClock;
use crate::error::{domain, Result};
use crate::level_hitting::ln_hitting_density;
use crate::numerics::quadrature::{integrate_with, QuadOptions};

/// Variances below this are treated as a degenerate interval.
pub const DEGENERATE_VARIANCE: f64 = 1e-14;

fn gaussian(d: f64, variance: f64) -> f64 {
    (-(d * d) / (2.0 * variance)).exp() / (2.0 * PI * variance).sqrt()
}

fn elapsed(clock: &VolatilityClock, t: f64, tau: f64) -> Result<f64> {
    if !(tau > t) || t < 0.0 {
        return domain(format!("kernel needs 0 <= t < tau, got ({t}, {tau})"));
    }
    Ok(clock.span(t, tau))
}

fn degenerate(x: f64, y: f64, variance: f64) -> Result<Option<f64>> {
    if variance < DEGENERATE_VARIANCE {
        if x == y {
            return domain("degenerate interval on the diagonal");
        }
        warn!("degenerate interval: variance {variance:.3e}, kernel set to 0");
        return Ok(Some(0.0));
    }
    Ok(None)
}

/// Gaussian transition density of `M̃` with variance `H(τ) − H(t)`.
pub fn free_kernel(clock: &VolatilityClock, t: f64, x: f64, tau: f64, y: f64) -> Result<f64> {
    let variance = elapsed(clock, t, tau)?;
    if let Some(v) = degenerate(x, y, variance)? {
        return Ok(v);
    }
    Ok(gaussian(y - x, variance))
}

/// `ln p₀` for `x, y > 0`: the image kernel killed at zero.
pub(crate) fn ln_image(x: f64, y: f64, variance: f64) -> f64 {
    let prod = 2.0 * x * y / variance;
    if !(prod > 0.0) {
        return f64::NEG_INFINITY;
    }
    let d = y - x;
    -0.5 * (2.0 * PI * variance).ln() - d * d / (2.0 * variance) + (-(-prod).exp_m1()).ln()
}

/// `p₀(t,x; τ,y)`: free kernel minus its reflection through zero.
pub fn image_kernel(clock: &VolatilityClock, t: f64, x: f64, tau: f64, y: f64) -> Result<f64> {
    if x < 0.0 || y < 0.0 {
        return domain(format!("image kernel needs x, y >= 0, got ({x}, {y})"));
    }
    let variance = elapsed(clock, t, tau)?;
    if let Some(v) = degenerate(x, y, variance)? {
        return Ok(v);
    }
    if x == 0.0 || y == 0.0 {
        return Ok(0.0);
    }
    Ok(ln_image(x, y, variance).exp())
}

/// Density of the process started at `x` and killed at `barrier`:
/// `free(x→y) − free(x→2·barrier−y)`.
pub fn absorbed_kernel_at(
    clock: &VolatilityClock,
    barrier: f64,
    t: f64,
    x: f64,
    tau: f64,
    y: f64,
) -> Result<f64> {
    let side_x = x - barrier;
    let side_y = y - barrier;
    if side_x * side_y < 0.0 {
        return domain(format!(
            "absorbed kernel needs x and y on the same side of {barrier}, got ({x}, {y})"
        ));
    }
    let variance = elapsed(clock, t, tau)?;
    if let Some(v) = degenerate(x, y, variance)? {
        return Ok(v);
    }
    if side_x == 0.0 || side_y == 0.0 {
        return Ok(0.0);
    }
    let prod = 2.0 * side_x * side_y / variance;
    Ok(gaussian(y - x, variance) * -(-prod).exp_m1())
}

/// Law of `Ỹ`: the process started at `a`, conditioned to first reach 0 at `s`.
#[derive(Debug, Clone)]
pub struct BridgeLaw {
    clock: VolatilityClock,
    a: f64,
    s: f64,
}

impl BridgeLaw {
    pub fn new(clock: VolatilityClock, a: f64, s: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return domain(format!("bridge start must be positive, got {a}"));
        }
        if !(s > 0.0 && s.is_finite()) {
            return domain(format!("bridge terminal time must be positive, got {s}"));
        }
        if !(clock.cumulative_variance(s)? > 0.0) {
            return domain("bridge needs H(s) > 0");
        }
        Ok(Self { clock, a, s })
    }

    pub fn clock(&self) -> &VolatilityClock {
        &self.clock
    }

    pub fn start(&self) -> f64 {
        self.a
    }

    pub fn terminal_time(&self) -> f64 {
        self.s
    }

    /// `G̃(t,x; τ,y) = [f(τ,y; s,0) / f(t,x; s,0)]·p₀(t,x; τ,y)`.
    pub fn transition(&self, t: f64, x: f64, tau: f64, y: f64) -> Result<f64> {
        if !(t >= 0.0 && t < tau) {
            return domain(format!("bridge transition needs 0 <= t < tau, got ({t}, {tau})"));
        }
        if tau >= self.s {
            return domain(format!(
                "bridge transition needs tau < s = {}, got {tau}",
                self.s
            ));
        }
        if !(x > 0.0) || y < 0.0 {
            return domain(format!("bridge transition needs x > 0 and y >= 0, got ({x}, {y})"));
        }
        if y == 0.0 {
            return Ok(0.0);
        }
        let variance = self.clock.span(t, tau);
        if let Some(v) = degenerate(x, y, variance)? {
            return Ok(v);
        }
        Ok(self.ln_transition_unchecked(t, x, tau, y, variance).exp())
    }

    pub(crate) fn ln_transition_unchecked(&self, t: f64, x: f64, tau: f64, y: f64, variance: f64) -> f64 {
        let h2s = self.clock.h2(self.s);
        let ahead = ln_hitting_density(y, h2s, self.clock.span(tau, self.s));
        let from = ln_hitting_density(x, h2s, self.clock.span(t, self.s));
        ahead - from + ln_image(x, y, variance)
    }

    /// `∫₀^y G̃(t,x; τ,y') dy'`.
    pub fn transition_cdf(&self, t: f64, x: f64, tau: f64, y: f64) -> Result<f64> {
        if y <= 0.0 {
            return Ok(0.0);
        }
        let opts = QuadOptions::absolute(1e-12).with_rel_tol(1e-12);
        let r = integrate_with(|w| self.transition(t, x, tau, w).unwrap_or(0.0), 0.0, y, opts)?;
        Ok(r.value.clamp(0.0, 1.0))
    }

    /// `∫₀^∞ G̃ dy`, one up to quadrature error.
    pub fn transition_mass(&self, t: f64, x: f64, tau: f64) -> Result<f64> {
        self.moment(t, x, tau, 0)
    }

    /// `∫₀^∞ y^k G̃(t,x; τ,y) dy`.
    pub fn moment(&self, t: f64, x: f64, tau: f64, k: i32) -> Result<f64> {
        self.transition(t, x, tau, 1.0)?;
        let sd = self.clock.span(t, tau).sqrt();
        let hi = x + 40.0 * sd.max(self.clock.span(tau, self.s).sqrt());
        let opts = QuadOptions::absolute(1e-13).with_rel_tol(1e-13);
        let r = integrate_with(
            |w| w.powi(k) * self.transition(t, x, tau, w).unwrap_or(0.0),
            0.0,
            hi,
            opts,
        )?;
        Ok(r.value)
    }
}
