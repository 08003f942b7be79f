//! Hitting densities of a fixed level under the time-changed Brownian law.

use std::f64::consts::PI;

use crate::clock::VolatilityClock;
use crate::error::{domain, Result};
use crate::numerics::quadrature::integrate_adaptive;

/// Law of `T_a = inf{s : M̃_s = a}` for `M̃` with clock `H`.
#[derive(Debug, Clone)]
pub struct LevelHittingLaw {
    clock: VolatilityClock,
    a: f64,
}

/// `a·h²(t)·(2π ΔH³)^{-1/2}·exp(−a²/(2ΔH))` with `ΔH` the elapsed variance.
pub(crate) fn hitting_density(distance: f64, h2_end: f64, variance: f64) -> f64 {
    if !(variance > 0.0) || distance == 0.0 {
        return 0.0;
    }
    let d = distance.abs();
    d * h2_end * (-(d * d) / (2.0 * variance)).exp() / (2.0 * PI * variance.powi(3)).sqrt()
}

/// Logarithm of [`hitting_density`], `−∞` when the density vanishes.
pub(crate) fn ln_hitting_density(distance: f64, h2_end: f64, variance: f64) -> f64 {
    if !(variance > 0.0) || distance == 0.0 || !(h2_end > 0.0) {
        return f64::NEG_INFINITY;
    }
    let d = distance.abs();
    d.ln() + h2_end.ln() - (d * d) / (2.0 * variance) - 0.5 * (2.0 * PI).ln() - 1.5 * variance.ln()
}

/// `f(t₀,x; t,y)`: density in `t` of the first time the process started
/// at `x` at time `t₀` reaches `y`, including the `|x − y|` factor.
pub fn passage_kernel(clock: &VolatilityClock, t0: f64, x: f64, t: f64, y: f64) -> Result<f64> {
    if !(t > t0) || t0 < 0.0 {
        return domain(format!("passage kernel needs 0 <= t0 < t, got ({t0}, {t})"));
    }
    let variance = clock.span(t0, t);
    Ok(hitting_density(x - y, clock.h2(t), variance))
}

impl LevelHittingLaw {
    pub fn new(clock: VolatilityClock, a: f64) -> Result<Self> {
        if !(a > 0.0) || !a.is_finite() {
            return domain(format!("level must be positive, got {a}"));
        }
        Ok(Self { clock, a })
    }

    pub fn level(&self) -> f64 {
        self.a
    }

    pub fn clock(&self) -> &VolatilityClock {
        &self.clock
    }

    /// `φ_a(t)`, zero at `t = 0`.
    pub fn level_density(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return domain(format!("level density needs t >= 0, got {t}"));
        }
        if t == 0.0 {
            return Ok(0.0);
        }
        let variance = self.clock.cumulative_variance(t)?;
        Ok(hitting_density(self.a, self.clock.h2(t), variance))
    }

    /// `f(t₀,x; t,y)` under this law's clock.
    pub fn passage_kernel(&self, t0: f64, x: f64, t: f64, y: f64) -> Result<f64> {
        passage_kernel(&self.clock, t0, x, t, y)
    }

    /// `P(T_a ≤ t)` by quadrature after substituting `r = a/√(2H(u))`,
    /// which turns `φ_a(u) du` into `(2/√π) e^{−r²} dr` on `[r(t), ∞)`.
    pub fn level_cdf(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return domain(format!("level cdf needs t >= 0, got {t}"));
        }
        if t == 0.0 {
            return Ok(0.0);
        }
        let variance = if t.is_infinite() {
            self.clock.total_variance().unwrap_or(f64::INFINITY)
        } else {
            self.clock.cumulative_variance(t)?
        };
        let r_lo = if variance.is_infinite() {
            0.0
        } else {
            self.a / (2.0 * variance).sqrt()
        };
        // e^{-r²} is below 1e-300 past r_lo + 27.
        let r_hi = r_lo + 27.0;
        let mass = integrate_adaptive(|r: f64| 2.0 / PI.sqrt() * (-r * r).exp(), r_lo, r_hi, 1e-14)?;
        Ok(mass.clamp(0.0, 1.0))
    }

    /// `lim_{t→∞} P(T_a ≤ t)`; below one when the clock has finite total variance.
    pub fn total_mass(&self) -> Result<f64> {
        self.level_cdf(f64::INFINITY)
    }
}
