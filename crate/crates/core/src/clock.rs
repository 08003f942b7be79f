//! Deterministic quadratic-variation clock `H(t) = ∫₀ᵗ h²(u) du`.

use std::fmt;
use std::sync::Arc;

use crate::error::{domain, FptError, Result};
use crate::numerics::quadrature::{integrate_with, QuadOptions};

/// Absolute tolerance used when `H` has to be integrated numerically.
pub const CLOCK_QUAD_TOL: f64 = 1e-12;
/// Absolute tolerance of the bisection in [`VolatilityClock::inverse_clock`].
pub const INVERSE_TOL: f64 = 1e-12;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Volatility structure `h`. The clock is immutable and cheap to clone.
#[derive(Clone)]
pub enum ClockKind {
    /// `h(u) = σ`
    Constant { sigma: f64 },
    /// `h(u) = e^{λu}`
    Exponential { lambda: f64 },
    /// `h(u) = σ (1 + u)^p`
    Power { sigma: f64, exponent: f64 },
    /// Monotone cubic interpolation of `h²` through `(u_i, h_i²)`.
    Tabulated(Arc<TabulatedVariance>),
    /// Arbitrary positive `h`; `H` by adaptive quadrature.
    Custom(ScalarFn),
}

impl fmt::Debug for ClockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClockKind::Constant { sigma } => write!(f, "Constant {{ sigma: {sigma} }}"),
            ClockKind::Exponential { lambda } => write!(f, "Exponential {{ lambda: {lambda} }}"),
            ClockKind::Power { sigma, exponent } => {
                write!(f, "Power {{ sigma: {sigma}, exponent: {exponent} }}")
            }
            ClockKind::Tabulated(t) => write!(f, "Tabulated({} knots)", t.knots.len()),
            ClockKind::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct VolatilityClock {
    kind: ClockKind,
}

impl VolatilityClock {
    pub fn constant(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return domain(format!("constant volatility must be positive, got {sigma}"));
        }
        Ok(Self { kind: ClockKind::Constant { sigma } })
    }

    /// The unit clock `h ≡ 1`, i.e. a standard Brownian motion.
    pub fn unit() -> Self {
        Self { kind: ClockKind::Constant { sigma: 1.0 } }
    }

    pub fn exponential(lambda: f64) -> Result<Self> {
        if !lambda.is_finite() {
            return domain("exponential rate must be finite");
        }
        Ok(Self { kind: ClockKind::Exponential { lambda } })
    }

    pub fn power(sigma: f64, exponent: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0 && exponent.is_finite()) {
            return domain("power clock needs sigma > 0 and a finite exponent");
        }
        Ok(Self { kind: ClockKind::Power { sigma, exponent } })
    }

    pub fn tabulated(knots: Vec<f64>, h_values: Vec<f64>) -> Result<Self> {
        let table = TabulatedVariance::new(knots, h_values)?;
        Ok(Self { kind: ClockKind::Tabulated(Arc::new(table)) })
    }

    pub fn custom(h: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { kind: ClockKind::Custom(Arc::new(h)) }
    }

    pub fn kind(&self) -> &ClockKind {
        &self.kind
    }

    /// True when `h ≡ 1`.
    pub fn is_unit(&self) -> bool {
        matches!(self.kind, ClockKind::Constant { sigma } if sigma == 1.0)
    }

    pub fn h(&self, u: f64) -> f64 {
        match &self.kind {
            ClockKind::Constant { sigma } => *sigma,
            ClockKind::Exponential { lambda } => (lambda * u).exp(),
            ClockKind::Power { sigma, exponent } => sigma * (1.0 + u).powf(*exponent),
            ClockKind::Tabulated(t) => t.q(u).sqrt(),
            ClockKind::Custom(h) => h(u),
        }
    }

    /// `h²(u)`.
    pub fn h2(&self, u: f64) -> f64 {
        match &self.kind {
            ClockKind::Constant { sigma } => sigma * sigma,
            ClockKind::Exponential { lambda } => (2.0 * lambda * u).exp(),
            ClockKind::Power { sigma, exponent } => sigma * sigma * (1.0 + u).powf(2.0 * exponent),
            ClockKind::Tabulated(t) => t.q(u),
            ClockKind::Custom(h) => {
                let v = h(u);
                v * v
            }
        }
    }

    /// `d/du h²(u)`.
    pub fn h2_prime(&self, u: f64) -> f64 {
        match &self.kind {
            ClockKind::Constant { .. } => 0.0,
            ClockKind::Exponential { lambda } => 2.0 * lambda * (2.0 * lambda * u).exp(),
            ClockKind::Power { sigma, exponent } => {
                2.0 * exponent * sigma * sigma * (1.0 + u).powf(2.0 * exponent - 1.0)
            }
            ClockKind::Tabulated(t) => t.q_prime(u),
            ClockKind::Custom(_) => {
                let step = f64::EPSILON.cbrt() * u.abs().max(1.0);
                if u >= step {
                    (self.h2(u + step) - self.h2(u - step)) / (2.0 * step)
                } else {
                    (-3.0 * self.h2(u) + 4.0 * self.h2(u + step) - self.h2(u + 2.0 * step)) / (2.0 * step)
                }
            }
        }
    }

    /// `H(t)` without argument validation. Analytic kinds accept any `t`
    /// where their formula is defined.
    pub(crate) fn cumulative_unchecked(&self, t: f64) -> f64 {
        match &self.kind {
            ClockKind::Constant { sigma } => sigma * sigma * t,
            ClockKind::Exponential { lambda } => {
                if *lambda == 0.0 {
                    t
                } else {
                    (2.0 * lambda * t).exp_m1() / (2.0 * lambda)
                }
            }
            ClockKind::Power { sigma, exponent } => {
                let k = 2.0 * exponent + 1.0;
                let s2 = sigma * sigma;
                if k.abs() < 1e-14 {
                    s2 * t.ln_1p()
                } else {
                    s2 * (k * t.ln_1p()).exp_m1() / k
                }
            }
            ClockKind::Tabulated(table) => table.integral(t),
            ClockKind::Custom(_) => self.numerical_cumulative(t).unwrap_or(f64::NAN),
        }
    }

    /// `H(t)` by adaptive quadrature of `h²`, independent of the closed forms.
    pub fn numerical_cumulative(&self, t: f64) -> Result<f64> {
        if t < 0.0 {
            return domain(format!("cumulative variance needs t >= 0, got {t}"));
        }
        let opts = QuadOptions::absolute(CLOCK_QUAD_TOL).with_rel_tol(1e-14);
        integrate_with(|u| self.h2(u), 0.0, t, opts).map(|r| r.value)
    }

    /// `H(t) = ∫₀ᵗ h²(u) du`.
    pub fn cumulative_variance(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) || !t.is_finite() {
            return domain(format!("cumulative variance needs finite t >= 0, got {t}"));
        }
        Ok(self.cumulative_unchecked(t))
    }

    /// `∫ₜ^τ h²(u) du`.
    pub fn variance_between(&self, t: f64, tau: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return domain(format!("variance_between needs t >= 0, got {t}"));
        }
        if tau < t {
            return domain(format!("variance_between needs t <= tau, got ({t}, {tau})"));
        }
        if tau == t {
            return Ok(0.0);
        }
        Ok(self.span(t, tau))
    }

    /// `H(τ) − H(t)` computed without validation, accurate for short spans.
    pub(crate) fn span(&self, t: f64, tau: f64) -> f64 {
        match &self.kind {
            ClockKind::Constant { sigma } => sigma * sigma * (tau - t),
            ClockKind::Exponential { lambda } => {
                if *lambda == 0.0 {
                    tau - t
                } else {
                    (2.0 * lambda * t).exp() * (2.0 * lambda * (tau - t)).exp_m1() / (2.0 * lambda)
                }
            }
            ClockKind::Custom(_) => {
                let opts = QuadOptions::absolute(CLOCK_QUAD_TOL).with_rel_tol(1e-14);
                integrate_with(|u| self.h2(u), t, tau, opts)
                    .map(|r| r.value)
                    .unwrap_or(f64::NAN)
            }
            _ => self.cumulative_unchecked(tau) - self.cumulative_unchecked(t),
        }
    }

    /// `lim_{t→∞} H(t)` when finite.
    pub fn total_variance(&self) -> Option<f64> {
        match &self.kind {
            ClockKind::Exponential { lambda } if *lambda < 0.0 => Some(-1.0 / (2.0 * lambda)),
            ClockKind::Power { sigma, exponent } if 2.0 * exponent + 1.0 < 0.0 => {
                Some(-sigma * sigma / (2.0 * exponent + 1.0))
            }
            _ => None,
        }
    }

    /// Solves `H(t) = θ`, in closed form where available and otherwise by
    /// bisection to absolute `1e-12` in `t`.
    pub fn inverse_clock(&self, theta: f64) -> Result<f64> {
        if !(theta >= 0.0) || !theta.is_finite() {
            return domain(format!("inverse clock needs finite theta >= 0, got {theta}"));
        }
        if theta == 0.0 {
            return Ok(0.0);
        }
        if let Some(sup) = self.total_variance() {
            if theta >= sup {
                return domain(format!("theta {theta} exceeds the total variance {sup}"));
            }
        }
        match &self.kind {
            ClockKind::Constant { sigma } => return Ok(theta / (sigma * sigma)),
            ClockKind::Exponential { lambda } if *lambda != 0.0 => {
                return Ok((2.0 * lambda * theta).ln_1p() / (2.0 * lambda));
            }
            _ => {}
        }
        let mut lo = 0.0;
        let mut hi = 1.0;
        while self.cumulative_unchecked(hi) < theta {
            lo = hi;
            hi *= 2.0;
            if hi > 1e12 {
                return domain(format!("theta {theta} is beyond the clock range"));
            }
        }
        while hi - lo > INVERSE_TOL {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.cumulative_unchecked(mid) < theta {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Checks `h > 0` on a uniform grid over `[0, horizon]`.
    pub fn validate(&self, horizon: f64) -> Result<()> {
        let n = 256;
        for i in 0..=n {
            let u = horizon * i as f64 / n as f64;
            let h = self.h(u);
            if !(h.is_finite() && h > 0.0) {
                return Err(FptError::SingularClock(u));
            }
        }
        Ok(())
    }
}

/// Fritsch–Carlson monotone cubic interpolant of `h²` with exactly
/// integrated cumulative variance. Beyond the last knot `h²` is held
/// constant.
#[derive(Debug, Clone)]
pub struct TabulatedVariance {
    knots: Vec<f64>,
    q: Vec<f64>,
    slopes: Vec<f64>,
    cumulative: Vec<f64>,
}

impl TabulatedVariance {
    pub fn new(knots: Vec<f64>, h_values: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 || knots.len() != h_values.len() {
            return domain("tabulated clock needs at least two knots and matching values");
        }
        if knots[0] != 0.0 {
            return domain("tabulated clock must start at u = 0");
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return domain("tabulated clock knots must be strictly increasing");
        }
        if let Some(&bad) = h_values.iter().find(|h| !(h.is_finite() && **h > 0.0)) {
            return Err(FptError::Domain(format!("tabulated h must be positive, got {bad}")));
        }
        let q: Vec<f64> = h_values.iter().map(|h| h * h).collect();
        let n = knots.len();
        let delta: Vec<f64> = (0..n - 1)
            .map(|i| (q[i + 1] - q[i]) / (knots[i + 1] - knots[i]))
            .collect();
        let mut slopes = vec![0.0; n];
        slopes[0] = delta[0];
        slopes[n - 1] = delta[n - 2];
        for i in 1..n - 1 {
            slopes[i] = if delta[i - 1] * delta[i] <= 0.0 {
                0.0
            } else {
                0.5 * (delta[i - 1] + delta[i])
            };
        }
        for i in 0..n - 1 {
            if delta[i] == 0.0 {
                slopes[i] = 0.0;
                slopes[i + 1] = 0.0;
                continue;
            }
            let alpha = slopes[i] / delta[i];
            let beta = slopes[i + 1] / delta[i];
            // Endpoint slopes of opposite sign would overshoot.
            if alpha < 0.0 {
                slopes[i] = 0.0;
            }
            if beta < 0.0 {
                slopes[i + 1] = 0.0;
            }
            let r = alpha * alpha + beta * beta;
            if r > 9.0 {
                let tau = 3.0 / r.sqrt();
                slopes[i] = tau * alpha * delta[i];
                slopes[i + 1] = tau * beta * delta[i];
            }
        }
        let mut table = Self {
            knots,
            q,
            slopes,
            cumulative: vec![0.0; n],
        };
        for i in 1..n {
            let width = table.knots[i] - table.knots[i - 1];
            let piece = table.piece_integral(i - 1, width);
            table.cumulative[i] = table.cumulative[i - 1] + piece;
        }
        Ok(table)
    }

    fn locate(&self, u: f64) -> usize {
        match self.knots.binary_search_by(|k| k.total_cmp(&u)) {
            Ok(i) => i.min(self.knots.len() - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(self.knots.len() - 2),
        }
    }

    fn q(&self, u: f64) -> f64 {
        let last = self.knots.len() - 1;
        if u >= self.knots[last] {
            return self.q[last];
        }
        if u <= 0.0 {
            return self.q[0];
        }
        let i = self.locate(u);
        let width = self.knots[i + 1] - self.knots[i];
        let s = (u - self.knots[i]) / width;
        let (s2, s3) = (s * s, s * s * s);
        (2.0 * s3 - 3.0 * s2 + 1.0) * self.q[i]
            + (s3 - 2.0 * s2 + s) * width * self.slopes[i]
            + (-2.0 * s3 + 3.0 * s2) * self.q[i + 1]
            + (s3 - s2) * width * self.slopes[i + 1]
    }

    fn q_prime(&self, u: f64) -> f64 {
        let last = self.knots.len() - 1;
        if u >= self.knots[last] || u < 0.0 {
            return 0.0;
        }
        let i = self.locate(u);
        let width = self.knots[i + 1] - self.knots[i];
        let s = (u - self.knots[i]) / width;
        let s2 = s * s;
        ((6.0 * s2 - 6.0 * s) * self.q[i]
            + (3.0 * s2 - 4.0 * s + 1.0) * width * self.slopes[i]
            + (-6.0 * s2 + 6.0 * s) * self.q[i + 1]
            + (3.0 * s2 - 2.0 * s) * width * self.slopes[i + 1])
            / width
    }

    /// `∫` of the interpolant over `[knot_i, knot_i + x]`.
    fn piece_integral(&self, i: usize, x: f64) -> f64 {
        let width = self.knots[i + 1] - self.knots[i];
        let s = x / width;
        let (s2, s3, s4) = (s * s, s * s * s, s * s * s * s);
        width
            * ((0.5 * s4 - s3 + s) * self.q[i]
                + (0.25 * s4 - 2.0 * s3 / 3.0 + 0.5 * s2) * width * self.slopes[i]
                + (-0.5 * s4 + s3) * self.q[i + 1]
                + (0.25 * s4 - s3 / 3.0) * width * self.slopes[i + 1])
    }

    fn integral(&self, t: f64) -> f64 {
        let last = self.knots.len() - 1;
        if t <= 0.0 {
            return self.q[0] * t;
        }
        if t >= self.knots[last] {
            return self.cumulative[last] + self.q[last] * (t - self.knots[last]);
        }
        let i = self.locate(t);
        self.cumulative[i] + self.piece_integral(i, t - self.knots[i])
    }
}
