//! Gauge functions that strip the linear potential `β'(t)·a` from the
//! Kolmogorov equations, and the quadratic h-transform prefactors.
//!
//! The gauge ODEs are
//!
//! ```text
//! π'(t) = β'(t)      v'(t) = −h²(t) π(t)
//! π̃'(τ) = −β'(τ)    ṽ'(τ) =  h²(τ) π̃(τ)
//! ```
//!
//! together with the action `S(t, τ) = ½ ∫ₜ^τ h² π² du`. Integration
//! constants are not fixed by the equations; [`GaugeAnchors`] chooses them.

use crate::boundary::MovingBoundary;
use crate::clock::VolatilityClock;
use crate::error::{domain, FptError, Result};
use crate::numerics::ode::rk4;

/// Default number of RK4 steps across `[t_start, s]`.
pub const GAUGE_STEPS: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorPoint {
    Start,
    End,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Anchor {
    pub at: AnchorPoint,
    pub value: f64,
}

impl Anchor {
    pub const fn start(value: f64) -> Self {
        Self { at: AnchorPoint::Start, value }
    }

    pub const fn end(value: f64) -> Self {
        Self { at: AnchorPoint::End, value }
    }
}

/// How the four integration constants are fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GaugeAnchors {
    /// Each function anchored on its own.
    Independent {
        pi: Anchor,
        v: Anchor,
        pi_tilde: Anchor,
        v_tilde: Anchor,
    },
    /// `π̃ = −π`, `ṽ = v`, with `v(t_start) = v(s) = 0`; this pins the
    /// constant in `π` as well.
    Mirrored,
}

impl GaugeAnchors {
    /// Backward functions vanish at `s`, forward functions at `t_start`.
    pub const TERMINAL_INITIAL: GaugeAnchors = GaugeAnchors::Independent {
        pi: Anchor::end(0.0),
        v: Anchor::end(0.0),
        pi_tilde: Anchor::start(0.0),
        v_tilde: Anchor::start(0.0),
    };
}

impl Default for GaugeAnchors {
    fn default() -> Self {
        Self::TERMINAL_INITIAL
    }
}

/// Tabulated solution of the gauge ODEs on a uniform grid, evaluated off
/// the grid by cubic Hermite interpolation with the exact ODE slopes.
#[derive(Debug, Clone)]
pub struct GaugeFunctions {
    t_start: f64,
    s: f64,
    step: f64,
    h2: Vec<f64>,
    beta_prime: Vec<f64>,
    pi: Vec<f64>,
    v: Vec<f64>,
    pi_tilde: Vec<f64>,
    v_tilde: Vec<f64>,
    /// `½ ∫_{t_start}^{u} h² π² du` at the nodes.
    action_cum: Vec<f64>,
    anchors: GaugeAnchors,
}

/// Solves the gauge ODEs on `[t_start, s]` with the default anchors.
pub fn solve_gauge(boundary: &MovingBoundary, clock: &VolatilityClock, t_start: f64, s: f64) -> Result<GaugeFunctions> {
    GaugeFunctions::solve(boundary, clock, t_start, s, GaugeAnchors::default(), GAUGE_STEPS)
}

impl GaugeFunctions {
    pub fn solve(
        boundary: &MovingBoundary,
        clock: &VolatilityClock,
        t_start: f64,
        s: f64,
        anchors: GaugeAnchors,
        steps: usize,
    ) -> Result<Self> {
        if !(t_start >= 0.0 && s > t_start) {
            return domain(format!("gauge needs 0 <= t_start < s, got ({t_start}, {s})"));
        }
        if steps < 2 {
            return domain("gauge needs at least two steps");
        }
        let step = (s - t_start) / steps as f64;
        // β' on the half-step grid used by RK4.
        let mut half_grid = Vec::with_capacity(2 * steps + 1);
        for k in 0..=2 * steps {
            let u = if k == 2 * steps { s } else { t_start + 0.5 * step * k as f64 };
            let bp = boundary.beta_prime(clock, u)?;
            if !bp.is_finite() {
                return Err(FptError::IllPosedBoundary(format!("beta' is not finite at u = {u}")));
            }
            half_grid.push(bp);
        }
        let lookup = |u: f64| {
            let k = ((u - t_start) / (0.5 * step)).round() as usize;
            half_grid[k.min(2 * steps)]
        };
        // State: P = ∫β', V = −∫h²P, Q = ½∫h²P², all zero at t_start.
        let (times, states) = rk4(
            |u, y: &[f64; 3]| {
                let h2 = clock.h2(u);
                [lookup(u), -h2 * y[0], 0.5 * h2 * y[0] * y[0]]
            },
            t_start,
            [0.0; 3],
            s,
            steps,
        );
        let h_start = clock.cumulative_unchecked(t_start);
        let dh: Vec<f64> = times.iter().map(|&u| clock.cumulative_unchecked(u) - h_start).collect();
        let last = steps;
        let (p_end, v_end, dh_end) = (states[last][0], states[last][1], dh[last]);

        let (c_pi, c_v, c_pt, c_vt) = match anchors {
            GaugeAnchors::Independent { pi, v, pi_tilde, v_tilde } => {
                let c_pi = match pi.at {
                    AnchorPoint::Start => pi.value,
                    AnchorPoint::End => pi.value - p_end,
                };
                let c_v = match v.at {
                    AnchorPoint::Start => v.value,
                    AnchorPoint::End => v.value - v_end + c_pi * dh_end,
                };
                let c_pt = match pi_tilde.at {
                    AnchorPoint::Start => pi_tilde.value,
                    AnchorPoint::End => pi_tilde.value + p_end,
                };
                let c_vt = match v_tilde.at {
                    AnchorPoint::Start => v_tilde.value,
                    AnchorPoint::End => v_tilde.value - v_end - c_pt * dh_end,
                };
                (c_pi, c_v, c_pt, c_vt)
            }
            GaugeAnchors::Mirrored => {
                let c_pi = v_end / dh_end;
                (c_pi, 0.0, -c_pi, 0.0)
            }
        };

        let n = steps + 1;
        let mut out = Self {
            t_start,
            s,
            step,
            h2: Vec::with_capacity(n),
            beta_prime: Vec::with_capacity(n),
            pi: Vec::with_capacity(n),
            v: Vec::with_capacity(n),
            pi_tilde: Vec::with_capacity(n),
            v_tilde: Vec::with_capacity(n),
            action_cum: Vec::with_capacity(n),
            anchors,
        };
        for (i, (&u, y)) in times.iter().zip(&states).enumerate() {
            let (p, v, q) = (y[0], y[1], y[2]);
            out.h2.push(clock.h2(u));
            out.beta_prime.push(half_grid[2 * i]);
            out.pi.push(p + c_pi);
            out.v.push(v - c_pi * dh[i] + c_v);
            out.pi_tilde.push(-p + c_pt);
            out.v_tilde.push(v + c_pt * dh[i] + c_vt);
            out.action_cum.push(q - c_pi * v + 0.5 * c_pi * c_pi * dh[i]);
        }
        Ok(out)
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn terminal(&self) -> f64 {
        self.s
    }

    pub fn anchors(&self) -> GaugeAnchors {
        self.anchors
    }

    pub fn nodes(&self) -> usize {
        self.pi.len()
    }

    pub fn node_time(&self, i: usize) -> f64 {
        if i + 1 == self.pi.len() {
            self.s
        } else {
            self.t_start + self.step * i as f64
        }
    }

    fn hermite(&self, u: f64, values: &[f64], slope: impl Fn(usize) -> f64) -> f64 {
        let n = values.len() - 1;
        let x = ((u - self.t_start) / self.step).clamp(0.0, n as f64);
        let i = (x.floor() as usize).min(n - 1);
        let s = x - i as f64;
        let (s2, s3) = (s * s, s * s * s);
        (2.0 * s3 - 3.0 * s2 + 1.0) * values[i]
            + (s3 - 2.0 * s2 + s) * self.step * slope(i)
            + (-2.0 * s3 + 3.0 * s2) * values[i + 1]
            + (s3 - s2) * self.step * slope(i + 1)
    }

    pub fn pi(&self, u: f64) -> f64 {
        self.hermite(u, &self.pi, |i| self.beta_prime[i])
    }

    pub fn v(&self, u: f64) -> f64 {
        self.hermite(u, &self.v, |i| -self.h2[i] * self.pi[i])
    }

    pub fn pi_tilde(&self, u: f64) -> f64 {
        self.hermite(u, &self.pi_tilde, |i| -self.beta_prime[i])
    }

    pub fn v_tilde(&self, u: f64) -> f64 {
        self.hermite(u, &self.v_tilde, |i| self.h2[i] * self.pi_tilde[i])
    }

    fn action_cumulative(&self, u: f64) -> f64 {
        self.hermite(u, &self.action_cum, |i| 0.5 * self.h2[i] * self.pi[i] * self.pi[i])
    }

    /// `S(t, τ) = ½ ∫ₜ^τ h² π² du`.
    pub fn action(&self, t: f64, tau: f64) -> f64 {
        self.action_cumulative(tau) - self.action_cumulative(t)
    }

    /// True when the potential vanishes on the whole grid.
    pub fn is_trivial(&self) -> bool {
        self.beta_prime.iter().all(|b| *b == 0.0)
    }

    /// Smallest `β'` seen on the grid.
    pub fn min_beta_prime(&self) -> f64 {
        self.beta_prime.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Quadratic h-transform prefactors with normalization constants set to 1:
/// `A(t) = 1/(2R(t))`, `B(t) = R(t)^{3/2}` for the backward reduction and
/// `Ã(τ) = −1/(2R(τ))`, `B̃(τ) = R(τ)^{−1/2}` for the forward one, where
/// `R(u) = ∫ᵤˢ h²`.
#[derive(Debug, Clone)]
pub struct HTransformPrefactors {
    clock: VolatilityClock,
    s: f64,
}

pub fn h_transform_prefactors(clock: &VolatilityClock, s: f64) -> Result<HTransformPrefactors> {
    if !(s > 0.0) {
        return domain(format!("prefactors need s > 0, got {s}"));
    }
    Ok(HTransformPrefactors { clock: clock.clone(), s })
}

impl HTransformPrefactors {
    fn remaining(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0 && t < self.s) {
            return domain(format!("prefactor needs 0 <= t < s = {}, got {t}", self.s));
        }
        Ok(self.clock.span(t, self.s))
    }

    pub fn a(&self, t: f64) -> Result<f64> {
        Ok(1.0 / (2.0 * self.remaining(t)?))
    }

    pub fn b(&self, t: f64) -> Result<f64> {
        Ok(self.remaining(t)?.powf(1.5))
    }

    pub fn a_tilde(&self, tau: f64) -> Result<f64> {
        Ok(-1.0 / (2.0 * self.remaining(tau)?))
    }

    pub fn b_tilde(&self, tau: f64) -> Result<f64> {
        Ok(self.remaining(tau)?.powf(-0.5))
    }

    pub fn terminal(&self) -> f64 {
        self.s
    }
}
