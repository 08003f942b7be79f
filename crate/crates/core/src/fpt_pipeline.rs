//! First-passage density and distribution of `T = inf{t : M_t = f(t)}`:
//!
//! ```text
//! φ_T(s) = E[exp{−∫₀ˢ β'Ỹ du}] · exp{−β(s)a + a∫₀ˢβ' − ½∫₀ˢ bβ} · φ_a(s)
//! ```
//!
//! with `a = f(0)`, `b = f'` and `β = b/h²`.

use std::f64::consts::PI;
use std::fmt;

use log::warn;
use rayon::prelude::*;

use crate::boundary::{DerivativeMode, MovingBoundary};
use crate::clock::VolatilityClock;
use crate::error::{domain, FptError, Result};
use crate::level_hitting::LevelHittingLaw;
use crate::numerics::quadrature::{integrate_with, QuadOptions};
use crate::propagator::{bridge_expectation, BridgeExpectation, PropagatorConfig, PropagatorWarning};

/// Relative agreement required between the two forms of the prefactor.
const PREFACTOR_AGREEMENT: f64 = 1e-10;
const PREFACTOR_AGREEMENT_FD: f64 = 1e-6;
const PREFACTOR_QUAD_TOL: f64 = 1e-13;
/// Absolute tolerance of the distribution quadratures.
pub const CDF_TOL: f64 = 1e-10;

fn integral(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> Result<f64> {
    integrate_with(f, lo, hi, QuadOptions::absolute(PREFACTOR_QUAD_TOL).with_rel_tol(1e-13)).map(|r| r.value)
}

/// Starting level and the boundary the pipeline works with, mirrored when
/// `f(0) < 0`.
fn prepared(boundary: &MovingBoundary) -> Result<(MovingBoundary, f64)> {
    let (b, _) = boundary.normalized()?;
    let a = b.f(0.0);
    Ok((b, a))
}

/// `exp{−β(s)a + a∫₀ˢβ' − ½∫₀ˢ bβ}`, cross-checked against the equivalent
/// `exp{−aβ(0) − ½∫₀ˢ bβ}`.
pub fn girsanov_prefactor(boundary: &MovingBoundary, clock: &VolatilityClock, s: f64) -> Result<f64> {
    if !(s > 0.0) || !s.is_finite() {
        return domain(format!("prefactor needs s > 0, got {s}"));
    }
    let (f, a) = prepared(boundary)?;
    let beta_s = f.beta(clock, s)?;
    let beta_0 = f.beta(clock, 0.0)?;
    let b_beta = |u: f64| {
        let fp = f.fprime(u);
        fp * fp / clock.h2(u)
    };
    let int_b_beta = integral(b_beta, 0.0, s)?;
    let int_beta_prime = integral(|u| f.beta_prime(clock, u).unwrap_or(f64::NAN), 0.0, s)?;
    let full = -beta_s * a + a * int_beta_prime - 0.5 * int_b_beta;
    let short = -a * beta_0 - 0.5 * int_b_beta;
    let (pf, ps) = (full.exp(), short.exp());
    if !(pf.is_finite() && ps.is_finite()) {
        return Err(FptError::Consistency(format!("prefactor overflow at s = {s}: exponents {full}, {short}")));
    }
    let tol = match f.mode() {
        DerivativeMode::Analytic => PREFACTOR_AGREEMENT,
        DerivativeMode::FiniteDifference => PREFACTOR_AGREEMENT_FD,
    };
    if (pf - ps).abs() > tol * pf.abs().max(ps.abs()) {
        return Err(FptError::Consistency(format!(
            "prefactor forms disagree at s = {s}: {pf:e} vs {ps:e}"
        )));
    }
    Ok(pf)
}

/// The three factors of the density at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityPoint {
    pub s: f64,
    pub density: f64,
    pub level_density: f64,
    pub prefactor: f64,
    /// `None` when the level density vanished and the expectation was skipped.
    pub expectation: Option<BridgeExpectation>,
}

impl DensityPoint {
    pub fn warnings(&self) -> &[PropagatorWarning] {
        self.expectation.as_ref().map_or(&[], |e| &e.warnings)
    }
}

/// All factors of `φ_T(s)`.
pub fn fpt_density_point(
    boundary: &MovingBoundary,
    clock: &VolatilityClock,
    s: f64,
    cfg: &PropagatorConfig,
) -> Result<DensityPoint> {
    if !(s > 0.0) || !s.is_finite() {
        return domain(format!("density needs s > 0, got {s}"));
    }
    let (f, a) = prepared(boundary)?;
    let law = LevelHittingLaw::new(clock.clone(), a)?;
    let level_density = law.level_density(s)?;
    let prefactor = girsanov_prefactor(&f, clock, s)?;
    if level_density == 0.0 {
        return Ok(DensityPoint {
            s,
            density: 0.0,
            level_density,
            prefactor,
            expectation: None,
        });
    }
    let e = bridge_expectation(&f, clock, 0.0, a, s, cfg)?;
    Ok(DensityPoint {
        s,
        density: e.value * prefactor * level_density,
        level_density,
        prefactor,
        expectation: Some(e),
    })
}

/// `φ_T(s)`.
pub fn fpt_density(boundary: &MovingBoundary, clock: &VolatilityClock, s: f64, cfg: &PropagatorConfig) -> Result<f64> {
    fpt_density_point(boundary, clock, s, cfg).map(|p| p.density)
}

/// `E · prefactor` at `s`, the factor multiplying `φ_a(s)`.
fn weight(f: &MovingBoundary, clock: &VolatilityClock, a: f64, s: f64, cfg: &PropagatorConfig) -> Result<f64> {
    let e = bridge_expectation(f, clock, 0.0, a, s, cfg)?;
    Ok(e.value * girsanov_prefactor(f, clock, s)?)
}

/// Runs a quadrature whose integrand can fail, returning the first error.
fn fallible_quadrature(
    integrand: impl Fn(f64) -> Result<f64>,
    lo: f64,
    hi: f64,
    tol: f64,
) -> Result<f64> {
    let failure = std::sync::Mutex::new(None);
    let value = integrate_with(
        |x| match integrand(x) {
            Ok(v) => v,
            Err(e) => {
                let mut slot = failure.lock().expect("poisoned");
                if slot.is_none() {
                    *slot = Some(e);
                }
                0.0
            }
        },
        lo,
        hi,
        QuadOptions::absolute(tol),
    );
    if let Some(e) = failure.into_inner().expect("poisoned") {
        return Err(e);
    }
    value.map(|r| r.value)
}

/// `P(T ≤ t)`. Substituting `r = a/√(2H(s))` turns `φ_a(s) ds` into
/// `(2/√π) e^{−r²} dr`, which removes the essential singularity at `s = 0`.
pub fn fpt_cdf(boundary: &MovingBoundary, clock: &VolatilityClock, t: f64, cfg: &PropagatorConfig) -> Result<f64> {
    if !(t >= 0.0) || !t.is_finite() {
        return domain(format!("cdf needs finite t >= 0, got {t}"));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let (f, a) = prepared(boundary)?;
    cdf_between(&f, clock, a, 0.0, t, cfg)
}

/// `P(t0 < T ≤ t1)` by the same substitution.
fn cdf_between(
    f: &MovingBoundary,
    clock: &VolatilityClock,
    a: f64,
    t0: f64,
    t1: f64,
    cfg: &PropagatorConfig,
) -> Result<f64> {
    let r_of = |t: f64| -> Result<f64> {
        if t == 0.0 {
            Ok(f64::INFINITY)
        } else {
            Ok(a / (2.0 * clock.cumulative_variance(t)?).sqrt())
        }
    };
    let r_lo = r_of(t1)?;
    // e^{−r²} underflows past r_lo + 27.
    let r_hi = r_of(t0)?.min(r_lo + 27.0);
    if !(r_hi > r_lo) {
        return Ok(0.0);
    }
    let integrand = |r: f64| -> Result<f64> {
        let g = 2.0 / PI.sqrt() * (-r * r).exp();
        if g == 0.0 {
            return Ok(0.0);
        }
        let s = clock.inverse_clock(a * a / (2.0 * r * r))?;
        if !(s > 0.0) {
            return Ok(0.0);
        }
        Ok(g * weight(f, clock, a, s, cfg)?)
    };
    let value = fallible_quadrature(integrand, r_lo, r_hi, CDF_TOL)?;
    Ok(value)
}

#[derive(Debug, Clone, PartialEq)]
pub enum CurveWarning {
    /// Warnings attached to the density at one grid point.
    Point { index: usize, warning: PropagatorWarning },
    /// Distribution mass at the last grid point.
    MassBelowOne { total_mass: f64 },
}

impl fmt::Display for CurveWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Point { index, warning } => write!(f, "s[{index}]: {warning}"),
            Self::MassBelowOne { total_mass } => write!(f, "mass-below-one({total_mass:.6e})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityCurve {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub cdf: Vec<f64>,
    pub total_mass: f64,
    pub warnings: Vec<CurveWarning>,
}

impl DensityCurve {
    /// Warnings of the point at `index`, for per-row output.
    pub fn point_warnings(&self, index: usize) -> Vec<&PropagatorWarning> {
        self.warnings
            .iter()
            .filter_map(|w| match w {
                CurveWarning::Point { index: i, warning } if *i == index => Some(warning),
                _ => None,
            })
            .collect()
    }
}

/// Density and distribution on a grid. Points are evaluated in parallel and
/// assembled in grid order, so the result does not depend on scheduling.
pub fn density_curve(
    boundary: &MovingBoundary,
    clock: &VolatilityClock,
    grid: &[f64],
    cfg: &PropagatorConfig,
) -> Result<DensityCurve> {
    if grid.is_empty() {
        return domain("density grid is empty");
    }
    if !(grid[0] > 0.0) || grid.windows(2).any(|w| !(w[1] > w[0])) || !grid[grid.len() - 1].is_finite() {
        return domain("density grid must be positive, finite and strictly increasing");
    }
    cfg.validate()?;
    let (f, a) = prepared(boundary)?;
    let points: Vec<DensityPoint> = grid
        .par_iter()
        .map(|&s| fpt_density_point(&f, clock, s, cfg))
        .collect::<Result<_>>()?;
    let increments: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let lo = if i == 0 { 0.0 } else { grid[i - 1] };
            cdf_between(&f, clock, a, lo, grid[i], cfg)
        })
        .collect::<Result<_>>()?;
    let mut cdf = Vec::with_capacity(grid.len());
    let mut running = 0.0;
    for inc in increments {
        running += inc;
        cdf.push(running);
    }
    let mut warnings = Vec::new();
    for (index, p) in points.iter().enumerate() {
        for w in p.warnings() {
            warnings.push(CurveWarning::Point { index, warning: w.clone() });
        }
    }
    let total_mass = *cdf.last().expect("non-empty grid");
    if total_mass < 1.0 - 1e-6 {
        warnings.push(CurveWarning::MassBelowOne { total_mass });
    }
    if total_mass > 1.0 + 1e-6 {
        warn!("distribution mass {total_mass:.6e} exceeds 1");
    }
    Ok(DensityCurve {
        grid: grid.to_vec(),
        density: points.iter().map(|p| p.density).collect(),
        cdf,
        total_mass,
        warnings,
    })
}
