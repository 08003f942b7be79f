//! Residual suite: every kernel checked against the equations it solves.

use std::fmt;

use crate::boundary::MovingBoundary;
use crate::bridge_kernel::{free_kernel, image_kernel, BridgeLaw};
use crate::clock::VolatilityClock;
use crate::error::Result;
use crate::gauge::{h_transform_prefactors, GaugeAnchors, GaugeFunctions, GAUGE_STEPS};
use crate::numerics::residual::{
    check_backward_residual, check_forward_residual, observed_orders, refinement_study, BackwardPde, ForwardPde,
    ResidualGrid, ResidualReport,
};
use crate::propagator::schrodinger_kernel;

/// Refinement levels used for the order measurement.
pub const LEVELS: usize = 3;

#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub name: &'static str,
    /// `None` for checks that are reported but not required to pass.
    pub threshold: Option<f64>,
    /// Reports at successively halved steps; the last is the finest.
    pub reports: Vec<ResidualReport>,
    pub orders: Vec<f64>,
}

impl SuiteEntry {
    pub fn finest(&self) -> &ResidualReport {
        self.reports.last().expect("at least one level")
    }

    pub fn min_order(&self) -> f64 {
        self.orders.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn passed(&self) -> bool {
        match self.threshold {
            Some(t) => self.finest().max_residual < t,
            None => true,
        }
    }
}

impl fmt::Display for SuiteEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = match self.threshold {
            Some(_) if self.passed() => "PASS",
            Some(_) => "FAIL",
            None => "INFO",
        };
        let threshold = self.threshold.map_or("-".to_string(), |t| format!("{t:.0e}"));
        write!(
            f,
            "{status}  {:<44} residual={:.3e}  threshold={threshold:<6} min order={:.2}",
            self.name,
            self.finest().max_residual,
            self.min_order()
        )
    }
}

fn entry(
    name: &'static str,
    threshold: Option<f64>,
    grid: ResidualGrid,
    check: impl FnMut(&ResidualGrid) -> Result<ResidualReport>,
) -> Result<SuiteEntry> {
    let reports = refinement_study(&grid, LEVELS, check)?;
    let orders = observed_orders(&reports);
    Ok(SuiteEntry {
        name,
        threshold,
        reports,
        orders,
    })
}

/// Runs the suite on the shipped scenarios: unit and exponential clocks,
/// bridges from `a = 1` to 0 at `s = 1`, and `β' ≡ 2` for the gauge kernels.
pub fn run_suite() -> Result<Vec<SuiteEntry>> {
    let unit = VolatilityClock::unit();
    let expo = VolatilityClock::exponential(0.5)?;
    let s = 1.0;
    let (dt, dx) = (0.02, 0.04);
    // Heat-level checks have the tighter threshold.
    let dt_heat = 0.002;
    let mut out = Vec::new();

    let back = ResidualGrid::uniform((0.1, 0.4), 4, (-0.8, 1.2), 6, dt_heat, dx).avoiding(0.6);
    out.push(entry("free kernel, backward heat", Some(1e-4), back, |g| {
        check_backward_residual(|t, x| free_kernel(&unit, t, x, 0.6, 0.4).unwrap(), BackwardPde::Heat, &unit, None, s, g)
    })?);

    // Clock time σ = H(τ): the image kernel solves p_σ = ½p_yy.
    let h_total = expo.cumulative_variance(1.0)?;
    let clock_grid = ResidualGrid::uniform((0.3 * h_total, 0.8 * h_total), 4, (0.5, 1.8), 6, dt_heat, dx).avoiding(0.0);
    out.push(entry("image kernel, clock-time heat", Some(1e-4), clock_grid, |g| {
        check_forward_residual(
            |sigma, y| image_kernel(&expo, 0.0, 0.8, expo.inverse_clock(sigma).unwrap(), y).unwrap(),
            ForwardPde::Heat,
            &unit,
            None,
            s,
            g,
        )
    })?);

    for (name_b, name_f, clock) in [
        ("bridge transition, backward (unit clock)", "bridge transition, forward (unit clock)", &unit),
        ("bridge transition, backward (exp clock)", "bridge transition, forward (exp clock)", &expo),
    ] {
        let law = BridgeLaw::new(clock.clone(), 1.0, s)?;
        let back = ResidualGrid::uniform((0.1, 0.3), 3, (0.5, 1.5), 5, dt * 0.5, dx).avoiding(0.5);
        out.push(entry(name_b, Some(1e-3), back, |g| {
            check_backward_residual(
                |t, x| law.transition(t, x, 0.5, 0.7).unwrap(),
                BackwardPde::Bridge,
                clock,
                None,
                s,
                g,
            )
        })?);
        let fwd = ResidualGrid::uniform((0.35, 0.7), 3, (0.4, 1.2), 5, dt * 0.5, dx).avoiding(0.1);
        out.push(entry(name_f, Some(1e-3), fwd, |g| {
            check_forward_residual(
                |tau, y| law.transition(0.1, 1.0, tau, y).unwrap(),
                ForwardPde::Bridge,
                clock,
                None,
                s,
                g,
            )
        })?);
    }

    // Reduction chain of the bridge kernel, unit and exponential clocks.
    let law = BridgeLaw::new(expo.clone(), 1.0, s)?;
    let pre = h_transform_prefactors(&expo, s)?;
    let back = ResidualGrid::uniform((0.1, 0.3), 3, (0.5, 1.5), 5, dt * 0.5, dx).avoiding(0.5);
    out.push(entry("h-transformed bridge u1, backward", Some(1e-3), back, |g| {
        check_backward_residual(
            |t, x| {
                let u = law.transition(t, x, 0.5, 0.7).unwrap();
                u / (pre.b(t).unwrap() * (pre.a(t).unwrap() * x * x).exp())
            },
            BackwardPde::ReducedU1,
            &expo,
            None,
            s,
            g,
        )
    })?);
    let v1 = |tau: f64, y: f64| {
        let p = law.transition(0.1, 1.0, tau, y).unwrap();
        p / (pre.b_tilde(tau).unwrap() * (pre.a_tilde(tau).unwrap() * y * y).exp())
    };
    let fwd = ResidualGrid::uniform((0.35, 0.7), 3, (0.4, 1.2), 5, dt * 0.5, dx).avoiding(0.1);
    out.push(entry("h-transformed bridge v1, forward", Some(1e-3), fwd.clone(), |g| {
        check_forward_residual(v1, ForwardPde::ReducedV1, &expo, None, s, g)
    })?);
    out.push(entry("h-transformed bridge v2 = v1/y, forward", Some(1e-3), fwd.clone(), |g| {
        check_forward_residual(|tau, y| v1(tau, y) / y, ForwardPde::ReducedV2, &expo, None, s, g)
    })?);
    let fwd_heat = ResidualGrid { dt: dt_heat, ..fwd.clone() };
    out.push(entry("h-transformed bridge v3 = R v1/y, forward", Some(1e-4), fwd_heat, |g| {
        check_forward_residual(
            |tau, y| expo.variance_between(tau, s).unwrap() * v1(tau, y) / y,
            ForwardPde::ReducedV3,
            &expo,
            None,
            s,
            g,
        )
    })?);
    // The alternative constant Ã = −1/(s R) breaks the v1 equation unless s = 2.
    let law_s = BridgeLaw::new(unit.clone(), 1.0, 1.5)?;
    let fwd_s = ResidualGrid::uniform((0.35, 0.7), 3, (0.4, 1.2), 5, dt * 0.5, dx).avoiding(0.1);
    out.push(entry("v1 with A~ = -1/(sR) (s = 1.5)", None, fwd_s, |g| {
        check_forward_residual(
            |tau, y| {
                let r = unit.variance_between(tau, 1.5).unwrap();
                let p = law_s.transition(0.1, 1.0, tau, y).unwrap();
                p / (r.powf(-0.5) * (-y * y / (1.5 * r)).exp())
            },
            ForwardPde::ReducedV1,
            &unit,
            None,
            1.5,
            g,
        )
    })?);

    // Gauge kernels with β' ≡ 2.
    let quad = MovingBoundary::quadratic(1.0, 0.0, 1.0);
    let default_gauge = GaugeFunctions::solve(&quad, &unit, 0.0, s, GaugeAnchors::default(), GAUGE_STEPS)?;
    let mirrored = GaugeFunctions::solve(&quad, &unit, 0.0, s, GaugeAnchors::Mirrored, GAUGE_STEPS)?;
    let back = ResidualGrid::uniform((0.1, 0.3), 3, (0.5, 1.5), 5, dt * 0.5, dx).avoiding(0.6);
    for (name, gauge) in [
        ("gauge kernel, backward Schrodinger (default)", &default_gauge),
        ("gauge kernel, backward Schrodinger (mirrored)", &mirrored),
    ] {
        out.push(entry(name, Some(1e-3), back.clone(), |g| {
            check_backward_residual(
                |t, x| schrodinger_kernel(gauge, &unit, t, x, 0.6, 1.2).unwrap().value,
                BackwardPde::Schrodinger,
                &unit,
                Some(&quad),
                s,
                g,
            )
        })?);
    }
    let passage = |t: f64, x: f64| crate::level_hitting::passage_kernel(&unit, t, x, s, 0.0).unwrap();
    out.push(entry("bridge-normalized gauge kernel, backward", Some(1e-3), back.clone(), |g| {
        check_backward_residual(
            |t, x| schrodinger_kernel(&default_gauge, &unit, t, x, 0.6, 1.2).unwrap().value * passage(0.6, 1.2) / passage(t, x),
            BackwardPde::BridgeSchrodinger,
            &unit,
            Some(&quad),
            s,
            g,
        )
    })?);
    let fwd = ResidualGrid::uniform((0.3, 0.6), 3, (0.6, 1.5), 5, dt * 0.5, dx).avoiding(0.1);
    out.push(entry("gauge kernel, forward Schrodinger (mirrored)", Some(1e-3), fwd.clone(), |g| {
        check_forward_residual(
            |tau, y| schrodinger_kernel(&mirrored, &unit, 0.1, 0.8, tau, y).unwrap().value,
            ForwardPde::Schrodinger,
            &unit,
            Some(&quad),
            s,
            g,
        )
    })?);
    out.push(entry("gauge kernel, forward Schrodinger (default)", None, fwd, |g| {
        check_forward_residual(
            |tau, y| schrodinger_kernel(&default_gauge, &unit, 0.1, 0.8, tau, y).unwrap().value,
            ForwardPde::Schrodinger,
            &unit,
            Some(&quad),
            s,
            g,
        )
    })?);
    Ok(out)
}
