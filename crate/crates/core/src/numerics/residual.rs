//! Finite-difference residuals of the Kolmogorov equations satisfied by the
//! kernels. Space derivatives are fourth-order central differences, time
//! derivatives second-order central differences. The residual at a point is
//! `|Σ terms| / max |term|`, so it is scale free.

use std::fmt;

use crate::boundary::MovingBoundary;
use crate::clock::VolatilityClock;
use crate::error::{FptError, Result};

/// Backward equations in the variables `(t, x)`. `R(t) = ∫ₜˢ h²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackwardPde {
    /// `u_t + ½h²u_xx = 0`
    Heat,
    /// `u_t + ½h²u_xx + h²(1/x − x/R)u_x = 0`
    Bridge,
    /// `u_t + ½h²u_xx − β'x u = 0`
    Schrodinger,
    /// `u_t + ½h²u_xx + h²(1/x − x/R)u_x − β'x u = 0`
    BridgeSchrodinger,
    /// `u_t + ½h²u_xx + (h²/x)u_x = 0`, the bridge equation after the
    /// quadratic h-transform.
    ReducedU1,
}

/// Forward equations in the variables `(τ, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardPde {
    /// `p_τ = ½h²p_yy`
    Heat,
    /// `p_τ = ½h²p_yy − (μp)_y` with `μ = h²(1/y − y/R)`.
    Bridge,
    /// `p_τ = ½h²p_yy − β'y p`
    Schrodinger,
    /// Bridge plus the potential `−β'y p`.
    BridgeSchrodinger,
    /// `p_τ = ½h²p_yy − (h²/y)p_y + h²(1/y² + 1/R)p`
    ReducedV1,
    /// `p_τ = ½h²p_yy + (h²/R)p`
    ReducedV2,
    /// `p_τ = ½h²p_yy`, the end of the reduction chain.
    ReducedV3,
}

impl BackwardPde {
    fn singular_in_space(self) -> bool {
        !matches!(self, Self::Heat | Self::Schrodinger)
    }

    fn uses_remaining(self) -> bool {
        matches!(self, Self::Bridge | Self::BridgeSchrodinger)
    }

    fn uses_potential(self) -> bool {
        matches!(self, Self::Schrodinger | Self::BridgeSchrodinger)
    }
}

impl ForwardPde {
    fn singular_in_space(self) -> bool {
        matches!(self, Self::Bridge | Self::BridgeSchrodinger | Self::ReducedV1)
    }

    fn uses_remaining(self) -> bool {
        matches!(self, Self::Bridge | Self::BridgeSchrodinger | Self::ReducedV1 | Self::ReducedV2)
    }

    fn uses_potential(self) -> bool {
        matches!(self, Self::Schrodinger | Self::BridgeSchrodinger)
    }
}

/// Which equation a report refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdeId {
    Backward(BackwardPde),
    Forward(ForwardPde),
}

impl fmt::Display for PdeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PdeId::Backward(p) => write!(f, "backward {p:?}"),
            PdeId::Forward(p) => write!(f, "forward {p:?}"),
        }
    }
}

/// Interior evaluation grid and finite-difference steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualGrid {
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    pub dt: f64,
    pub dx: f64,
    /// The kernel's other time argument, which stencils must not touch.
    pub avoid_time: Option<f64>,
}

impl ResidualGrid {
    /// `nt × nx` points spread uniformly over the closed ranges.
    pub fn uniform(times: (f64, f64), nt: usize, states: (f64, f64), nx: usize, dt: f64, dx: f64) -> Self {
        let spread = |(lo, hi): (f64, f64), n: usize| -> Vec<f64> {
            if n <= 1 {
                vec![0.5 * (lo + hi)]
            } else {
                (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
            }
        };
        Self {
            times: spread(times, nt),
            states: spread(states, nx),
            dt,
            dx,
            avoid_time: None,
        }
    }

    pub fn avoiding(mut self, time: f64) -> Self {
        self.avoid_time = Some(time);
        self
    }

    /// Same points with both steps scaled by `factor`.
    pub fn with_steps_scaled(&self, factor: f64) -> Self {
        Self {
            dt: self.dt * factor,
            dx: self.dx * factor,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub pde: PdeId,
    pub points: usize,
    pub dt: f64,
    pub dx: f64,
    pub max_residual: f64,
    /// `(time, state)` of the worst point.
    pub location: (f64, f64),
}

impl fmt::Display for ResidualReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<28} points={:<5} dt={:<8.2e} dx={:<8.2e} max={:.3e} at (t={:.4}, x={:.4})",
            self.pde.to_string(),
            self.points,
            self.dt,
            self.dx,
            self.max_residual,
            self.location.0,
            self.location.1
        )
    }
}

struct Derivatives {
    u: f64,
    ut: f64,
    ux: f64,
    uxx: f64,
}

fn derivatives(kernel: &impl Fn(f64, f64) -> f64, t: f64, x: f64, dt: f64, dx: f64) -> Derivatives {
    let u = kernel(t, x);
    let (p1, p2) = (kernel(t, x + dx), kernel(t, x + 2.0 * dx));
    let (m1, m2) = (kernel(t, x - dx), kernel(t, x - 2.0 * dx));
    Derivatives {
        u,
        ut: (kernel(t + dt, x) - kernel(t - dt, x)) / (2.0 * dt),
        ux: (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * dx),
        uxx: (-p2 + 16.0 * p1 - 30.0 * u + 16.0 * m1 - m2) / (12.0 * dx * dx),
    }
}

fn relative(terms: &[f64]) -> f64 {
    let scale = terms.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        0.0
    } else {
        terms.iter().sum::<f64>().abs() / scale
    }
}

struct Coefficients<'a> {
    clock: &'a VolatilityClock,
    boundary: Option<&'a MovingBoundary>,
    s: f64,
}

impl Coefficients<'_> {
    fn beta_prime(&self, t: f64) -> Result<f64> {
        match self.boundary {
            Some(b) => b.beta_prime(self.clock, t),
            None => Err(FptError::Grid("equation with potential needs a boundary".into())),
        }
    }

    fn remaining(&self, t: f64) -> f64 {
        self.clock.span(t, self.s)
    }
}

fn check_grid(grid: &ResidualGrid, singular_space: bool, terminal: Option<f64>) -> Result<()> {
    if !(grid.dt > 0.0 && grid.dx > 0.0) || grid.times.is_empty() || grid.states.is_empty() {
        return Err(FptError::Grid("residual grid needs points and positive steps".into()));
    }
    for &t in &grid.times {
        if t - grid.dt < 0.0 {
            return Err(FptError::Grid(format!("time stencil at {t} crosses 0")));
        }
        if let Some(s) = terminal {
            if t + grid.dt >= s {
                return Err(FptError::Grid(format!("time stencil at {t} reaches the terminal time {s}")));
            }
        }
        if let Some(avoid) = grid.avoid_time {
            if (t - avoid).abs() <= grid.dt {
                return Err(FptError::Grid(format!("time stencil at {t} touches the singular time {avoid}")));
            }
        }
    }
    if singular_space {
        if let Some(&x) = grid.states.iter().find(|&&x| x - 2.0 * grid.dx <= 0.0) {
            return Err(FptError::Grid(format!("space stencil at {x} touches 0")));
        }
    }
    Ok(())
}

fn scan(
    grid: &ResidualGrid,
    pde: PdeId,
    mut residual_at: impl FnMut(f64, f64) -> Result<f64>,
) -> Result<ResidualReport> {
    let mut worst = (0.0, (grid.times[0], grid.states[0]));
    for &t in &grid.times {
        for &x in &grid.states {
            let r = residual_at(t, x)?;
            if !r.is_finite() {
                return Err(FptError::Grid(format!("non-finite residual at ({t}, {x})")));
            }
            if r > worst.0 {
                worst = (r, (t, x));
            }
        }
    }
    Ok(ResidualReport {
        pde,
        points: grid.times.len() * grid.states.len(),
        dt: grid.dt,
        dx: grid.dx,
        max_residual: worst.0,
        location: worst.1,
    })
}

/// Residual of a backward equation for `kernel(t, x)`, with `s` the
/// terminal time of the bridge (used by the bridge-type equations).
pub fn check_backward_residual(
    kernel: impl Fn(f64, f64) -> f64,
    pde: BackwardPde,
    clock: &VolatilityClock,
    boundary: Option<&MovingBoundary>,
    s: f64,
    grid: &ResidualGrid,
) -> Result<ResidualReport> {
    let terminal = (pde.uses_remaining() || pde == BackwardPde::ReducedU1).then_some(s);
    check_grid(grid, pde.singular_in_space(), terminal)?;
    let coeff = Coefficients { clock, boundary, s };
    scan(grid, PdeId::Backward(pde), |t, x| {
        let d = derivatives(&kernel, t, x, grid.dt, grid.dx);
        let h2 = clock.h2(t);
        let diffusion = 0.5 * h2 * d.uxx;
        let drift = match pde {
            BackwardPde::Heat | BackwardPde::Schrodinger => 0.0,
            BackwardPde::Bridge | BackwardPde::BridgeSchrodinger => h2 * (1.0 / x - x / coeff.remaining(t)) * d.ux,
            BackwardPde::ReducedU1 => h2 / x * d.ux,
        };
        let potential = if pde.uses_potential() {
            -coeff.beta_prime(t)? * x * d.u
        } else {
            0.0
        };
        Ok(relative(&[d.ut, diffusion, drift, potential]))
    })
}

/// Residual of a forward equation for `kernel(τ, y)`.
pub fn check_forward_residual(
    kernel: impl Fn(f64, f64) -> f64,
    pde: ForwardPde,
    clock: &VolatilityClock,
    boundary: Option<&MovingBoundary>,
    s: f64,
    grid: &ResidualGrid,
) -> Result<ResidualReport> {
    check_grid(grid, pde.singular_in_space(), pde.uses_remaining().then_some(s))?;
    let coeff = Coefficients { clock, boundary, s };
    scan(grid, PdeId::Forward(pde), |tau, y| {
        let d = derivatives(&kernel, tau, y, grid.dt, grid.dx);
        let h2 = clock.h2(tau);
        let diffusion = 0.5 * h2 * d.uxx;
        let mut terms = vec![-d.ut, diffusion];
        match pde {
            ForwardPde::Heat | ForwardPde::ReducedV3 | ForwardPde::Schrodinger => {}
            ForwardPde::Bridge | ForwardPde::BridgeSchrodinger => {
                let r = coeff.remaining(tau);
                let mu = h2 * (1.0 / y - y / r);
                let mu_y = -h2 * (1.0 / (y * y) + 1.0 / r);
                terms.push(-mu * d.ux);
                terms.push(-mu_y * d.u);
            }
            ForwardPde::ReducedV1 => {
                let r = coeff.remaining(tau);
                terms.push(-h2 / y * d.ux);
                terms.push(h2 * (1.0 / (y * y) + 1.0 / r) * d.u);
            }
            ForwardPde::ReducedV2 => terms.push(h2 / coeff.remaining(tau) * d.u),
        }
        if pde.uses_potential() {
            terms.push(-coeff.beta_prime(tau)? * y * d.u);
        }
        Ok(relative(&terms))
    })
}

/// Observed orders `log2(r_k / r_{k+1})` for reports produced at steps
/// halving from one to the next.
pub fn observed_orders(reports: &[ResidualReport]) -> Vec<f64> {
    reports
        .windows(2)
        .map(|w| (w[0].max_residual / w[1].max_residual).log2())
        .collect()
}

/// Runs `check` on `levels` successively halved step sizes.
pub fn refinement_study(
    grid: &ResidualGrid,
    levels: usize,
    mut check: impl FnMut(&ResidualGrid) -> Result<ResidualReport>,
) -> Result<Vec<ResidualReport>> {
    (0..levels)
        .map(|k| check(&grid.with_steps_scaled(0.5f64.powi(k as i32))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge_kernel::{free_kernel, image_kernel};

    #[test]
    fn constant_kernel_has_zero_residual() {
        let grid = ResidualGrid::uniform((0.2, 0.8), 4, (-1.0, 1.0), 5, 1e-3, 1e-2);
        let unit = VolatilityClock::unit();
        let r = check_forward_residual(|_, _| 3.5, ForwardPde::Heat, &unit, None, 1.0, &grid).unwrap();
        assert_eq!(r.max_residual, 0.0);
    }

    #[test]
    fn heat_kernel_in_both_arguments() {
        let unit = VolatilityClock::unit();
        let grid = ResidualGrid::uniform((0.1, 0.6), 5, (-1.0, 1.5), 7, 2.5e-4, 1e-2).avoiding(1.0);
        let back = check_backward_residual(
            |t, x| free_kernel(&unit, t, x, 1.0, 0.3).unwrap(),
            BackwardPde::Heat,
            &unit,
            None,
            1.0,
            &grid,
        )
        .unwrap();
        assert!(back.max_residual < 1e-4, "{back}");
        let grid = ResidualGrid::uniform((0.4, 1.2), 5, (-1.0, 1.5), 7, 1e-3, 1e-2).avoiding(0.0);
        let fwd = check_forward_residual(
            |tau, y| free_kernel(&unit, 0.0, 0.3, tau, y).unwrap(),
            ForwardPde::Heat,
            &unit,
            None,
            2.0,
            &grid,
        )
        .unwrap();
        assert!(fwd.max_residual < 1e-4, "{fwd}");
    }

    #[test]
    fn image_kernel_under_a_clock() {
        let clock = VolatilityClock::exponential(0.4).unwrap();
        let grid = ResidualGrid::uniform((0.3, 1.0), 4, (0.2, 2.0), 6, 1e-3, 1e-2).avoiding(0.0);
        let r = check_forward_residual(
            |tau, y| image_kernel(&clock, 0.0, 0.8, tau, y).unwrap(),
            ForwardPde::Heat,
            &clock,
            None,
            2.0,
            &grid,
        )
        .unwrap();
        assert!(r.max_residual < 1e-4, "{r}");
    }

    #[test]
    fn grid_touching_singular_lines_is_rejected() {
        let unit = VolatilityClock::unit();
        let k = |_: f64, _: f64| 1.0;
        let grid = ResidualGrid::uniform((0.2, 0.5), 2, (0.01, 1.0), 3, 1e-3, 1e-2);
        let err = check_backward_residual(k, BackwardPde::Bridge, &unit, None, 1.0, &grid).unwrap_err();
        assert!(matches!(err, FptError::Grid(_)));
        let grid = ResidualGrid::uniform((0.2, 0.9995), 2, (0.5, 1.0), 3, 1e-3, 1e-2);
        assert!(check_backward_residual(k, BackwardPde::Bridge, &unit, None, 1.0, &grid).is_err());
        let grid = ResidualGrid::uniform((0.2, 0.5), 2, (0.5, 1.0), 3, 1e-3, 1e-2).avoiding(0.5);
        assert!(check_forward_residual(k, ForwardPde::Heat, &unit, None, 1.0, &grid).is_err());
        let grid = ResidualGrid::uniform((0.2, 0.5), 2, (0.5, 1.0), 3, 1e-3, 1e-2);
        assert!(check_forward_residual(k, ForwardPde::Schrodinger, &unit, None, 1.0, &grid).is_err());
    }

    #[test]
    fn residual_shrinks_at_second_order() {
        let unit = VolatilityClock::unit();
        let grid = ResidualGrid::uniform((0.3, 0.7), 3, (0.5, 1.5), 5, 4e-2, 8e-2).avoiding(0.0);
        let reports = refinement_study(&grid, 3, |g| {
            check_forward_residual(
                |tau, y| image_kernel(&unit, 0.0, 1.0, tau, y).unwrap(),
                ForwardPde::Heat,
                &unit,
                None,
                2.0,
                g,
            )
        })
        .unwrap();
        for order in observed_orders(&reports) {
            assert!(order > 1.8, "{order}");
        }
    }
}
