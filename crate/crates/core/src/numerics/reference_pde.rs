//! Crank–Nicolson reference solver for the forward Schrödinger equation
//! `ψ_τ = ½h²(τ)ψ_bb − β'(τ) b ψ`, used to cross-check the gauge kernels.

use crate::boundary::MovingBoundary;
use crate::clock::VolatilityClock;
use crate::error::{FptError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PdeDomain {
    /// `[0, L]` with `ψ = 0` at both ends.
    Absorbing { length: f64 },
    /// `[−L, L]` with `ψ = 0` at both ends, far enough out to act as free space.
    Free { half_width: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdeGrid {
    pub domain: PdeDomain,
    /// Number of cells; the grid has `cells + 1` nodes including the ends.
    pub cells: usize,
    pub steps: usize,
}

impl PdeGrid {
    /// The grid with cells and steps multiplied by `2^level`.
    pub fn refined(&self, level: u32) -> Self {
        Self {
            cells: self.cells << level,
            steps: self.steps << level,
            ..*self
        }
    }
}

/// Node positions and values of a solution.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub x: Vec<f64>,
    pub values: Vec<f64>,
}

impl Profile {
    pub fn spacing(&self) -> f64 {
        self.x[1] - self.x[0]
    }

    /// Trapezoidal mass.
    pub fn mass(&self) -> f64 {
        let dx = self.spacing();
        let n = self.values.len();
        dx * (self.values.iter().sum::<f64>() - 0.5 * (self.values[0] + self.values[n - 1]))
    }

    /// Trapezoidal `∫|ψ − g|`.
    pub fn l1_distance(&self, g: impl Fn(f64) -> f64) -> f64 {
        let dx = self.spacing();
        let n = self.values.len();
        let diffs: Vec<f64> = self.x.iter().zip(&self.values).map(|(&x, &v)| (v - g(x)).abs()).collect();
        dx * (diffs.iter().sum::<f64>() - 0.5 * (diffs[0] + diffs[n - 1]))
    }

    /// Linear interpolation between nodes.
    pub fn value_at(&self, x: f64) -> f64 {
        let dx = self.spacing();
        let pos = (x - self.x[0]) / dx;
        if pos <= 0.0 {
            return self.values[0];
        }
        let i = (pos.floor() as usize).min(self.x.len() - 2);
        let w = pos - i as f64;
        (1.0 - w) * self.values[i] + w * self.values[i + 1]
    }
}

/// Solves `(lower, diag, upper)·x = rhs` in place.
fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) -> Result<()> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut denom = diag[0];
    if denom == 0.0 {
        return Err(FptError::Solver("singular tridiagonal system".into()));
    }
    c[0] = upper[0] / denom;
    rhs[0] /= denom;
    for i in 1..n {
        denom = diag[i] - lower[i] * c[i - 1];
        if denom == 0.0 || !denom.is_finite() {
            return Err(FptError::Solver("singular tridiagonal system".into()));
        }
        c[i] = upper[i] / denom;
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
    Ok(())
}

/// Evolves `initial` from `t0` to `t1`. The first two Crank–Nicolson steps
/// are replaced by four implicit Euler half steps to damp the oscillations
/// a sharp initial profile would otherwise excite.
pub fn evolve_reference_pde(
    clock: &VolatilityClock,
    boundary: Option<&MovingBoundary>,
    initial: impl Fn(f64) -> f64,
    t0: f64,
    t1: f64,
    grid: &PdeGrid,
) -> Result<Profile> {
    if !(t1 > t0) || t0 < 0.0 {
        return Err(FptError::Domain(format!("evolution needs 0 <= t0 < t1, got ({t0}, {t1})")));
    }
    if grid.cells < 4 || grid.steps < 2 {
        return Err(FptError::Solver("reference grid needs at least 4 cells and 2 steps".into()));
    }
    let (lo, hi) = match grid.domain {
        PdeDomain::Absorbing { length } => (0.0, length),
        PdeDomain::Free { half_width } => (-half_width, half_width),
    };
    if !(hi > lo) {
        return Err(FptError::Solver("reference domain is empty".into()));
    }
    let n = grid.cells + 1;
    let dx = (hi - lo) / grid.cells as f64;
    let x: Vec<f64> = (0..n).map(|i| lo + dx * i as f64).collect();
    let mut psi: Vec<f64> = x.iter().map(|&b| initial(b)).collect();
    psi[0] = 0.0;
    psi[n - 1] = 0.0;
    let beta_prime = |u: f64| -> Result<f64> {
        match boundary {
            Some(b) => b.beta_prime(clock, u),
            None => Ok(0.0),
        }
    };

    let m = n - 2;
    let (mut lower, mut diag, mut upper, mut rhs) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    // One θ-scheme step of length k from u; the operator is frozen at u + k/2.
    let mut step = |psi: &mut Vec<f64>, u: f64, k: f64, theta: f64| -> Result<()> {
        let mid = u + 0.5 * k;
        let diff = 0.5 * clock.h2(mid) / (dx * dx);
        let bp = beta_prime(mid)?;
        for j in 0..m {
            let i = j + 1;
            let pot = bp * x[i];
            let apply = diff * (psi[i - 1] - 2.0 * psi[i] + psi[i + 1]) - pot * psi[i];
            rhs[j] = psi[i] + (1.0 - theta) * k * apply;
            lower[j] = -theta * k * diff;
            upper[j] = -theta * k * diff;
            diag[j] = 1.0 + theta * k * (2.0 * diff + pot);
        }
        thomas(&lower, &diag, &upper, &mut rhs)?;
        psi[1..=m].copy_from_slice(&rhs);
        Ok(())
    };

    let k = (t1 - t0) / grid.steps as f64;
    let mut u = t0;
    for _ in 0..4 {
        step(&mut psi, u, 0.5 * k, 1.0)?;
        u += 0.5 * k;
    }
    for i in 2..grid.steps {
        let next = if i + 1 == grid.steps { t1 } else { t0 + k * (i + 1) as f64 };
        step(&mut psi, u, next - u, 0.5)?;
        u = next;
    }
    if psi.iter().any(|v| !v.is_finite()) {
        return Err(FptError::Solver("reference evolution produced non-finite values".into()));
    }
    Ok(Profile { x, values: psi })
}
