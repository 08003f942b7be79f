//! Moving boundaries `f` and the derived rates `b = f'`, `β = f'/h²`, `β'`.

use std::fmt;
use std::sync::Arc;

use crate::clock::{ScalarFn, VolatilityClock};
use crate::error::{domain, FptError, Result};

/// Dense polynomial `Σ c_k x^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Self {
        let mut coeffs = coeffs;
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        Self { coeffs }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn derivative(&self) -> Polynomial {
        if self.coeffs.len() <= 1 {
            return Polynomial::new(vec![0.0]);
        }
        Polynomial::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, c)| k as f64 * c)
                .collect(),
        )
    }

    pub fn is_constant(&self) -> bool {
        self.coeffs.iter().skip(1).all(|c| *c == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DerivativeMode {
    #[default]
    Analytic,
    FiniteDifference,
}

#[derive(Clone)]
pub enum BoundaryShape {
    /// `f(t) = p(t)`
    Polynomial(Polynomial),
    /// `f(t) = p(H(t))`, e.g. `a + c·H(t)` for a linear `p`.
    InVariance { poly: Polynomial, clock: VolatilityClock },
    /// `f(t) = g(t)·eᵗ`, the image of an Ornstein–Uhlenbeck level `g`.
    OuTransformed(Polynomial),
    /// User supplied `f`, optionally with `f'`.
    Custom { f: ScalarFn, fprime: Option<ScalarFn> },
}

impl fmt::Debug for BoundaryShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundaryShape::Polynomial(p) => write!(f, "Polynomial({:?})", p.coeffs()),
            BoundaryShape::InVariance { poly, .. } => write!(f, "InVariance({:?})", poly.coeffs()),
            BoundaryShape::OuTransformed(p) => write!(f, "OuTransformed({:?})", p.coeffs()),
            BoundaryShape::Custom { .. } => write!(f, "Custom(..)"),
        }
    }
}

/// A moving boundary. `sign = -1` represents the reflected problem used
/// when the original boundary starts below zero.
#[derive(Clone, Debug)]
pub struct MovingBoundary {
    shape: BoundaryShape,
    sign: f64,
    mode: DerivativeMode,
}

const FD_STEP_FIRST: f64 = 7.4e-4; // ≈ ε^{1/5}, for the fourth-order first derivative stencil
const FD_STEP_SECOND: f64 = 2.5e-3; // ≈ ε^{1/6}, for the fourth-order second derivative stencil

impl MovingBoundary {
    pub fn new(shape: BoundaryShape) -> Self {
        let mode = match shape {
            BoundaryShape::Custom { .. } => DerivativeMode::FiniteDifference,
            _ => DerivativeMode::Analytic,
        };
        Self { shape, sign: 1.0, mode }
    }

    pub fn constant(a: f64) -> Self {
        Self::polynomial(vec![a])
    }

    pub fn linear(a: f64, c: f64) -> Self {
        Self::polynomial(vec![a, c])
    }

    pub fn quadratic(a: f64, b: f64, c: f64) -> Self {
        Self::polynomial(vec![a, b, c])
    }

    pub fn polynomial(coeffs: Vec<f64>) -> Self {
        Self::new(BoundaryShape::Polynomial(Polynomial::new(coeffs)))
    }

    /// `f(t) = a + c·H(t)`; `β ≡ c` by construction.
    pub fn linear_in_variance(a: f64, c: f64, clock: &VolatilityClock) -> Self {
        Self::polynomial_in_variance(vec![a, c], clock)
    }

    pub fn polynomial_in_variance(coeffs: Vec<f64>, clock: &VolatilityClock) -> Self {
        Self::new(BoundaryShape::InVariance {
            poly: Polynomial::new(coeffs),
            clock: clock.clone(),
        })
    }

    pub fn ou_transformed(g: Vec<f64>) -> Self {
        Self::new(BoundaryShape::OuTransformed(Polynomial::new(g)))
    }

    pub fn custom(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(BoundaryShape::Custom { f: Arc::new(f), fprime: None })
    }

    pub fn custom_with_derivative(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        fprime: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self::new(BoundaryShape::Custom {
            f: Arc::new(f),
            fprime: Some(Arc::new(fprime)),
        })
    }

    pub fn with_mode(mut self, mode: DerivativeMode) -> Self {
        self.mode = match self.shape {
            BoundaryShape::Custom { .. } => DerivativeMode::FiniteDifference,
            _ => mode,
        };
        self
    }

    pub fn mode(&self) -> DerivativeMode {
        self.mode
    }

    pub fn shape(&self) -> &BoundaryShape {
        &self.shape
    }

    pub fn is_negated(&self) -> bool {
        self.sign < 0.0
    }

    /// Maps a boundary starting below zero onto the mirrored problem
    /// `(−M, −f)`. Returns the boundary to use and whether it was mirrored.
    pub fn normalized(&self) -> Result<(MovingBoundary, bool)> {
        let a = self.f(0.0);
        if !a.is_finite() || a == 0.0 {
            return Err(FptError::UnsupportedStart(a));
        }
        if a > 0.0 {
            return Ok((self.clone(), false));
        }
        let mut flipped = self.clone();
        flipped.sign = -self.sign;
        Ok((flipped, true))
    }

    /// Level `a = f(0)`.
    pub fn level(&self) -> f64 {
        self.f(0.0)
    }

    fn raw_f(&self, u: f64) -> f64 {
        match &self.shape {
            BoundaryShape::Polynomial(p) => p.eval(u),
            BoundaryShape::InVariance { poly, clock } => poly.eval(clock.cumulative_unchecked(u)),
            BoundaryShape::OuTransformed(g) => g.eval(u) * u.exp(),
            BoundaryShape::Custom { f, .. } => f(u),
        }
    }

    pub fn f(&self, u: f64) -> f64 {
        self.sign * self.raw_f(u)
    }

    /// `b(u) = f'(u)`.
    pub fn fprime(&self, u: f64) -> f64 {
        let raw = match &self.shape {
            BoundaryShape::Polynomial(p) => p.derivative().eval(u),
            BoundaryShape::InVariance { poly, clock } => {
                poly.derivative().eval(clock.cumulative_unchecked(u)) * clock.h2(u)
            }
            BoundaryShape::OuTransformed(g) => (g.eval(u) + g.derivative().eval(u)) * u.exp(),
            BoundaryShape::Custom { fprime: Some(d), .. } => d(u),
            BoundaryShape::Custom { f, fprime: None } => fd_first(|x| f(x), u, FD_STEP_FIRST),
        };
        self.sign * raw
    }

    /// `f''(u)`.
    pub fn fsecond(&self, u: f64) -> f64 {
        let raw = match &self.shape {
            BoundaryShape::Polynomial(p) => p.derivative().derivative().eval(u),
            BoundaryShape::InVariance { poly, clock } => {
                let big_h = clock.cumulative_unchecked(u);
                let h2 = clock.h2(u);
                poly.derivative().derivative().eval(big_h) * h2 * h2
                    + poly.derivative().eval(big_h) * clock.h2_prime(u)
            }
            BoundaryShape::OuTransformed(g) => {
                let d = g.derivative();
                (g.eval(u) + 2.0 * d.eval(u) + d.derivative().eval(u)) * u.exp()
            }
            BoundaryShape::Custom { fprime: Some(d), .. } => fd_first(|x| d(x), u, FD_STEP_FIRST),
            BoundaryShape::Custom { f, fprime: None } => fd_second(|x| f(x), u, FD_STEP_SECOND),
        };
        self.sign * raw
    }

    /// `β(u) = f'(u)/h²(u)`.
    pub fn beta(&self, clock: &VolatilityClock, u: f64) -> Result<f64> {
        if u < 0.0 {
            return domain(format!("beta needs u >= 0, got {u}"));
        }
        let h2 = clock.h2(u);
        if !(h2 > 0.0) {
            return Err(FptError::SingularClock(u));
        }
        Ok(self.fprime(u) / h2)
    }

    /// `β'(u)`: analytic in [`DerivativeMode::Analytic`], otherwise a central
    /// difference of `β` with step `ε^{1/3}·max(1, |u|)` (one-sided near 0).
    pub fn beta_prime(&self, clock: &VolatilityClock, u: f64) -> Result<f64> {
        if u < 0.0 {
            return domain(format!("beta_prime needs u >= 0, got {u}"));
        }
        let h2 = clock.h2(u);
        if !(h2 > 0.0) {
            return Err(FptError::SingularClock(u));
        }
        match self.mode {
            DerivativeMode::Analytic => {
                let b = self.fprime(u);
                let db = self.fsecond(u);
                Ok((db * h2 - b * clock.h2_prime(u)) / (h2 * h2))
            }
            DerivativeMode::FiniteDifference => {
                let beta = |x: f64| self.fprime(x) / clock.h2(x);
                let step = f64::EPSILON.cbrt() * u.abs().max(1.0);
                if u >= step {
                    Ok((beta(u + step) - beta(u - step)) / (2.0 * step))
                } else {
                    Ok((-3.0 * beta(u) + 4.0 * beta(u + step) - beta(u + 2.0 * step)) / (2.0 * step))
                }
            }
        }
    }

    /// Smoothness and hypothesis checks on `[0, horizon]`.
    pub fn check_smoothness(&self, clock: &VolatilityClock, horizon: f64) -> Result<SmoothnessReport> {
        let n = 200;
        let mut f_c2 = true;
        let mut beta_c1 = true;
        let mut f_over_h_c2 = true;
        let mut min_beta_prime = f64::INFINITY;
        for i in 0..=n {
            let u = horizon * i as f64 / n as f64;
            let fp = self.fprime(u);
            let fp_fd = fd_first_one_sided(|x| self.f(x), u, FD_STEP_FIRST);
            if !close(fp, fp_fd, 1e-6) {
                f_c2 = false;
            }
            let f2 = self.fsecond(u);
            let f2_fd = fd_first_one_sided(|x| self.fprime(x), u, FD_STEP_FIRST);
            if !close(f2, f2_fd, 1e-6) || !f2.is_finite() {
                f_c2 = false;
            }
            let bp = self.beta_prime(clock, u)?;
            let bp_fd = fd_first_one_sided(|x| self.fprime(x) / clock.h2(x), u, FD_STEP_FIRST);
            if !close(bp, bp_fd, 1e-6) || !bp.is_finite() {
                beta_c1 = false;
            }
            let g2 = fd_second_one_sided(|x| self.f(x) / clock.h(x), u, FD_STEP_SECOND);
            let g2_half = fd_second_one_sided(|x| self.f(x) / clock.h(x), u, 0.5 * FD_STEP_SECOND);
            if !g2.is_finite() || !close(g2, g2_half, 1e-4) {
                f_over_h_c2 = false;
            }
            min_beta_prime = min_beta_prime.min(bp);
        }
        Ok(SmoothnessReport {
            f_c2,
            beta_c1,
            f_over_h_c2,
            beta_prime_nonnegative: min_beta_prime >= -1e-12,
            min_beta_prime,
        })
    }
}

/// Outcome of [`MovingBoundary::check_smoothness`]. Both the `f′/h ∈ C²`
/// style check (through `β ∈ C¹`) and the `f/h ∈ C²` check are recorded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothnessReport {
    pub f_c2: bool,
    pub beta_c1: bool,
    pub f_over_h_c2: bool,
    pub beta_prime_nonnegative: bool,
    pub min_beta_prime: f64,
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

fn fd_first(f: impl Fn(f64) -> f64, u: f64, step: f64) -> f64 {
    let h = step * u.abs().max(1.0);
    (f(u - 2.0 * h) - 8.0 * f(u - h) + 8.0 * f(u + h) - f(u + 2.0 * h)) / (12.0 * h)
}

fn fd_second(f: impl Fn(f64) -> f64, u: f64, step: f64) -> f64 {
    let h = step * u.abs().max(1.0);
    (-f(u - 2.0 * h) + 16.0 * f(u - h) - 30.0 * f(u) + 16.0 * f(u + h) - f(u + 2.0 * h)) / (12.0 * h * h)
}

fn fd_first_one_sided(f: impl Fn(f64) -> f64, u: f64, step: f64) -> f64 {
    let h = step * u.abs().max(1.0);
    if u >= 2.0 * h {
        fd_first(f, u, step)
    } else {
        (-25.0 * f(u) + 48.0 * f(u + h) - 36.0 * f(u + 2.0 * h) + 16.0 * f(u + 3.0 * h)
            - 3.0 * f(u + 4.0 * h))
            / (12.0 * h)
    }
}

fn fd_second_one_sided(f: impl Fn(f64) -> f64, u: f64, step: f64) -> f64 {
    let h = step * u.abs().max(1.0);
    if u >= 2.0 * h {
        fd_second(f, u, step)
    } else {
        (45.0 * f(u) - 154.0 * f(u + h) + 214.0 * f(u + 2.0 * h) - 156.0 * f(u + 3.0 * h)
            + 61.0 * f(u + 4.0 * h)
            - 10.0 * f(u + 5.0 * h))
            / (12.0 * h * h)
    }
}

/// Maps the Ornstein–Uhlenbeck first-passage problem
/// `inf{t : X_t = g(t)}`, `dX = −X dt + dB`, `X₀ = 0`, onto a martingale
/// problem with clock `h(u) = e^u` and boundary `f(t) = g(t)eᵗ`.
pub fn ou_to_martingale(g: &Polynomial, horizon: f64) -> Result<(VolatilityClock, MovingBoundary)> {
    let g0 = g.eval(0.0);
    if !(g0 > 0.0) {
        return Err(FptError::UnsupportedStart(g0));
    }
    if !(horizon > 0.0) {
        return domain(format!("horizon must be positive, got {horizon}"));
    }
    let clock = VolatilityClock::exponential(1.0)?;
    clock.validate(horizon)?;
    Ok((clock, MovingBoundary::ou_transformed(g.coeffs().to_vec())))
}
