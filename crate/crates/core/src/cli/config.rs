//! TOML run configuration. Every section is optional and unknown keys are
//! rejected, so a config file is a complete record of a run.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::boundary::{ou_to_martingale, DerivativeMode, MovingBoundary, Polynomial};
use crate::clock::VolatilityClock;
use crate::gauge::GaugeAnchors;
use crate::propagator::PropagatorConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub clock: ClockConfig,
    #[serde(default)]
    pub boundary: BoundaryConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub propagator: PropagatorSection,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub gauge: GaugeConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClockConfig {
    #[default]
    Unit,
    Constant { sigma: f64 },
    Exponential { lambda: f64 },
    Power { sigma: f64, exponent: f64 },
    /// Knots `u_i` and volatilities `h(u_i)`.
    Tabulated { knots: Vec<f64>, h: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    Constant,
    Linear,
    Quadratic,
    Polynomial,
    LinearInVariance,
    PolynomialInVariance,
    /// Level `g(t)` of the process `dX = −X dt + dB` started at 0, mapped to
    /// a martingale problem with `h(u) = eᵘ`.
    Ou,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativesConfig {
    #[default]
    Analytic,
    FiniteDifference,
}

/// Coefficients are in ascending powers of `t` (or of `H(t)` for the
/// `*_in_variance` kinds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    pub kind: BoundaryKind,
    pub coefficients: Vec<f64>,
    #[serde(default)]
    pub derivatives: DerivativesConfig,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        Self {
            kind: BoundaryKind::Constant,
            coefficients: vec![1.0],
            derivatives: DerivativesConfig::Analytic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    #[default]
    Uniform,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub s_min: f64,
    pub s_max: f64,
    pub n: usize,
    pub spacing: Spacing,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            s_min: 0.01,
            s_max: 1.0,
            n: 100,
            spacing: Spacing::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub paths: usize,
    /// Time steps of the first-passage simulation over `[0, grid.s_max]`.
    pub steps: usize,
    pub seed: u64,
    /// Steps of the bridge-expectation simulation; defaults to `steps`.
    pub bridge_steps: Option<usize>,
    /// Times at which the bridge expectation is compared; defaults to
    /// `[grid.s_max]`.
    pub bridge_s: Option<Vec<f64>>,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            paths: 100_000,
            steps: 1000,
            seed: 1,
            bridge_steps: None,
            bridge_s: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorsConfig {
    #[default]
    Mirrored,
    TerminalInitial,
}

impl From<AnchorsConfig> for GaugeAnchors {
    fn from(a: AnchorsConfig) -> Self {
        match a {
            AnchorsConfig::Mirrored => GaugeAnchors::Mirrored,
            AnchorsConfig::TerminalInitial => GaugeAnchors::TERMINAL_INITIAL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropagatorSection {
    pub delta_frac: f64,
    pub richardson: bool,
    pub b_max_sigmas: f64,
    pub anchors: AnchorsConfig,
}

impl Default for PropagatorSection {
    fn default() -> Self {
        let d = PropagatorConfig::default();
        Self {
            delta_frac: d.delta_frac,
            richardson: d.richardson,
            b_max_sigmas: d.b_max_sigmas,
            anchors: AnchorsConfig::Mirrored,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Standard output when absent. Not echoed, so reports written to
    /// different files can be compared byte for byte.
    #[serde(skip_serializing)]
    pub path: Option<PathBuf>,
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelName {
    Free,
    #[default]
    Image,
    Bridge,
    Passage,
    Schrodinger,
    SchrodingerFree,
}

/// Grid dump of a two-point kernel `k(t, x; tau, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    pub name: KernelName,
    pub t: f64,
    pub tau: f64,
    /// Terminal time of the bridge and of the gauge functions.
    pub s: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    pub y_min: f64,
    pub y_max: f64,
    pub ny: usize,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            name: KernelName::Image,
            t: 0.0,
            tau: 0.5,
            s: 1.0,
            x_min: 0.1,
            x_max: 2.0,
            nx: 20,
            y_min: 0.1,
            y_max: 2.0,
            ny: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaugeConfig {
    pub s: f64,
    pub n: usize,
    pub anchors: AnchorsConfig,
}

impl Default for GaugeConfig {
    fn default() -> Self {
        Self {
            s: 1.0,
            n: 101,
            anchors: AnchorsConfig::TerminalInitial,
        }
    }
}

/// The validated objects a config describes.
#[derive(Debug, Clone)]
pub struct Problem {
    pub clock: VolatilityClock,
    pub boundary: MovingBoundary,
    /// Level `g` when the problem came from an OU config.
    pub ou_level: Option<Polynomial>,
    pub grid: Vec<f64>,
    pub propagator: PropagatorConfig,
}

fn need(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn build_clock(&self) -> Result<VolatilityClock, String> {
        let clock = match &self.clock {
            ClockConfig::Unit => Ok(VolatilityClock::unit()),
            ClockConfig::Constant { sigma } => VolatilityClock::constant(*sigma),
            ClockConfig::Exponential { lambda } => VolatilityClock::exponential(*lambda),
            ClockConfig::Power { sigma, exponent } => VolatilityClock::power(*sigma, *exponent),
            ClockConfig::Tabulated { knots, h } => VolatilityClock::tabulated(knots.clone(), h.clone()),
        };
        clock.map_err(|e| format!("[clock]: {e}"))
    }

    pub fn build_grid(&self) -> Result<Vec<f64>, String> {
        let g = &self.grid;
        need(g.n >= 1, "[grid]: n must be at least 1")?;
        need(
            g.s_min.is_finite() && g.s_max.is_finite() && g.s_min > 0.0 && g.s_max >= g.s_min,
            format!("[grid]: need 0 < s_min <= s_max, got ({}, {})", g.s_min, g.s_max),
        )?;
        need(g.n == 1 || g.s_max > g.s_min, "[grid]: s_max must exceed s_min when n > 1")?;
        if g.n == 1 {
            return Ok(vec![g.s_max]);
        }
        let last = (g.n - 1) as f64;
        Ok((0..g.n)
            .map(|i| {
                let w = i as f64 / last;
                match g.spacing {
                    Spacing::Uniform => g.s_min + (g.s_max - g.s_min) * w,
                    Spacing::Log => (g.s_min.ln() + (g.s_max / g.s_min).ln() * w).exp(),
                }
            })
            .collect())
    }

    pub fn propagator_config(&self) -> Result<PropagatorConfig, String> {
        let p = &self.propagator;
        let cfg = PropagatorConfig {
            delta_frac: p.delta_frac,
            richardson: p.richardson,
            b_max_sigmas: p.b_max_sigmas,
            anchors: p.anchors.into(),
            ..PropagatorConfig::default()
        };
        cfg.validate().map_err(|e| format!("[propagator]: {e}"))?;
        Ok(cfg)
    }

    /// Builds and validates the clock, boundary, grid and propagator.
    pub fn problem(&self) -> Result<Problem, String> {
        let grid = self.build_grid()?;
        let propagator = self.propagator_config()?;
        let b = &self.boundary;
        let c = &b.coefficients;
        let arity = |n: usize| need(c.len() == n, format!("[boundary]: {:?} takes {n} coefficients, got {}", b.kind, c.len()));
        need(!c.is_empty(), "[boundary]: coefficients must not be empty")?;
        need(c.iter().all(|v| v.is_finite()), "[boundary]: coefficients must be finite")?;
        let horizon = grid[grid.len() - 1];
        let (clock, boundary, ou_level) = if b.kind == BoundaryKind::Ou {
            need(
                self.clock == ClockConfig::Unit,
                "[clock]: an ou boundary fixes the clock to h(u) = e^u; omit the [clock] section",
            )?;
            let g = Polynomial::new(c.clone());
            let (clock, f) = ou_to_martingale(&g, horizon).map_err(|e| format!("[boundary]: {e}"))?;
            (clock, f, Some(g))
        } else {
            let clock = self.build_clock()?;
            let f = match b.kind {
                BoundaryKind::Constant => arity(1).map(|_| MovingBoundary::constant(c[0]))?,
                BoundaryKind::Linear => arity(2).map(|_| MovingBoundary::linear(c[0], c[1]))?,
                BoundaryKind::Quadratic => arity(3).map(|_| MovingBoundary::quadratic(c[0], c[1], c[2]))?,
                BoundaryKind::Polynomial => MovingBoundary::polynomial(c.clone()),
                BoundaryKind::LinearInVariance => arity(2).map(|_| MovingBoundary::linear_in_variance(c[0], c[1], &clock))?,
                BoundaryKind::PolynomialInVariance => MovingBoundary::polynomial_in_variance(c.clone(), &clock),
                BoundaryKind::Ou => unreachable!("handled above"),
            };
            (clock, f, None)
        };
        clock.validate(horizon).map_err(|e| format!("[clock]: {e}"))?;
        let mode = match b.derivatives {
            DerivativesConfig::Analytic => DerivativeMode::Analytic,
            DerivativesConfig::FiniteDifference => DerivativeMode::FiniteDifference,
        };
        let boundary = boundary.with_mode(mode);
        need(boundary.level() != 0.0, "[boundary]: f(0) must be nonzero")?;
        Ok(Problem {
            clock,
            boundary,
            ou_level,
            grid,
            propagator,
        })
    }
}
