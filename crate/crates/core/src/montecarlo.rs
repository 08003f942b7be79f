//! Monte Carlo oracles: first passage of `M` across `f`, exact and Euler
//! samplers for the conditioned process `Ỹ`, and Kolmogorov–Smirnov
//! distances.
//!
//! Every path draws from its own ChaCha8 stream keyed by `(seed, path)`,
//! and reductions run over index-ordered buffers, so results are identical
//! for any number of threads.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::boundary::MovingBoundary;
use crate::clock::VolatilityClock;
use crate::error::{domain, FptError, Result};
use crate::numerics::quadrature::pairwise_sum;

/// Proposals tried by the Euler sampler before giving up on a step.
pub const MAX_REJECTIONS: usize = 100;

fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Mean and standard error with pairwise summation.
fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = pairwise_sum(values) / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub extras: BTreeMap<String, f64>,
}

/// Hitting times of paths that crossed before the horizon, sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct FptSample {
    pub times: Vec<f64>,
    pub n_paths: usize,
    pub n_censored: usize,
    pub horizon: f64,
}

impl FptSample {
    fn from_hits(hits: Vec<Option<f64>>, horizon: f64) -> Self {
        let n_paths = hits.len();
        let mut times: Vec<f64> = hits.into_iter().flatten().collect();
        times.sort_by(f64::total_cmp);
        Self {
            n_censored: n_paths - times.len(),
            times,
            n_paths,
            horizon,
        }
    }

    /// Fraction of all paths that crossed by `t`.
    pub fn empirical_cdf(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&x| x <= t.min(self.horizon));
        k as f64 / self.n_paths as f64
    }

    /// Binomial standard error of [`Self::empirical_cdf`].
    pub fn cdf_stderr(&self, t: f64) -> f64 {
        let p = self.empirical_cdf(t);
        (p * (1.0 - p) / self.n_paths as f64).sqrt()
    }
}

fn check_counts(n_paths: usize, n_steps: usize) -> Result<()> {
    if n_paths < 1 {
        return domain("need at least one path");
    }
    if n_steps < 2 {
        return domain("need at least two steps");
    }
    Ok(())
}

/// Brownian-bridge probability that a path with endpoint gaps `g0, g1 > 0`
/// below a linear boundary touched it within a step of variance `var`.
fn bridge_crossing_probability(g0: f64, g1: f64, var: f64) -> f64 {
    let x = 2.0 * g0 * g1 / var;
    if x > 745.0 {
        0.0
    } else {
        (-x).exp()
    }
}

/// Step-level crossing rule shared by the martingale and OU simulators.
/// Returns the fraction of the step at which the crossing is placed.
#[inline]
fn step_crossing(g0: f64, g1: f64, var: f64, correction: bool, rng: &mut ChaCha8Rng) -> Option<f64> {
    if g1 <= 0.0 {
        return Some(g0 / (g0 - g1));
    }
    if correction {
        let p = bridge_crossing_probability(g0, g1, var);
        if p > 0.0 && rng.random::<f64>() < p {
            return Some(g0 / (g0 + g1));
        }
    }
    None
}

/// First passage of `M = ∫h dB` across `f` on `[0, horizon]`, with exact
/// Gaussian increments and the Brownian-bridge crossing correction within
/// each step.
pub fn simulate_martingale_fpt(
    boundary: &MovingBoundary,
    clock: &VolatilityClock,
    n_paths: usize,
    n_steps: usize,
    horizon: f64,
    seed: u64,
) -> Result<FptSample> {
    simulate_martingale_fpt_with(boundary, clock, n_paths, n_steps, horizon, seed, true)
}

/// As [`simulate_martingale_fpt`], optionally without the crossing correction.
pub fn simulate_martingale_fpt_with(
    boundary: &MovingBoundary,
    clock: &VolatilityClock,
    n_paths: usize,
    n_steps: usize,
    horizon: f64,
    seed: u64,
    correction: bool,
) -> Result<FptSample> {
    check_counts(n_paths, n_steps)?;
    if !(horizon > 0.0) || !horizon.is_finite() {
        return domain(format!("horizon must be positive, got {horizon}"));
    }
    let a = boundary.f(0.0);
    if !(a > 0.0) {
        return Err(FptError::UnsupportedStart(a));
    }
    let times: Vec<f64> = (0..=n_steps).map(|i| horizon * i as f64 / n_steps as f64).collect();
    let levels: Vec<f64> = times.iter().map(|&t| boundary.f(t)).collect();
    let vars: Vec<f64> = times.windows(2).map(|w| clock.variance_between(w[0], w[1])).collect::<Result<_>>()?;
    let sds: Vec<f64> = vars.iter().map(|v| v.sqrt()).collect();
    let hits: Vec<Option<f64>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(seed, p);
            let mut m = 0.0;
            for i in 0..n_steps {
                let next = m + sds[i] * normal(&mut rng);
                let g0 = levels[i] - m;
                let g1 = levels[i + 1] - next;
                if let Some(w) = step_crossing(g0, g1, vars[i], correction, &mut rng) {
                    return Some(times[i] + w * (times[i + 1] - times[i]));
                }
                m = next;
            }
            None
        })
        .collect();
    Ok(FptSample::from_hits(hits, horizon))
}

/// First passage of the OU process `dX = −X dt + dB`, `X₀ = x0`, across the
/// level `g(t)` by Euler steps of size `dt`, with the same crossing
/// correction as the martingale simulator.
pub fn simulate_ou_fpt(
    g: impl Fn(f64) -> f64 + Sync,
    x0: f64,
    n_paths: usize,
    dt: f64,
    horizon: f64,
    seed: u64,
) -> Result<FptSample> {
    if !(dt > 0.0 && horizon > dt) {
        return domain(format!("OU simulation needs 0 < dt < horizon, got ({dt}, {horizon})"));
    }
    let n_steps = (horizon / dt).round() as usize;
    check_counts(n_paths, n_steps)?;
    if !(g(0.0) > x0) {
        return Err(FptError::UnsupportedStart(g(0.0) - x0));
    }
    let step = horizon / n_steps as f64;
    let levels: Vec<f64> = (0..=n_steps).map(|i| g(step * i as f64)).collect();
    let sd = step.sqrt();
    let hits: Vec<Option<f64>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(seed, p);
            let mut x = x0;
            for i in 0..n_steps {
                let next = x - x * step + sd * normal(&mut rng);
                if let Some(w) = step_crossing(levels[i] - x, levels[i + 1] - next, step, true, &mut rng) {
                    return Some(step * (i as f64 + w));
                }
                x = next;
            }
            None
        })
        .collect();
    Ok(FptSample::from_hits(hits, horizon))
}

/// Uniform time grid on `[0, s]` with the requested times inserted.
fn bridge_grid(s: f64, n_steps: usize, record: &[f64]) -> Result<Vec<f64>> {
    if let Some(&bad) = record.iter().find(|&&r| !(0.0..=s).contains(&r)) {
        return domain(format!("record time {bad} outside [0, {s}]"));
    }
    let mut grid: Vec<f64> = (0..=n_steps).map(|i| s * i as f64 / n_steps as f64).collect();
    grid.extend_from_slice(record);
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * s);
    *grid.last_mut().expect("non-empty") = s;
    Ok(grid)
}

/// Values of sampled paths at the recorded times; `values[k][p]` is path
/// `p` at `times[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeEnsemble {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub n_paths: usize,
}

impl BridgeEnsemble {
    fn assemble(record: &[f64], rows: Vec<Vec<f64>>) -> Self {
        let n_paths = rows.len();
        let mut values = vec![Vec::with_capacity(n_paths); record.len()];
        for row in rows {
            for (k, v) in row.into_iter().enumerate() {
                values[k].push(v);
            }
        }
        Self {
            times: record.to_vec(),
            values,
            n_paths,
        }
    }

    /// Sorted copy of the marginal at `times[k]`.
    pub fn sorted_marginal(&self, k: usize) -> Vec<f64> {
        let mut v = self.values[k].clone();
        v.sort_by(f64::total_cmp);
        v
    }
}

fn record_slots(grid: &[f64], record: &[f64]) -> Vec<usize> {
    record
        .iter()
        .map(|&r| {
            grid.iter()
                .enumerate()
                .min_by(|a, b| (a.1 - r).abs().total_cmp(&(b.1 - r).abs()))
                .map(|(i, _)| i)
                .expect("non-empty grid")
        })
        .collect()
}

/// Sequential sampler of the 3-d Brownian bridge from `(a,0,0)` to the
/// origin on the clock `θ = H(t)`; `Ỹ` is its norm.
struct ExactBridge<'a> {
    theta: &'a [f64],
    end: f64,
}

impl ExactBridge<'_> {
    /// Calls `visit(i, y)` at every grid index with the path value.
    fn run(&self, a: f64, rng: &mut ChaCha8Rng, mut visit: impl FnMut(usize, f64)) {
        let mut w = [a, 0.0, 0.0];
        visit(0, a);
        let last = self.theta.len() - 1;
        for i in 0..last {
            if i + 1 == last {
                visit(last, 0.0);
                break;
            }
            let (t0, t1) = (self.theta[i], self.theta[i + 1]);
            let rest = self.end - t0;
            let frac = (t1 - t0) / rest;
            let sd = ((t1 - t0) * (self.end - t1) / rest).max(0.0).sqrt();
            for c in &mut w {
                *c += -frac * *c + sd * normal(rng);
            }
            visit(i + 1, (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt());
        }
    }
}

fn check_bridge(a: f64, s: f64) -> Result<()> {
    if !(a > 0.0) || !a.is_finite() {
        return domain(format!("bridge start must be positive, got {a}"));
    }
    if !(s > 0.0) || !s.is_finite() {
        return domain(format!("bridge terminal time must be positive, got {s}"));
    }
    Ok(())
}

/// Exact-in-law samples of `Ỹ` from `a` at 0 to 0 at `s`, recorded at
/// `record` (times in `[0, s]`).
pub fn simulate_bridge_exact(
    clock: &VolatilityClock,
    a: f64,
    s: f64,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
    record: &[f64],
) -> Result<BridgeEnsemble> {
    check_bridge(a, s)?;
    check_counts(n_paths, n_steps)?;
    let grid = bridge_grid(s, n_steps, record)?;
    let theta: Vec<f64> = grid.iter().map(|&t| clock.cumulative_variance(t)).collect::<Result<_>>()?;
    let sampler = ExactBridge {
        end: theta[theta.len() - 1],
        theta: &theta,
    };
    let slots = record_slots(&grid, record);
    let rows: Vec<Vec<f64>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(seed, p);
            let mut row = vec![0.0; slots.len()];
            sampler.run(a, &mut rng, |i, y| {
                for (k, &slot) in slots.iter().enumerate() {
                    if slot == i {
                        row[k] = y;
                    }
                }
            });
            row
        })
        .collect();
    Ok(BridgeEnsemble::assemble(record, rows))
}

/// Grid for the Euler sampler: uniform on `[0, s/2]`, then graded towards
/// `s` as `s − (s/2)(1 − k/m)²`.
fn euler_grid(s: f64, n_steps: usize, record: &[f64]) -> Result<Vec<f64>> {
    let half = n_steps / 2;
    let m = n_steps - half;
    let mut grid: Vec<f64> = (0..=half).map(|i| 0.5 * s * i as f64 / half as f64).collect();
    for k in 1..=m {
        let r = 1.0 - k as f64 / m as f64;
        grid.push(s - 0.5 * s * r * r);
    }
    if let Some(&bad) = record.iter().find(|&&r| !(0.0..=s).contains(&r)) {
        return domain(format!("record time {bad} outside [0, {s}]"));
    }
    grid.extend_from_slice(record);
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * s);
    *grid.last_mut().expect("non-empty") = s;
    Ok(grid)
}

/// Euler–Maruyama on `dỸ = h dW + h²(1/Ỹ − Ỹ/∫ₜˢh²) dt`. Proposals at or
/// below zero are redrawn; the terminal value is set to 0.
pub fn simulate_bridge_euler(
    clock: &VolatilityClock,
    a: f64,
    s: f64,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
    record: &[f64],
) -> Result<BridgeEnsemble> {
    check_bridge(a, s)?;
    check_counts(n_paths, n_steps)?;
    let grid = euler_grid(s, n_steps, record)?;
    let theta: Vec<f64> = grid.iter().map(|&t| clock.cumulative_variance(t)).collect::<Result<_>>()?;
    let end = theta[theta.len() - 1];
    let h2: Vec<f64> = grid.iter().map(|&t| clock.h2(t)).collect();
    let slots = record_slots(&grid, record);
    let last = grid.len() - 1;
    let rows: Vec<Result<Vec<f64>>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(seed, p);
            let mut row = vec![0.0; slots.len()];
            let store = |i: usize, y: f64, row: &mut Vec<f64>| {
                for (k, &slot) in slots.iter().enumerate() {
                    if slot == i {
                        row[k] = y;
                    }
                }
            };
            let mut y = a;
            store(0, y, &mut row);
            for i in 0..last - 1 {
                let dt = grid[i + 1] - grid[i];
                let rest = end - theta[i];
                let drift = h2[i] * (1.0 / y - y / rest) * dt;
                let sd = (theta[i + 1] - theta[i]).sqrt();
                let mut next = None;
                for _ in 0..MAX_REJECTIONS {
                    let proposal = y + drift + sd * normal(&mut rng);
                    if proposal > 0.0 {
                        next = Some(proposal);
                        break;
                    }
                }
                y = next.ok_or_else(|| {
                    FptError::StepSize(format!("{MAX_REJECTIONS} rejected proposals at t = {}", grid[i]))
                })?;
                store(i + 1, y, &mut row);
            }
            store(last, 0.0, &mut row);
            Ok(row)
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(BridgeEnsemble::assemble(record, rows))
}

/// Mean of `exp{−∫₀ˢ β'(u) Ỹ_u du}` over exact bridge paths, with the
/// integral taken by the trapezoidal rule on `n_steps` uniform steps.
pub fn mc_bridge_expectation(
    boundary: &MovingBoundary,
    clock: &VolatilityClock,
    a: f64,
    s: f64,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<McEstimate> {
    check_bridge(a, s)?;
    check_counts(n_paths, n_steps)?;
    let grid = bridge_grid(s, n_steps, &[])?;
    let theta: Vec<f64> = grid.iter().map(|&t| clock.cumulative_variance(t)).collect::<Result<_>>()?;
    let bp: Vec<f64> = grid.iter().map(|&t| boundary.beta_prime(clock, t)).collect::<Result<_>>()?;
    let mut extras = BTreeMap::new();
    extras.insert("n_steps".to_string(), n_steps as f64);
    if bp.iter().all(|&b| b == 0.0) {
        return Ok(McEstimate {
            mean: 1.0,
            stderr: 0.0,
            n_paths,
            seed,
            extras,
        });
    }
    // Trapezoid weights β'(t_i)·w_i.
    let weights: Vec<f64> = (0..grid.len())
        .map(|i| {
            let left = if i > 0 { grid[i] - grid[i - 1] } else { 0.0 };
            let right = if i + 1 < grid.len() { grid[i + 1] - grid[i] } else { 0.0 };
            0.5 * (left + right) * bp[i]
        })
        .collect();
    let sampler = ExactBridge {
        end: theta[theta.len() - 1],
        theta: &theta,
    };
    let values: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(seed, p);
            let mut integral = 0.0;
            sampler.run(a, &mut rng, |i, y| integral += weights[i] * y);
            (-integral).exp()
        })
        .collect();
    let (mean, stderr) = mean_stderr(&values);
    Ok(McEstimate {
        mean,
        stderr,
        n_paths,
        seed,
        extras,
    })
}

/// `sup_t |F_n(t) − F(t)|` over `[0, horizon]`, where `F_n` counts censored
/// paths in the denominator only.
pub fn ks_statistic(sample: &FptSample, analytic_cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if sample.n_paths == 0 {
        return Err(FptError::EmptySample);
    }
    let n = sample.n_paths as f64;
    let mut sup = 0.0f64;
    for (k, &t) in sample.times.iter().enumerate() {
        let f = analytic_cdf(t);
        sup = sup.max((k as f64 / n - f).abs()).max(((k + 1) as f64 / n - f).abs());
    }
    let at_horizon = (sample.times.len() as f64 / n - analytic_cdf(sample.horizon)).abs();
    Ok(sup.max(at_horizon))
}

/// One-sample statistic for sorted, uncensored values.
pub fn ks_one_sample(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(FptError::EmptySample);
    }
    let n = sorted.len() as f64;
    let mut sup = 0.0f64;
    for (k, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        sup = sup.max((k as f64 / n - f).abs()).max(((k + 1) as f64 / n - f).abs());
    }
    Ok(sup)
}

/// Two-sample statistic for sorted values.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(FptError::EmptySample);
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut sup = 0.0f64;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        sup = sup.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(sup)
}

/// Piecewise-linear CDF through tabulated points, starting from `(0, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfTable {
    x: Vec<f64>,
    p: Vec<f64>,
}

impl CdfTable {
    pub fn new(x: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if x.is_empty() || x.len() != p.len() || x.windows(2).any(|w| !(w[1] > w[0])) {
            return domain("cdf table needs matching, strictly increasing abscissae");
        }
        let (mut xs, mut ps) = (Vec::with_capacity(x.len() + 1), Vec::with_capacity(x.len() + 1));
        if x[0] > 0.0 {
            xs.push(0.0);
            ps.push(0.0);
        }
        xs.extend(x);
        ps.extend(p);
        Ok(Self { x: xs, p: ps })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        if t <= self.x[0] {
            return self.p[0];
        }
        if t >= self.x[n - 1] {
            return self.p[n - 1];
        }
        let i = self.x.partition_point(|&v| v <= t) - 1;
        let w = (t - self.x[i]) / (self.x[i + 1] - self.x[i]);
        (1.0 - w) * self.p[i] + w * self.p[i + 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = path_rng(7, 3);
        let mut b = path_rng(7, 3);
        let mut c = path_rng(7, 4);
        let (x, y, z): (f64, f64, f64) = (normal(&mut a), normal(&mut b), normal(&mut c));
        assert_eq!(x, y);
        assert_ne!(x, z);
    }

    #[test]
    fn unreachable_boundary_never_crosses() {
        let s = simulate_martingale_fpt(&MovingBoundary::constant(1e6), &VolatilityClock::unit(), 200, 50, 1.0, 1)
            .unwrap();
        assert_eq!(s.n_censored, 200);
        assert!(s.times.is_empty());
        assert!(simulate_martingale_fpt(&MovingBoundary::constant(-1.0), &VolatilityClock::unit(), 10, 10, 1.0, 1)
            .is_err());
    }

    #[test]
    fn exact_bridge_endpoints() {
        let e = simulate_bridge_exact(&VolatilityClock::unit(), 1.3, 1.0, 500, 100, 9, &[0.0, 0.5, 1.0]).unwrap();
        assert!(e.values[0].iter().all(|&y| y == 1.3));
        assert!(e.values[2].iter().all(|&y| y == 0.0));
        assert!(e.values[1].iter().all(|&y| y > 0.0));
    }

    #[test]
    fn euler_paths_stay_positive() {
        let record: Vec<f64> = (1..10).map(|i| 0.1 * i as f64).collect();
        let e = simulate_bridge_euler(&VolatilityClock::unit(), 1.0, 1.0, 300, 400, 2, &record).unwrap();
        for row in &e.values {
            assert!(row.iter().all(|&y| y > 0.0));
        }
    }

    #[test]
    fn zero_potential_expectation_is_exact() {
        let est = mc_bridge_expectation(&MovingBoundary::linear(1.0, 2.0), &VolatilityClock::unit(), 1.0, 1.0, 100, 10, 3)
            .unwrap();
        assert_eq!(est.mean, 1.0);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn ks_of_identical_samples_is_zero() {
        let v: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert_eq!(ks_two_sample(&v, &v).unwrap(), 0.0);
        let sample = FptSample {
            times: vec![0.1, 0.2, 0.3, 0.4],
            n_paths: 4,
            n_censored: 0,
            horizon: 1.0,
        };
        let own = |t: f64| sample.empirical_cdf(t);
        // The statistic measures the jump size at each atom.
        assert!((ks_statistic(&sample, own).unwrap() - 0.25).abs() < 1e-15);
        assert!(ks_statistic(
            &FptSample {
                times: vec![],
                n_paths: 0,
                n_censored: 0,
                horizon: 1.0
            },
            |_| 0.0
        )
        .is_err());
    }

    #[test]
    fn cdf_table_interpolates() {
        let t = CdfTable::new(vec![1.0, 2.0], vec![0.5, 0.7]).unwrap();
        assert_eq!(t.eval(0.0), 0.0);
        assert!((t.eval(0.5) - 0.25).abs() < 1e-15);
        assert!((t.eval(1.5) - 0.6).abs() < 1e-15);
        assert_eq!(t.eval(3.0), 0.7);
    }
}
