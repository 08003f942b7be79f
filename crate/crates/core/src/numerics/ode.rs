/// Classical fourth-order Runge–Kutta on a uniform grid.
///
/// Returns the grid times and the state at every node, starting with
/// `(t0, y0)`. A negative span integrates backwards.
pub fn rk4<const N: usize, F>(rhs: F, t0: f64, y0: [f64; N], t1: f64, steps: usize) -> (Vec<f64>, Vec<[f64; N]>)
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    assert!(steps >= 1, "rk4 needs at least one step");
    let h = (t1 - t0) / steps as f64;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut y = y0;
    times.push(t0);
    states.push(y);
    for i in 0..steps {
        let t = t0 + h * i as f64;
        let k1 = rhs(t, &y);
        let k2 = rhs(t + 0.5 * h, &axpy(&y, 0.5 * h, &k1));
        let k3 = rhs(t + 0.5 * h, &axpy(&y, 0.5 * h, &k2));
        let k4 = rhs(t + h, &axpy(&y, h, &k3));
        for j in 0..N {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        // Land exactly on the end point.
        let tn = if i + 1 == steps { t1 } else { t0 + h * (i + 1) as f64 };
        times.push(tn);
        states.push(y);
    }
    (times, states)
}

fn axpy<const N: usize>(y: &[f64; N], a: f64, k: &[f64; N]) -> [f64; N] {
    let mut out = *y;
    for j in 0..N {
        out[j] += a * k[j];
    }
    out
}
